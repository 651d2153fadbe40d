"""Convergence diagnostics, posterior summaries and model checks."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .likelihood import ErrorModel, PackedDataset, T_DOF

__all__ = [
    "DegenerateChainError",
    "DegenerateChainWarning",
    "ParameterSummary",
    "PosteriorSummary",
    "PPCResult",
    "StudyReport",
    "gelman_rubin",
    "effective_sample_size",
    "nearest_rank_quantile",
    "summarize",
    "posterior_predictive_check",
    "evaluate_against_truth",
]


class DegenerateChainError(ValueError):
    """Chains carry no within-chain variation."""


class DegenerateChainWarning(UserWarning):
    pass


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor (Gelman & Rubin 1992).

    Parameters
    ----------
    chains : array_like, shape (n_chains, n_draws)

    Returns
    -------
    float
        ``sqrt(V / W)`` with ``V = (n-1)/n W + (m+1)/(m n) B``.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 10:
        raise ValueError("need at least 2 chains with 10 draws each")
    m, n = x.shape
    means = x.mean(axis=1)
    within = x.var(axis=1, ddof=1).mean()
    if not within > 0:
        raise DegenerateChainError("zero within-chain variance")
    between = n * means.var(ddof=1)
    pooled = (n - 1) / n * within + (m + 1) / (m * n) * between
    return math.sqrt(pooled / within)


def _autocovariance(x):
    n = x.size
    centred = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centred, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def effective_sample_size(draws) -> float:
    """Effective sample size by Geyer's initial positive sequence estimator.

    Capped at the number of draws.
    """
    x = np.asarray(draws, dtype=float).ravel()
    n = x.size
    if n < 100:
        raise ValueError("need at least 100 draws")
    acov = _autocovariance(x)
    if not acov[0] > 0:
        raise DegenerateChainError("constant chain")
    rho = acov / acov[0]
    # sums of adjacent pairs are positive for reversible chains; stop at the first non-positive one
    n_pairs = (n - 1) // 2
    pair_sums = rho[0:2 * n_pairs:2] + rho[1:2 * n_pairs:2]
    nonpos = np.flatnonzero(pair_sums <= 0)
    cut = nonpos[0] if nonpos.size else n_pairs
    tau = -1.0 + 2.0 * np.sum(pair_sums[:cut])
    return float(min(n, n / tau)) if tau > 0 else float(n)


def nearest_rank_quantile(sorted_draws, p):
    """Element at zero-based index ``round(p (N - 1))`` of pre-sorted draws."""
    n = len(sorted_draws)
    return sorted_draws[int(math.floor(p * (n - 1) + 0.5))]


@dataclass
class ParameterSummary:
    name: str
    mean: float
    sd: float
    interval_68: tuple
    interval_95: tuple
    rhat: float
    ess: float
    degenerate: bool = False


@dataclass
class PosteriorSummary:
    parameters: dict
    n_chains: int
    n_draws: int

    def __getitem__(self, name) -> ParameterSummary:
        return self.parameters[name]

    def rows(self):
        for p in self.parameters.values():
            yield {"parameter": p.name, "mean": p.mean, "sd": p.sd,
                   "q02.5": p.interval_95[0], "q16": p.interval_68[0],
                   "q84": p.interval_68[1], "q97.5": p.interval_95[1],
                   "rhat": p.rhat, "ess": p.ess}


def _summarize_param(name, x):
    m, n = x.shape
    pooled = np.sort(x.ravel())
    if pooled.size == 0:
        raise ValueError(f"no draws for {name}")
    q = lambda p: float(nearest_rank_quantile(pooled, p))  # noqa: E731
    degenerate = False
    rhat = math.nan
    ess = math.nan
    try:
        if m >= 2 and n >= 10:
            rhat = gelman_rubin(x)
    except DegenerateChainError:
        degenerate = True
    if n >= 100:
        try:
            ess = float(min(pooled.size, sum(effective_sample_size(c) for c in x)))
        except DegenerateChainError:
            degenerate = True
    if degenerate:
        warnings.warn(f"parameter {name} has constant chains", DegenerateChainWarning, stacklevel=3)
    sd = float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0
    return ParameterSummary(name, float(x.mean()), sd, (q(0.16), q(0.84)),
                            (q(0.025), q(0.975)), rhat, ess, degenerate)


def summarize(chains) -> PosteriorSummary:
    """Pooled moments, nearest-rank intervals, R-hat and ESS for every parameter.

    ``chains`` is a :class:`~h0meta.mcmc.ChainSet` or a mapping from
    parameter name to an array of shape ``(n_chains, n_draws)``.
    """
    if hasattr(chains, "param_names"):
        arrays = {name: chains.draws(name) for name in chains.param_names}
    else:
        arrays = {k: np.atleast_2d(np.asarray(v, dtype=float)) for k, v in chains.items()}
    if not arrays or any(a.size == 0 for a in arrays.values()):
        raise ValueError("no retained draws to summarize")
    shape = next(iter(arrays.values())).shape
    params = {name: _summarize_param(name, a) for name, a in arrays.items()}
    return PosteriorSummary(params, shape[0], shape[1])


@dataclass
class PPCResult:
    global_p: float
    pair_p: np.ndarray
    t_obs: np.ndarray
    t_rep: np.ndarray
    pair_labels: list
    replicates: np.ndarray | None = None


def posterior_predictive_check(chains, dataset, err=None, rng=None, n_draws=1000,
                               keep_replicates=False) -> PPCResult:
    """Posterior predictive p-values for the Fermat-potential estimates.

    For each of ``min(n_draws, retained)`` evenly spaced posterior draws a
    replicate of every Fermat estimate is simulated with the time delays held
    at their observed values. The discrepancy is the sum of squared
    standardised residuals; per-pair checks use the single residual.
    """
    err = ErrorModel.coerce(err if err is not None else getattr(chains, "error_model", "student_t4"))
    rng = np.random.default_rng(rng)
    data = dataset if isinstance(dataset, PackedDataset) else PackedDataset(dataset)
    lens_ids = tuple(chains.lens_ids)
    if lens_ids != data.lens_ids:
        order = [lens_ids.index(i) for i in data.lens_ids]
    else:
        order = slice(None)
    h0 = np.concatenate([c.h0 for c in chains.chains])
    om = np.concatenate([c.omega_m for c in chains.chains])
    kappa = np.concatenate([c.kappa for c in chains.chains])[:, order]
    total = h0.size
    if total < 100:
        raise ValueError("need at least 100 retained draws")
    m = min(n_draws, total)
    idx = np.unique(np.linspace(0, total - 1, m).round().astype(int))

    labels = [f"{lens.lens_id}:{p.pair_label}" for lens in data.lenses for p in lens.pairs]
    d_obs = np.empty((idx.size, data.n_pairs))
    d_rep = np.empty((idx.size, data.n_pairs))
    reps = np.empty((idx.size, data.n_pairs)) if keep_replicates else None
    for row, i in enumerate(idx):
        ddt = data.ddt_times_h0(om[i])
        loc, scale = data.location_scale(h0[i], kappa[i], ddt)
        if err is ErrorModel.STUDENT_T4:
            noise = rng.standard_t(T_DOF, size=data.n_pairs)
        else:
            noise = rng.standard_normal(data.n_pairs)
        phi_rep = loc + scale * noise
        d_obs[row] = ((data.phi_hat - loc) / scale) ** 2
        d_rep[row] = noise ** 2
        if reps is not None:
            reps[row] = phi_rep
    t_obs = d_obs.sum(axis=1)
    t_rep = d_rep.sum(axis=1)
    return PPCResult(global_p=float(np.mean(t_rep >= t_obs)),
                     pair_p=np.mean(d_rep >= d_obs, axis=0),
                     t_obs=t_obs, t_rep=t_rep, pair_labels=labels, replicates=reps)


@dataclass
class StudyReport:
    """Accuracy of an H0 estimate against a known truth (percentages are signed where noted)."""

    h0_true: float
    h0_mean: float
    h0_sd: float
    bias_pct: float
    cv_pct: float
    rmse: float

    @property
    def abs_bias_pct(self):
        return abs(self.bias_pct)


def evaluate_against_truth(h0_mean, h0_sd, h0_true) -> StudyReport:
    if not h0_true > 0:
        raise ValueError("h0_true must be positive")
    bias = 100.0 * (h0_mean - h0_true) / h0_true
    cv = 100.0 * h0_sd / h0_true
    rmse = math.hypot(h0_mean - h0_true, h0_sd)
    return StudyReport(h0_true, h0_mean, h0_sd, bias, cv, rmse)
