"""Metropolis-within-Gibbs sampling of the joint posterior.

One sweep updates H0 with a random-walk (or repelling-attracting) Metropolis
step, then Omega_m and every convergence with independence proposals drawn
from their priors. The H0 proposal scale adapts during burn-in only.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .likelihood import (
    H0_MAX,
    KAPPA_SCALE,
    OMEGA_M_BOUNDS,
    ConfigurationError,
    ErrorModel,
    ModelParams,
    PackedDataset,
    _log_prior_cosmo,
    _log_prior_kappa,
)

__all__ = [
    "SamplerConfig",
    "ChainState",
    "Chain",
    "ChainSet",
    "PosteriorTarget",
    "StepResult",
    "metropolis_step",
    "ram_step",
    "rw_update_h0",
    "ram_update_h0",
    "ridge_update_h0",
    "independence_update",
    "adapt_proposal_scale",
    "gibbs_sweep",
    "run_chain",
    "run_chains",
]

H0_UPDATE_KINDS = ("random_walk", "repelling_attracting")
BLOCKS = ("h0", "h0_ridge", "omega_m", "kappa")


@dataclass
class SamplerConfig:
    n_chains: int = 5
    n_iterations: int = 10_000
    burn_in_fraction: float = 0.5
    target_acceptance_rw: float = 0.40
    target_acceptance_ram: float = 0.10
    h0_update_kind: str = "random_walk"
    initial_h0_grid: tuple | None = None
    initial_proposal_sd: float = 10.0
    adapt_window: int = 100
    adapt_decay: float = 0.6
    max_ram_attempts: int = 10_000
    h0_ridge_move: bool | None = None
    seed: int | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_chains < 1 or self.n_iterations < 2:
            raise ConfigurationError("need n_chains >= 1 and n_iterations >= 2")
        if not 0.0 < self.burn_in_fraction < 1.0:
            raise ConfigurationError("burn_in_fraction must lie in (0, 1)")
        for name in ("target_acceptance_rw", "target_acceptance_ram"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1)")
        if self.h0_update_kind not in H0_UPDATE_KINDS:
            raise ConfigurationError(
                f"h0_update_kind must be one of {H0_UPDATE_KINDS}, got {self.h0_update_kind!r}")
        if self.initial_proposal_sd <= 0 or self.adapt_window < 1:
            raise ConfigurationError("initial_proposal_sd and adapt_window must be positive")
        if self.initial_h0_grid is not None:
            self.initial_h0_grid = tuple(float(h) for h in self.initial_h0_grid)
            if len(self.initial_h0_grid) != self.n_chains:
                raise ConfigurationError("initial_h0_grid needs one value per chain")

    @property
    def n_burn_in(self) -> int:
        return int(round(self.n_iterations * self.burn_in_fraction))

    @property
    def n_retained(self) -> int:
        return self.n_iterations - self.n_burn_in

    @property
    def ridge_move(self) -> bool:
        """Whether H0 moves with every ``(1 - kappa_k) * H0`` held fixed.

        Defaults to on for the repelling-attracting update and off for the
        random walk.
        """
        if self.h0_ridge_move is None:
            return self.h0_update_kind == "repelling_attracting"
        return bool(self.h0_ridge_move)

    @property
    def target_acceptance(self) -> float:
        if self.h0_update_kind == "repelling_attracting":
            return self.target_acceptance_ram
        return self.target_acceptance_rw

    def h0_grid(self):
        if self.initial_h0_grid is not None:
            return np.array(self.initial_h0_grid)
        return np.linspace(0.01, H0_MAX, self.n_chains)


@dataclass
class ChainState:
    """Current point of one chain plus cached per-lens quantities.

    ``log_post`` always equals the log posterior at the stored point.
    """

    h0: float
    omega_m: float
    kappa: np.ndarray
    ddt_h0: np.ndarray
    lens_ll: np.ndarray
    kappa_lp: np.ndarray
    log_post: float
    proposal_sd_h0: float
    proposal_sd_ridge: float = 10.0
    n_adapt: int = 0
    n_adapt_ridge: int = 0
    accepted: dict = field(default_factory=lambda: dict.fromkeys(BLOCKS, 0))
    proposed: dict = field(default_factory=lambda: dict.fromkeys(BLOCKS, 0))
    ram_fallbacks: int = 0

    def params(self, lens_ids) -> ModelParams:
        return ModelParams(self.h0, self.omega_m, dict(zip(lens_ids, map(float, self.kappa))))

    def refresh_log_post(self):
        """Rebuild ``log_post`` from the per-lens caches (avoids drift from incremental sums)."""
        self.log_post = (_log_prior_cosmo(self.h0, self.omega_m) + float(np.sum(self.kappa_lp))
                         + float(np.sum(self.lens_ll)))


class PosteriorTarget:
    """The posterior for one dataset and error model, evaluated on chain states."""

    def __init__(self, dataset, err=ErrorModel.STUDENT_T4):
        self.data = dataset if isinstance(dataset, PackedDataset) else PackedDataset(dataset)
        self.err = ErrorModel.coerce(err)

    @property
    def lens_ids(self):
        return self.data.lens_ids

    def _lens_ll(self, h0, kappa, ddt_h0):
        if self.data.n_pairs == 0:
            return np.zeros(self.data.n_lenses)
        return self.data.lens_log_likelihoods(h0, kappa, ddt_h0, self.err)

    def _total_ll(self, h0, kappa, ddt_h0):
        if self.data.n_pairs == 0:
            return 0.0
        return float(np.sum(self.data.pair_log_likelihoods(h0, kappa, ddt_h0, self.err)))

    def _ddt(self, omega_m):
        if self.data.n_lenses == 0:
            return np.zeros(0)
        return self.data.ddt_times_h0(omega_m).copy()

    def make_state(self, h0, omega_m, kappa, proposal_sd_h0=1.0) -> ChainState:
        kappa = np.asarray(kappa, dtype=float).copy()
        if kappa.shape != (self.data.n_lenses,):
            raise ConfigurationError("kappa needs one value per lens")
        ddt = self._ddt(omega_m)
        state = ChainState(h0=float(h0), omega_m=float(omega_m), kappa=kappa, ddt_h0=ddt,
                           lens_ll=self._lens_ll(h0, kappa, ddt),
                           kappa_lp=_log_prior_kappa(kappa), log_post=0.0,
                           proposal_sd_h0=float(proposal_sd_h0))
        state.refresh_log_post()
        return state

    def recompute_log_post(self, state: ChainState) -> float:
        """Log posterior from scratch, bypassing every cache."""
        lp = _log_prior_cosmo(state.h0, state.omega_m)
        if lp == -math.inf:
            return lp
        kappa_lp = _log_prior_kappa(state.kappa)
        if np.any(np.isneginf(kappa_lp)):
            return -math.inf
        if self.data.n_pairs == 0:
            return lp + float(np.sum(kappa_lp))
        ddt = self.data.ddt_times_h0(state.omega_m)
        return lp + float(np.sum(kappa_lp)) + self._total_ll(state.h0, state.kappa, ddt)

    def h0_log_density(self, state: ChainState) -> Callable[[float], float]:
        """Unnormalised log conditional of H0 given the other coordinates of ``state``."""
        rest = float(np.sum(state.kappa_lp))
        omega_m, kappa, ddt = state.omega_m, state.kappa, state.ddt_h0

        def log_density(h0):
            lp = _log_prior_cosmo(h0, omega_m)
            if lp == -math.inf:
                return lp
            return lp + rest + self._total_ll(h0, kappa, ddt)

        return log_density

    def h0_ridge_log_density(self, state: ChainState) -> Callable[[float], float]:
        """Log conditional of H0 with every ``s_k = (1 - kappa_k) H0`` held fixed.

        The likelihood depends on (H0, kappa_k) only through s_k, so along
        this line only the priors change; ``-K log H0`` is the Jacobian of
        ``kappa -> s``.
        """
        s = (1.0 - state.kappa) * state.h0
        omega_m, n = state.omega_m, s.size

        def log_density(h0):
            lp = _log_prior_cosmo(h0, omega_m)
            if lp == -math.inf:
                return lp
            return lp + float(np.sum(_log_prior_kappa(1.0 - s / h0))) - n * math.log(h0)

        return log_density


class StepResult(NamedTuple):
    x: float
    log_density: float
    accepted: bool
    fallback: bool = False


def metropolis_step(x, log_density_x, log_density, sd, rng) -> StepResult:
    """One Gaussian random-walk Metropolis step on a scalar."""
    proposal = x + sd * rng.standard_normal()
    lp = log_density(proposal)
    if lp != -math.inf and -rng.standard_exponential() < lp - log_density_x:
        return StepResult(proposal, lp, True)
    return StepResult(x, log_density_x, False)


def _log_ratio(a, b):
    # log(pi_a / pi_b) in the limit of a vanishing regulariser
    if b == -math.inf:
        return 0.0 if a == -math.inf else math.inf
    return a - b


def ram_step(x, log_density_x, log_density, sd, rng, max_attempts=10_000) -> StepResult:
    """One repelling-attracting Metropolis step (Tak, Meng & van Dyk 2018).

    A forced downhill move is followed by a forced uphill move; an auxiliary
    draw around the uphill point enters the acceptance probability so the
    target remains invariant. If any stage exhausts ``max_attempts`` draws a
    plain Metropolis step is taken instead.
    """

    def forced(centre, l_centre, accept_log_prob):
        for _ in range(max_attempts):
            y = centre + sd * rng.standard_normal()
            ly = log_density(y)
            if -rng.standard_exponential() < min(0.0, accept_log_prob(l_centre, ly)):
                return y, ly
        return None

    down = forced(x, log_density_x, lambda lc, ly: _log_ratio(log_density_x, ly))
    if down is None:
        return metropolis_step(x, log_density_x, log_density, sd, rng)._replace(fallback=True)
    x_down, l_down = down
    up = forced(x_down, l_down, lambda lc, ly: _log_ratio(ly, lc))
    if up is None:
        return metropolis_step(x, log_density_x, log_density, sd, rng)._replace(fallback=True)
    x_up, l_up = up
    aux = forced(x_up, l_up, lambda lc, ly: _log_ratio(lc, ly))
    if aux is None:
        return metropolis_step(x, log_density_x, log_density, sd, rng)._replace(fallback=True)
    _, l_aux = aux
    if l_up == -math.inf:
        return StepResult(x, log_density_x, False)
    log_r = (l_up - log_density_x + min(0.0, _log_ratio(log_density_x, l_aux))
             - min(0.0, _log_ratio(l_up, l_aux)))
    if -rng.standard_exponential() < log_r:
        return StepResult(x_up, l_up, True)
    return StepResult(x, log_density_x, False)


def _finish_h0(state, target, step: StepResult):
    state.proposed["h0"] += 1
    if step.fallback:
        state.ram_fallbacks += 1
    if step.accepted:
        state.accepted["h0"] += 1
        state.h0 = step.x
        state.lens_ll = target._lens_ll(state.h0, state.kappa, state.ddt_h0)
        state.refresh_log_post()
    return state


def rw_update_h0(state: ChainState, target: PosteriorTarget, rng) -> ChainState:
    """Gaussian random-walk Metropolis update of H0 (state is modified in place)."""
    step = metropolis_step(state.h0, state.log_post, target.h0_log_density(state),
                           state.proposal_sd_h0, rng)
    return _finish_h0(state, target, step)


def ram_update_h0(state: ChainState, target: PosteriorTarget, rng,
                  max_attempts=10_000) -> ChainState:
    step = ram_step(state.h0, state.log_post, target.h0_log_density(state),
                    state.proposal_sd_h0, rng, max_attempts)
    return _finish_h0(state, target, step)


def ridge_update_h0(state: ChainState, target: PosteriorTarget, rng, kind="repelling_attracting",
                    max_attempts=10_000) -> ChainState:
    """Move H0 with every ``(1 - kappa_k) H0`` held fixed.

    The convergences are rescaled along with H0, so the likelihood is
    unchanged and only the priors (plus a Jacobian) decide. Posterior modes
    that differ only in where the convergences sit along this line cannot
    be reached by the ordinary H0 update, which keeps the convergences fixed.
    ``kind`` selects a random-walk or repelling-attracting step; the scale is
    ``state.proposal_sd_ridge``.
    """
    log_density = target.h0_ridge_log_density(state)
    lx = log_density(state.h0)
    if kind == "repelling_attracting":
        step = ram_step(state.h0, lx, log_density, state.proposal_sd_ridge, rng, max_attempts)
    else:
        step = metropolis_step(state.h0, lx, log_density, state.proposal_sd_ridge, rng)
    state.proposed["h0_ridge"] += 1
    if step.fallback:
        state.ram_fallbacks += 1
    if step.accepted:
        state.accepted["h0_ridge"] += 1
        s = (1.0 - state.kappa) * state.h0
        state.h0 = step.x
        state.kappa = 1.0 - s / step.x
        state.kappa_lp = _log_prior_kappa(state.kappa)
        state.lens_ll = target._lens_ll(state.h0, state.kappa, state.ddt_h0)
        state.refresh_log_post()
    return state


def independence_update(state: ChainState, target: PosteriorTarget, block, rng) -> ChainState:
    """Propose one block from its prior; the acceptance ratio is the likelihood ratio.

    ``block`` is ``"omega_m"`` or ``("kappa", lens_id)``.
    """
    if block == "omega_m":
        state.proposed["omega_m"] += 1
        omega = rng.uniform(*OMEGA_M_BOUNDS)
        if target.data.n_lenses == 0:
            new_ll = state.lens_ll
            ddt = state.ddt_h0
        else:
            ddt = target._ddt(omega)
            new_ll = target._lens_ll(state.h0, state.kappa, ddt)
        log_r = float(np.sum(new_ll) - np.sum(state.lens_ll))
        if -rng.standard_exponential() < log_r:
            state.accepted["omega_m"] += 1
            state.omega_m, state.ddt_h0, state.lens_ll = float(omega), ddt, new_ll
            state.refresh_log_post()
        return state

    if not (isinstance(block, tuple) and len(block) == 2 and block[0] == "kappa"):
        raise ConfigurationError(f"unknown block {block!r}")
    try:
        k = target.lens_ids.index(block[1])
    except ValueError:
        raise ConfigurationError(f"unknown lens id {block[1]!r}") from None
    return _kappa_update(state, target, k, rng)


def _kappa_update(state, target, k, rng):
    state.proposed["kappa"] += 1
    kappa_new = KAPPA_SCALE * rng.standard_cauchy()
    if kappa_new >= 1.0:
        return state
    if target.data.n_pairs:
        ll_new = target.data.lens_log_likelihood(k, state.h0, kappa_new, state.ddt_h0[k],
                                                 target.err)
    else:
        ll_new = 0.0
    log_r = ll_new - state.lens_ll[k]
    if -rng.standard_exponential() < log_r:
        state.accepted["kappa"] += 1
        state.kappa[k] = kappa_new
        state.kappa_lp[k] = float(_log_prior_kappa(kappa_new))
        state.lens_ll[k] = ll_new
        state.refresh_log_post()
    return state


def adapt_proposal_scale(state: ChainState, window_acceptance, phase="burn_in",
                         target_rate=0.40, decay=0.6, block="h0") -> ChainState:
    """Robbins-Monro scaling of an H0 proposal sd; a no-op outside burn-in.

    ``block`` is ``"h0"`` for the ordinary update or ``"h0_ridge"``.
    """
    if not 0.0 <= window_acceptance <= 1.0:
        raise ValueError("window_acceptance must lie in [0, 1]")
    if phase != "burn_in":
        return state
    factor = lambda n: math.exp(n ** -decay * (window_acceptance - target_rate))  # noqa: E731
    if block == "h0_ridge":
        state.n_adapt_ridge += 1
        state.proposal_sd_ridge *= factor(state.n_adapt_ridge)
    else:
        state.n_adapt += 1
        state.proposal_sd_h0 *= factor(state.n_adapt)
    return state


def gibbs_sweep(state: ChainState, target: PosteriorTarget, rng, h0_update="random_walk",
                max_ram_attempts=10_000, ridge=False) -> ChainState:
    """Update H0, then Omega_m, then each convergence in dataset order.

    With ``ridge`` a second H0 move along the likelihood's flat direction
    follows the ordinary one (see :func:`ridge_update_h0`).
    """
    if h0_update == "repelling_attracting":
        ram_update_h0(state, target, rng, max_ram_attempts)
    else:
        rw_update_h0(state, target, rng)
    if ridge:
        ridge_update_h0(state, target, rng, h0_update, max_ram_attempts)
    independence_update(state, target, "omega_m", rng)
    for k in range(target.data.n_lenses):
        _kappa_update(state, target, k, rng)
    return state


@dataclass
class Chain:
    """Retained draws of one chain."""

    iterations: np.ndarray
    h0: np.ndarray
    omega_m: np.ndarray
    kappa: np.ndarray
    log_post: np.ndarray
    h0_accepted: np.ndarray
    acceptance_rates: dict
    tuning_history: list
    proposal_sd_h0: float
    ram_fallbacks: int = 0
    ridge_tuning_history: list = field(default_factory=list)
    proposal_sd_ridge: float = math.nan

    def __len__(self):
        return self.h0.size


@dataclass
class ChainSet:
    chains: list
    lens_ids: tuple
    error_model: ErrorModel = ErrorModel.STUDENT_T4
    config: SamplerConfig | None = None

    @property
    def param_names(self):
        return ["h0", "omega_m"] + [f"kappa_{lid}" for lid in self.lens_ids]

    @property
    def n_draws(self):
        return len(self.chains[0]) if self.chains else 0

    def draws(self, name) -> np.ndarray:
        """Array of shape ``(n_chains, n_draws)`` for one parameter."""
        if name in ("h0", "omega_m", "log_post"):
            return np.stack([getattr(c, name) for c in self.chains])
        if name.startswith("kappa_") and name[6:] in self.lens_ids:
            k = self.lens_ids.index(name[6:])
            return np.stack([c.kappa[:, k] for c in self.chains])
        raise KeyError(name)

    def pooled(self, name) -> np.ndarray:
        return self.draws(name).reshape(-1)

    def params_at(self, chain, i) -> ModelParams:
        c = self.chains[chain]
        return ModelParams(float(c.h0[i]), float(c.omega_m[i]),
                           dict(zip(self.lens_ids, map(float, c.kappa[i]))))

    @property
    def acceptance_rates(self):
        return [c.acceptance_rates for c in self.chains]


def _initial_state(target, h0, sd, rng):
    omega = rng.uniform(*OMEGA_M_BOUNDS)
    kappa = np.empty(target.data.n_lenses)
    for k in range(kappa.size):
        draw = KAPPA_SCALE * rng.standard_cauchy()
        while draw >= 1.0:
            draw = KAPPA_SCALE * rng.standard_cauchy()
        kappa[k] = draw
    state = target.make_state(h0, omega, kappa, sd)
    state.proposal_sd_ridge = sd
    return state


def run_chain(target: PosteriorTarget, config: SamplerConfig, h0_init, seed_seq) -> Chain:
    rng = np.random.default_rng(seed_seq)
    state = _initial_state(target, h0_init, config.initial_proposal_sd, rng)
    n_burn, n_keep = config.n_burn_in, config.n_retained
    K = target.data.n_lenses
    h0 = np.empty(n_keep)
    omega = np.empty(n_keep)
    kappa = np.empty((n_keep, K))
    log_post = np.empty(n_keep)
    h0_acc = np.zeros(n_keep, dtype=bool)
    history, ridge_history = [], []
    window_start = {"h0": 0, "h0_ridge": 0}
    for it in range(config.n_iterations):
        before = state.h0
        gibbs_sweep(state, target, rng, config.h0_update_kind, config.max_ram_attempts,
                    config.ridge_move)
        if it < n_burn:
            if (it + 1) % config.adapt_window == 0:
                for block, log in (("h0", history), ("h0_ridge", ridge_history)):
                    if block == "h0_ridge" and not config.ridge_move:
                        continue
                    rate = (state.accepted[block] - window_start[block]) / config.adapt_window
                    adapt_proposal_scale(state, rate, "burn_in", config.target_acceptance,
                                         config.adapt_decay, block)
                    sd = state.proposal_sd_h0 if block == "h0" else state.proposal_sd_ridge
                    log.append((it + 1, sd, rate))
                    window_start[block] = state.accepted[block]
            if it + 1 == n_burn:
                sampling_start = {k: (state.accepted[k], state.proposed[k]) for k in state.accepted}
                fallbacks_start = state.ram_fallbacks
            continue
        j = it - n_burn
        h0[j], omega[j], kappa[j], log_post[j] = state.h0, state.omega_m, state.kappa, state.log_post
        h0_acc[j] = state.h0 != before
    rates = {}
    for k, (a0, p0) in sampling_start.items():
        proposed = state.proposed[k] - p0
        rates[k] = (state.accepted[k] - a0) / proposed if proposed else float("nan")
    return Chain(iterations=np.arange(n_burn + 1, config.n_iterations + 1), h0=h0,
                 omega_m=omega, kappa=kappa, log_post=log_post, h0_accepted=h0_acc,
                 acceptance_rates=rates, tuning_history=history,
                 proposal_sd_h0=state.proposal_sd_h0,
                 ram_fallbacks=state.ram_fallbacks - fallbacks_start,
                 ridge_tuning_history=ridge_history,
                 proposal_sd_ridge=state.proposal_sd_ridge if config.ridge_move else math.nan)


def _run_chain_job(args):
    dataset, err, config, h0_init, seed_seq = args
    return run_chain(PosteriorTarget(dataset, err), config, h0_init, seed_seq)


def run_chains(config: SamplerConfig, dataset, err=ErrorModel.STUDENT_T4) -> ChainSet:
    """Run ``config.n_chains`` independent chains and keep the post burn-in draws.

    Chain ``c`` starts at the ``c``-th value of the H0 grid with Omega_m and
    the convergences drawn from their priors. Its random stream is the
    ``c``-th child of ``SeedSequence(config.seed)``, so the result does not
    depend on ``n_jobs``.
    """
    err = ErrorModel.coerce(err)
    target = PosteriorTarget(dataset, err)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    grid = config.h0_grid()
    jobs = [(target.data, err, config, grid[c], seeds[c]) for c in range(config.n_chains)]
    if config.n_jobs and config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            chains = list(pool.map(_run_chain_job, jobs))
    else:
        chains = [_run_chain_job(job) for job in jobs]
    return ChainSet(chains, target.lens_ids, err, config)
