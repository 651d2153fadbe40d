"""Data types, priors and the marginal likelihood of the meta-analysis.

Each input pair contributes a density for the Fermat-potential estimate
conditional on the observed time delay. The true delay is integrated out
under a flat prior. Under the robust model a per-pair variance inflation
factor with an inverse-Gamma(2, 2) prior is also integrated out, which
leaves a Student-t density with four degrees of freedom.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .cosmology import (
    C_MPC_PER_DAY,
    Cosmology,
    RedshiftPair,
    comoving_integrals,
    time_delay_distance,
    time_delay_distance_times_h0,
)

__all__ = [
    "H0_MAX",
    "OMEGA_M_BOUNDS",
    "KAPPA_SCALE",
    "T_DOF",
    "PairMeasurement",
    "LensSystem",
    "ModelParams",
    "ErrorModel",
    "ConfigurationError",
    "FlatDirectionWarning",
    "PackedDataset",
    "MLEResult",
    "location_scale_for_pair",
    "student_t_log_density",
    "gaussian_log_density",
    "pair_log_likelihood",
    "log_likelihood",
    "log_prior",
    "log_posterior",
    "mle_fit",
]

H0_MAX = 150.0
OMEGA_M_BOUNDS = (0.05, 0.5)
KAPPA_SCALE = 0.025
T_DOF = 4

_LOG_T4_NORM = math.log(3.0 / 8.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_H0_PRIOR = -math.log(H0_MAX)
_LOG_OMEGA_PRIOR = -math.log(OMEGA_M_BOUNDS[1] - OMEGA_M_BOUNDS[0])
_LOG_CAUCHY_NORM = -math.log(math.pi * KAPPA_SCALE)


class ConfigurationError(ValueError):
    """Dataset, parameters and settings do not fit together."""


class FlatDirectionWarning(UserWarning):
    """The likelihood surface is flat along some direction at the optimum."""


class ErrorModel(str, enum.Enum):
    STUDENT_T4 = "student_t4"
    GAUSSIAN = "gaussian"

    @classmethod
    def coerce(cls, value) -> "ErrorModel":
        if isinstance(value, cls):
            return value
        aliases = {"t": cls.STUDENT_T4, "t4": cls.STUDENT_T4, "student_t": cls.STUDENT_T4,
                   "normal": cls.GAUSSIAN}
        key = str(value).lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(f"unknown error model {value!r}") from None

    @property
    def dof(self):
        return T_DOF if self is ErrorModel.STUDENT_T4 else math.inf


@dataclass(frozen=True)
class PairMeasurement:
    """Time-delay (days) and Fermat-potential-difference (rad^2) estimates for one image pair."""

    delta_hat: float
    sigma_delta: float
    phi_hat: float
    sigma_phi: float
    pair_label: str = "AB"

    def __post_init__(self):
        if not self.sigma_delta > 0:
            raise ValueError(f"sigma_delta must be positive, got {self.sigma_delta!r}")
        if not self.sigma_phi > 0:
            raise ValueError(f"sigma_phi must be positive, got {self.sigma_phi!r}")

    @property
    def sign_consistent(self) -> bool:
        return self.delta_hat * self.phi_hat >= 0


@dataclass(frozen=True)
class LensSystem:
    lens_id: str
    z: RedshiftPair
    pairs: tuple

    def __post_init__(self):
        if not isinstance(self.z, RedshiftPair):
            object.__setattr__(self, "z", RedshiftPair(*self.z))
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if not self.pairs:
            raise ValueError(f"lens {self.lens_id!r} has no image pairs")
        labels = [p.pair_label for p in self.pairs]
        if len(set(labels)) != len(labels):
            raise ValueError(f"lens {self.lens_id!r} has duplicate pair labels")


@dataclass
class ModelParams:
    """One point in parameter space; values are not range checked here."""

    h0: float
    omega_m: float
    kappa: dict = field(default_factory=dict)

    @property
    def cosmo(self) -> Cosmology:
        return Cosmology(self.h0, self.omega_m)

    def kappa_for(self, lens_id):
        try:
            return self.kappa[lens_id]
        except KeyError:
            raise ConfigurationError(f"no kappa_ext value for lens {lens_id!r}") from None


def student_t_log_density(x, location, scale):
    """Log density of the location-scale Student-t with four degrees of freedom."""
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        raise ValueError("scale must be positive")
    r = (np.asarray(x, dtype=float) - location) / scale
    out = _LOG_T4_NORM - np.log(scale) - 2.5 * np.log1p(0.25 * r * r)
    return float(out) if out.ndim == 0 else out


def gaussian_log_density(x, location, scale):
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        raise ValueError("scale must be positive")
    r = (np.asarray(x, dtype=float) - location) / scale
    out = -_LOG_SQRT_2PI - np.log(scale) - 0.5 * r * r
    return float(out) if out.ndim == 0 else out


def _log_density(err: ErrorModel):
    return student_t_log_density if err is ErrorModel.STUDENT_T4 else gaussian_log_density


def location_scale_for_pair(params: ModelParams, lens: LensSystem, pair: PairMeasurement):
    """Location and scale (rad^2) of the marginal density of ``pair.phi_hat``."""
    kappa = params.kappa_for(lens.lens_id)
    ddt = time_delay_distance(params.cosmo, lens.z)
    factor = (1.0 - kappa) * C_MPC_PER_DAY / ddt
    location = factor * pair.delta_hat
    scale = math.sqrt((factor * pair.sigma_delta) ** 2 + pair.sigma_phi ** 2)
    return location, scale


def pair_log_likelihood(params, lens, pair, err=ErrorModel.STUDENT_T4):
    err = ErrorModel.coerce(err)
    location, scale = location_scale_for_pair(params, lens, pair)
    return _log_density(err)(pair.phi_hat, location, scale)


def log_likelihood(dataset: Sequence[LensSystem], params: ModelParams, err=ErrorModel.STUDENT_T4):
    """Sum of pair log-likelihoods; pairs are independent."""
    err = ErrorModel.coerce(err)
    total = 0.0
    for lens in dataset:
        params.kappa_for(lens.lens_id)
        for pair in lens.pairs:
            total += pair_log_likelihood(params, lens, pair, err)
    return total


def _log_prior_kappa(kappa):
    kappa = np.asarray(kappa, dtype=float)
    out = _LOG_CAUCHY_NORM - np.log1p((kappa / KAPPA_SCALE) ** 2)
    return np.where(kappa < 1.0, out, -np.inf)


def _log_prior_cosmo(h0, omega_m):
    if not (0.0 < h0 <= H0_MAX):
        return -math.inf
    if not (OMEGA_M_BOUNDS[0] <= omega_m <= OMEGA_M_BOUNDS[1]):
        return -math.inf
    return _LOG_H0_PRIOR + _LOG_OMEGA_PRIOR


def log_prior(params: ModelParams):
    """Uniform H0 and Omega_m, independent Cauchy(0, 0.025) convergences truncated below 1."""
    lp = _log_prior_cosmo(params.h0, params.omega_m)
    if lp == -math.inf:
        return lp
    kappas = list(params.kappa.values())
    if kappas:
        lp += float(np.sum(_log_prior_kappa(kappas)))
    return lp


def log_posterior(dataset, params: ModelParams, err=ErrorModel.STUDENT_T4):
    lp = log_prior(params)
    for lens in dataset:
        params.kappa_for(lens.lens_id)
    if lp == -math.inf:
        return lp
    return log_likelihood(dataset, params, err) + lp


class PackedDataset:
    """Array view of a dataset for fast repeated likelihood evaluation.

    Pairs are stored lens by lens; ``lens_slices[k]`` selects the pairs of
    lens ``k``. The comoving integrals depend only on ``omega_m`` and are
    cached for the most recent value.
    """

    def __init__(self, dataset: Sequence[LensSystem]):
        self.lenses = tuple(dataset)
        self.lens_ids = tuple(lens.lens_id for lens in self.lenses)
        if len(set(self.lens_ids)) != len(self.lens_ids):
            raise ConfigurationError("lens ids must be unique")
        self.z_d = np.array([lens.z.z_d for lens in self.lenses], dtype=float)
        self.z_s = np.array([lens.z.z_s for lens in self.lenses], dtype=float)
        pairs = [p for lens in self.lenses for p in lens.pairs]
        self.delta_hat = np.array([p.delta_hat for p in pairs], dtype=float)
        self.sigma_delta = np.array([p.sigma_delta for p in pairs], dtype=float)
        self.phi_hat = np.array([p.phi_hat for p in pairs], dtype=float)
        self.sigma_phi = np.array([p.sigma_phi for p in pairs], dtype=float)
        counts = [len(lens.pairs) for lens in self.lenses]
        self.lens_index = np.repeat(np.arange(len(self.lenses)), counts)
        bounds = np.concatenate([[0], np.cumsum(counts)]).astype(int)
        self.lens_slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        self._zs = np.concatenate([self.z_d, self.z_s])
        self._cache_omega = None
        self._cache_value = None

    @property
    def n_lenses(self):
        return len(self.lenses)

    @property
    def n_pairs(self):
        return self.delta_hat.size

    def ddt_times_h0(self, omega_m):
        """``H0 * D_dt`` for every lens, memoised on ``omega_m``."""
        if omega_m != self._cache_omega:
            k = self.n_lenses
            integrals = comoving_integrals(self._zs, omega_m)
            self._cache_value = time_delay_distance_times_h0(integrals[:k], integrals[k:])
            self._cache_omega = omega_m
        return self._cache_value

    def location_scale(self, h0, kappa, ddt_h0, lens=None):
        """Per-pair location and scale.

        With ``lens=None`` the arrays ``kappa`` and ``ddt_h0`` hold one value
        per lens and all pairs are returned; otherwise they are the scalars of
        lens index ``lens`` and only its pairs are returned.
        """
        if lens is None:
            sl = slice(None)
            factor = ((1.0 - kappa) * (h0 * C_MPC_PER_DAY) / ddt_h0)[self.lens_index]
        else:
            sl = self.lens_slices[lens]
            factor = (1.0 - kappa) * h0 * C_MPC_PER_DAY / ddt_h0
        location = factor * self.delta_hat[sl]
        scale = np.sqrt((factor * self.sigma_delta[sl]) ** 2 + self.sigma_phi[sl] ** 2)
        return location, scale

    def pair_log_likelihoods(self, h0, kappa, ddt_h0, err, lens=None):
        location, scale = self.location_scale(h0, kappa, ddt_h0, lens)
        phi = self.phi_hat if lens is None else self.phi_hat[self.lens_slices[lens]]
        r = (phi - location) / scale
        if err is ErrorModel.STUDENT_T4:
            return _LOG_T4_NORM - np.log(scale) - 2.5 * np.log1p(0.25 * r * r)
        return -_LOG_SQRT_2PI - np.log(scale) - 0.5 * r * r

    def lens_log_likelihoods(self, h0, kappa, ddt_h0, err):
        ll = self.pair_log_likelihoods(h0, kappa, ddt_h0, err)
        return np.bincount(self.lens_index, weights=ll, minlength=self.n_lenses)

    def lens_log_likelihood(self, k, h0, kappa_k, ddt_h0_k, err):
        return float(np.sum(self.pair_log_likelihoods(h0, kappa_k, ddt_h0_k, err, lens=k)))

    def kappa_vector(self, params: ModelParams):
        return np.array([params.kappa_for(i) for i in self.lens_ids], dtype=float)

    def log_likelihood(self, params: ModelParams, err=ErrorModel.STUDENT_T4):
        err = ErrorModel.coerce(err)
        kappa = self.kappa_vector(params)
        if self.n_pairs == 0:
            return 0.0
        ddt = self.ddt_times_h0(params.omega_m)
        return float(np.sum(self.pair_log_likelihoods(params.h0, kappa, ddt, err)))


@dataclass
class MLEResult:
    params: ModelParams
    log_likelihood: float
    flat_direction: bool
    curvature_eigenvalues: np.ndarray


def _in_support(h0, omega_m, kappa):
    return (0.0 < h0 <= H0_MAX and OMEGA_M_BOUNDS[0] <= omega_m <= OMEGA_M_BOUNDS[1]
            and np.all(kappa < 1.0))


def mle_fit(dataset, err=ErrorModel.STUDENT_T4, starts=(), fix_kappa=False,
            xatol=1e-6, flat_tol=1e-6):
    """Maximise the likelihood within the prior bounds by Nelder-Mead.

    Coordinates are scaled (H0/100, Omega_m, kappa/0.025) before the simplex
    search. With ``fix_kappa`` the convergences are held at each start's
    values; otherwise H0 and the convergences are only identified up to a
    common rescaling and a :class:`FlatDirectionWarning` is issued.
    """
    err = ErrorModel.coerce(err)
    packed = PackedDataset(dataset)
    starts = list(starts)
    valid = [s for s in starts if _in_support(s.h0, s.omega_m, packed.kappa_vector(s))]
    if not valid:
        raise ConfigurationError("mle_fit needs at least one start inside the prior support")

    def unpack(x, kappa0):
        h0, om = 100.0 * x[0], x[1]
        kappa = kappa0 if fix_kappa else KAPPA_SCALE * np.asarray(x[2:])
        return h0, om, kappa

    def loglik(h0, om, kappa):
        if not _in_support(h0, om, kappa):
            return -np.inf
        if packed.n_pairs == 0:
            return 0.0
        ddt = packed.ddt_times_h0(om)
        return float(np.sum(packed.pair_log_likelihoods(h0, kappa, ddt, err)))

    best = None
    for start in valid:
        kappa0 = packed.kappa_vector(start)
        x0 = [start.h0 / 100.0, start.omega_m]
        if not fix_kappa:
            x0 += list(kappa0 / KAPPA_SCALE)
        x0 = np.array(x0)

        def objective(x, kappa0=kappa0):
            value = loglik(*unpack(x, kappa0))
            return np.inf if value == -np.inf else -value

        res = optimize.minimize(objective, x0, method="Nelder-Mead",
                                options={"xatol": xatol, "fatol": 1e-10,
                                         "maxiter": 20000 * x0.size, "maxfev": 40000 * x0.size,
                                         "adaptive": x0.size > 2})
        x, fx = res.x, res.fun
        if fx > objective(x0):
            x, fx = x0, objective(x0)
        if best is None or fx < best[1]:
            best = (x, fx, kappa0)

    x, fx, kappa0 = best
    h0, om, kappa = unpack(x, kappa0)
    eig = _curvature_eigenvalues(lambda y: loglik(*unpack(y, kappa0)), x)
    flat = bool(eig.size and np.min(np.abs(eig)) <= flat_tol * max(np.max(np.abs(eig)), 1e-300))
    if flat:
        warnings.warn("likelihood is flat along at least one direction at the maximum; "
                      "the reported point is not unique", FlatDirectionWarning, stacklevel=2)
    params = ModelParams(h0, om, dict(zip(packed.lens_ids, map(float, kappa))))
    return MLEResult(params, -fx, flat, eig)


def _curvature_eigenvalues(f, x, step=1e-4):
    """Eigenvalues of a central finite-difference Hessian; nan entries where off-support."""
    n = x.size
    h = step * np.maximum(1.0, np.abs(x))
    hess = np.zeros((n, n))
    f0 = f(x)
    for i in range(n):
        for j in range(i, n):
            if i == j:
                e = np.zeros(n)
                e[i] = h[i]
                val = (f(x + e) - 2 * f0 + f(x - e)) / h[i] ** 2
            else:
                ei = np.zeros(n)
                ej = np.zeros(n)
                ei[i], ej[j] = h[i], h[j]
                val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
            hess[i, j] = hess[j, i] = val
    if not np.all(np.isfinite(hess)):
        return np.array([])
    return np.linalg.eigvalsh(hess)
