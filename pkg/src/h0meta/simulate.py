"""Synthetic lens populations and outlier-robustness studies."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cosmology import C_MPC_PER_DAY, Cosmology, RedshiftPair, time_delay_distance
from .diagnostics import StudyReport, evaluate_against_truth, effective_sample_size, gelman_rubin
from .likelihood import ErrorModel, LensSystem, PairMeasurement
from .mcmc import SamplerConfig, run_chains

__all__ = [
    "PopulationSpec",
    "GroundTruth",
    "ContaminationPlan",
    "StudyCell",
    "generate_population",
    "inject_outliers",
    "first_pair_indices",
    "contamination_plan",
    "run_study",
    "study_one_spec",
    "study_two_spec",
]

QUAD_LABELS = ("AB", "AC", "AD")
NOISE_MODES = ("fix_at_truth", "gaussian_noise")
DELAY_SIGNS = ("random", "negative", "positive")


@dataclass
class PopulationSpec:
    n_quads: int = 12
    n_doubles: int = 4
    h0_true: float = 66.643
    omega_true: float = 0.3
    kappa_sd: float = 0.025
    cv_inputs: float = 0.03
    noise_mode: str = "fix_at_truth"
    z_d_range: tuple = (0.2, 0.8)
    z_s_range: tuple = (1.0, 3.0)
    delay_magnitude_range: tuple = (5.0, 120.0)
    delay_sign: str = "random"

    def __post_init__(self):
        if self.n_quads < 0 or self.n_doubles < 0:
            raise ValueError("lens counts must be non-negative")
        if not self.cv_inputs > 0:
            raise ValueError("cv_inputs must be positive")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if self.delay_sign not in DELAY_SIGNS:
            raise ValueError(f"delay_sign must be one of {DELAY_SIGNS}")
        (d0, d1), (s0, s1) = self.z_d_range, self.z_s_range
        if not (0 < d0 <= d1 and 0 < s0 <= s1 and d1 < s0):
            raise ValueError("redshift ranges must satisfy 0 < z_d < z_s for every draw")
        lo, hi = self.delay_magnitude_range
        if not 0 < lo <= hi:
            raise ValueError("delay magnitudes must be positive")
        Cosmology(self.h0_true, self.omega_true)


@dataclass
class GroundTruth:
    h0: float
    omega_m: float
    kappa: dict
    delta: np.ndarray
    phi: np.ndarray


def generate_population(spec: PopulationSpec, rng=None):
    """Draw a lens population and its estimates; returns ``(dataset, truth)``.

    True Fermat differences follow exactly from the true delays through the
    convergence-adjusted time-delay distance. Standard errors are
    ``cv_inputs`` times the absolute true values.
    """
    rng = np.random.default_rng(rng)
    cosmo = Cosmology(spec.h0_true, spec.omega_true)
    lenses, kappas, deltas, phis = [], {}, [], []
    n_lenses = spec.n_quads + spec.n_doubles
    width = len(str(max(n_lenses, 1)))
    for k in range(n_lenses):
        lens_id = f"L{k + 1:0{width}d}"
        labels = QUAD_LABELS if k < spec.n_quads else QUAD_LABELS[:1]
        z = RedshiftPair(rng.uniform(*spec.z_d_range), rng.uniform(*spec.z_s_range))
        kappa = rng.normal(0.0, spec.kappa_sd)
        ddt_ext = time_delay_distance(cosmo, z) / (1.0 - kappa)
        lo, hi = spec.delay_magnitude_range
        pairs = []
        for label in labels:
            delta = math.exp(rng.uniform(math.log(lo), math.log(hi)))
            if spec.delay_sign == "negative" or (
                    spec.delay_sign == "random" and rng.random() < 0.5):
                delta = -delta
            phi = C_MPC_PER_DAY * delta / ddt_ext
            sd_delta, sd_phi = spec.cv_inputs * abs(delta), spec.cv_inputs * abs(phi)
            if spec.noise_mode == "gaussian_noise":
                delta_hat = delta + sd_delta * rng.standard_normal()
                phi_hat = phi + sd_phi * rng.standard_normal()
            else:
                delta_hat, phi_hat = delta, phi
            pairs.append(PairMeasurement(delta_hat, sd_delta, phi_hat, sd_phi, label))
            deltas.append(delta)
            phis.append(phi)
        kappas[lens_id] = kappa
        lenses.append(LensSystem(lens_id, z, tuple(pairs)))
    truth = GroundTruth(spec.h0_true, spec.omega_true, kappas, np.array(deltas), np.array(phis))
    return lenses, truth


@dataclass
class ContaminationPlan:
    target_pair_indices: tuple = ()
    shift_multiplier: float = 10.0
    shifted_field: str = "time_delay"

    def __post_init__(self):
        self.target_pair_indices = tuple(int(i) for i in self.target_pair_indices)
        if len(set(self.target_pair_indices)) != len(self.target_pair_indices):
            raise ValueError("contamination indices must be unique")
        if self.shifted_field != "time_delay":
            raise ValueError("only time-delay inputs can be shifted")


def inject_outliers(dataset, plan: ContaminationPlan):
    """Shift the targeted time delays by ``shift_multiplier`` standard errors.

    Indices count pairs across the whole dataset in order. Standard errors
    are left unchanged and untouched pairs are returned as-is.
    """
    n_pairs = sum(len(lens.pairs) for lens in dataset)
    bad = [i for i in plan.target_pair_indices if not 0 <= i < n_pairs]
    if bad:
        raise IndexError(f"pair indices out of range 0..{n_pairs - 1}: {bad}")
    targets = set(plan.target_pair_indices)
    out, i = [], 0
    for lens in dataset:
        pairs = []
        for pair in lens.pairs:
            if i in targets and plan.shift_multiplier != 0:
                pair = replace(pair, delta_hat=pair.delta_hat + plan.shift_multiplier * pair.sigma_delta)
            pairs.append(pair)
            i += 1
        out.append(replace(lens, pairs=tuple(pairs)))
    return out


def first_pair_indices(dataset):
    """Global pair index of the first pair of every lens."""
    idx, i = [], 0
    for lens in dataset:
        idx.append(i)
        i += len(lens.pairs)
    return idx


def contamination_plan(dataset, level, shift_multiplier=10.0) -> ContaminationPlan:
    """Plan that shifts the first pair of the first ``ceil(level * n_pairs)`` lenses."""
    n_pairs = sum(len(lens.pairs) for lens in dataset)
    n_out = math.ceil(level * n_pairs - 1e-9)
    slots = first_pair_indices(dataset)
    if n_out > len(slots):
        raise ValueError(f"{n_out} outliers requested but only {len(slots)} lenses")
    return ContaminationPlan(tuple(slots[:n_out]), shift_multiplier)


@dataclass
class StudyCell:
    level: float
    n_outliers: int
    error_model: ErrorModel
    report: StudyReport
    rhat_h0: float
    ess_h0: float
    acceptance_h0: float
    h0_update_kind: str = "random_walk"
    chains: object = field(default=None, repr=False)


def fit_and_evaluate(dataset, err, sampler_config, h0_true, keep_chains=False, level=0.0,
                     n_outliers=0):
    err = ErrorModel.coerce(err)
    chains = run_chains(sampler_config, dataset, err)
    h0 = chains.draws("h0")
    pooled = h0.ravel()
    report = evaluate_against_truth(float(pooled.mean()), float(pooled.std(ddof=1)), h0_true)
    rhat = gelman_rubin(h0) if h0.shape[0] >= 2 else math.nan
    ess = float(sum(effective_sample_size(c) for c in h0)) if h0.shape[1] >= 100 else math.nan
    acc = float(np.mean([c.acceptance_rates["h0"] for c in chains.chains]))
    return StudyCell(level, n_outliers, err, report, rhat, ess, acc,
                     sampler_config.h0_update_kind, chains if keep_chains else None)


def run_study(spec: PopulationSpec, contamination_levels=(0.0, 0.1, 0.2, 0.3),
              err_models=("student_t4", "gaussian"), sampler_config=None, seed=None,
              keep_chains=False, dataset=None):
    """Fit every contamination level under every error model.

    The population is drawn once from ``seed``; each cell gets its own
    sampler seed derived from the same root. Pass ``dataset`` to reuse an
    existing population (its truth is taken from ``spec``).
    """
    root = np.random.SeedSequence(seed)
    data_seed, *cell_seeds = root.spawn(1 + len(contamination_levels) * len(err_models))
    if dataset is None:
        dataset, _ = generate_population(spec, np.random.default_rng(data_seed))
    sampler_config = sampler_config or SamplerConfig()
    cells = []
    j = 0
    for level in contamination_levels:
        plan = contamination_plan(dataset, level)
        contaminated = inject_outliers(dataset, plan)
        for err in err_models:
            cfg = replace(sampler_config,
                          seed=int(cell_seeds[j].generate_state(1)[0]))
            j += 1
            cells.append(fit_and_evaluate(contaminated, err, cfg, spec.h0_true, keep_chains,
                                          level, len(plan.target_pair_indices)))
    return cells


def study_one_spec(**overrides) -> PopulationSpec:
    """16 lenses (12 quads, 4 doubles), 40 pairs, H0 = 66.643.

    Delays share one sign so that every injected shift moves its delay
    estimate toward zero, as in the worked example of the reference study.
    """
    base = dict(n_quads=12, n_doubles=4, h0_true=66.643, delay_sign="negative")
    base.update(overrides)
    return PopulationSpec(**base)


def study_two_spec(**overrides) -> PopulationSpec:
    """30 quads (90 pairs) at H0 = 70 with Omega_m = 0.3."""
    base = dict(n_quads=30, n_doubles=0, h0_true=70.0, omega_true=0.3)
    base.update(overrides)
    return PopulationSpec(**base)
