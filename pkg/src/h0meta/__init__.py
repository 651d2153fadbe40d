"""Robust Bayesian meta-analysis of the Hubble constant from lensed time delays."""

__version__ = "0.1.0"

from .cosmology import Cosmology, RedshiftPair, time_delay_distance  # noqa: E402
from .diagnostics import (  # noqa: E402
    evaluate_against_truth,
    effective_sample_size,
    gelman_rubin,
    posterior_predictive_check,
    summarize,
)
from .estimator import H0MetaAnalysis, check_dataset  # noqa: E402
from .likelihood import (  # noqa: E402
    ErrorModel,
    LensSystem,
    ModelParams,
    PairMeasurement,
    log_likelihood,
    log_posterior,
    log_prior,
    mle_fit,
)
from .mcmc import ChainSet, SamplerConfig, run_chains  # noqa: E402

__all__ = [
    "Cosmology", "RedshiftPair", "time_delay_distance", "ErrorModel", "LensSystem",
    "ModelParams", "PairMeasurement", "log_likelihood", "log_posterior", "log_prior",
    "mle_fit", "ChainSet", "SamplerConfig", "run_chains", "gelman_rubin",
    "effective_sample_size", "summarize", "posterior_predictive_check",
    "evaluate_against_truth", "H0MetaAnalysis", "check_dataset",
]
