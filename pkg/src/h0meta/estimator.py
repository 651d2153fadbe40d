"""Scikit-learn style front end for the meta-analysis."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cosmology import ARCSEC2_TO_RAD2, RedshiftPair
from .diagnostics import posterior_predictive_check, summarize
from .likelihood import ErrorModel, LensSystem, PackedDataset, PairMeasurement
from .mcmc import SamplerConfig, run_chains

__all__ = ["H0MetaAnalysis", "check_dataset"]


def check_dataset(X):
    """Coerce ``X`` to a list of :class:`LensSystem`.

    Accepts a sequence of lens systems, a :class:`PackedDataset`, or a
    table (pandas DataFrame or mapping of columns) with the dataset-file
    columns. Fermat differences in tables are read in ``phi_unit``
    (square radians when the column is absent).
    """
    if isinstance(X, PackedDataset):
        return list(X.lenses)
    if hasattr(X, "to_dict") and hasattr(X, "columns"):
        X = {c: list(X[c]) for c in X.columns}
    if isinstance(X, dict):
        return _lenses_from_columns(X)
    lenses = list(X)
    bad = [type(x).__name__ for x in lenses if not isinstance(x, LensSystem)]
    if bad:
        raise TypeError(f"expected LensSystem items, got {sorted(set(bad))}")
    ids = [lens.lens_id for lens in lenses]
    if len(set(ids)) != len(ids):
        raise ValueError("lens ids must be unique")
    return lenses


def _lenses_from_columns(cols):
    required = ("lens_id", "z_d", "z_s", "pair_label", "delta_hat_days", "sigma_delta_days",
                "phi_hat", "sigma_phi")
    missing = [c for c in required if c not in cols]
    if missing:
        raise ValueError(f"missing columns: {missing}")
    n = len(cols["lens_id"])
    units = cols.get("phi_unit", ["rad2"] * n)
    order, z, pairs = [], {}, {}
    for i in range(n):
        lid = str(cols["lens_id"][i])
        factor = ARCSEC2_TO_RAD2 if units[i] == "arcsec2" else 1.0
        if lid not in z:
            order.append(lid)
            z[lid] = RedshiftPair(float(cols["z_d"][i]), float(cols["z_s"][i]))
            pairs[lid] = []
        pairs[lid].append(PairMeasurement(
            float(cols["delta_hat_days"][i]), float(cols["sigma_delta_days"][i]),
            float(cols["phi_hat"][i]) * factor, float(cols["sigma_phi"][i]) * factor,
            str(cols["pair_label"][i])))
    return [LensSystem(lid, z[lid], tuple(pairs[lid])) for lid in order]


class H0MetaAnalysis(BaseEstimator):
    """Robust Bayesian combination of time-delay and Fermat-potential estimates.

    Parameters
    ----------
    error_model : {"student_t4", "gaussian"}
        Measurement-error law of the inputs.
    n_chains, n_iterations, burn_in_fraction
        Chain layout; the first ``burn_in_fraction`` of each chain is dropped.
    h0_update : {"random_walk", "repelling_attracting"}
        Update used for H0 inside each Gibbs sweep.
    target_acceptance : float or None
        Acceptance rate the H0 proposal scale is tuned to during burn-in.
        Defaults to 0.40 for the random walk and 0.10 for the
        repelling-attracting update.
    initial_proposal_sd : float
        Starting H0 proposal standard deviation.
    h0_ridge_move : bool or None
        Add a second H0 move that rescales the convergences so the
        likelihood stays fixed. ``None`` enables it with the
        repelling-attracting update only.
    n_jobs : int
        Worker processes for the chains.
    random_state : int or None

    Attributes
    ----------
    chains_ : ChainSet
    summary_ : PosteriorSummary
    h0_mean_, h0_sd_ : float
    lens_ids_ : tuple
    """

    def __init__(self, error_model="student_t4", n_chains=5, n_iterations=10_000,
                 burn_in_fraction=0.5, h0_update="random_walk", target_acceptance=None,
                 initial_proposal_sd=10.0, h0_ridge_move=None, n_jobs=1, random_state=None):
        self.error_model = error_model
        self.n_chains = n_chains
        self.n_iterations = n_iterations
        self.burn_in_fraction = burn_in_fraction
        self.h0_update = h0_update
        self.target_acceptance = target_acceptance
        self.initial_proposal_sd = initial_proposal_sd
        self.h0_ridge_move = h0_ridge_move
        self.n_jobs = n_jobs
        self.random_state = random_state

    def _sampler_config(self):
        cfg = SamplerConfig(n_chains=self.n_chains, n_iterations=self.n_iterations,
                            burn_in_fraction=self.burn_in_fraction,
                            h0_update_kind=self.h0_update,
                            initial_proposal_sd=self.initial_proposal_sd,
                            h0_ridge_move=self.h0_ridge_move,
                            seed=self.random_state, n_jobs=self.n_jobs)
        if self.target_acceptance is not None:
            key = ("target_acceptance_ram" if self.h0_update == "repelling_attracting"
                   else "target_acceptance_rw")
            cfg = replace(cfg, **{key: self.target_acceptance})
        return cfg

    def fit(self, X, y=None):
        lenses = check_dataset(X)
        err = ErrorModel.coerce(self.error_model)
        self.chains_ = run_chains(self._sampler_config(), lenses, err)
        self.summary_ = summarize(self.chains_)
        self.lens_ids_ = self.chains_.lens_ids
        self.h0_mean_ = self.summary_["h0"].mean
        self.h0_sd_ = self.summary_["h0"].sd
        self.dataset_ = lenses
        return self

    def _thinned(self, max_draws=1000):
        ch = self.chains_
        h0 = ch.pooled("h0")
        om = ch.pooled("omega_m")
        kappa = np.concatenate([c.kappa for c in ch.chains])
        idx = np.unique(np.linspace(0, h0.size - 1, min(max_draws, h0.size)).round().astype(int))
        return h0[idx], om[idx], kappa[idx]

    def _packed_for(self, X):
        lenses = check_dataset(X)
        unknown = [lens.lens_id for lens in lenses if lens.lens_id not in self.lens_ids_]
        if unknown:
            raise ValueError(f"lenses not seen during fit: {unknown}")
        return PackedDataset(lenses)

    def predict(self, X, max_draws=1000):
        """Posterior-mean predicted Fermat difference (rad^2) for every pair of ``X``."""
        check_is_fitted(self, "chains_")
        data = self._packed_for(X)
        cols = [self.lens_ids_.index(i) for i in data.lens_ids]
        h0, om, kappa = self._thinned(max_draws)
        out = np.zeros(data.n_pairs)
        for i in range(h0.size):
            loc, _ = data.location_scale(h0[i], kappa[i, cols], data.ddt_times_h0(om[i]))
            out += loc
        return out / h0.size

    def score(self, X, y=None, max_draws=1000):
        """Mean log pointwise posterior predictive density of the Fermat estimates in ``X``."""
        check_is_fitted(self, "chains_")
        data = self._packed_for(X)
        cols = [self.lens_ids_.index(i) for i in data.lens_ids]
        err = ErrorModel.coerce(self.error_model)
        h0, om, kappa = self._thinned(max_draws)
        ll = np.array([data.pair_log_likelihoods(h0[i], kappa[i, cols],
                                                 data.ddt_times_h0(om[i]), err)
                       for i in range(h0.size)])
        peak = ll.max(axis=0)
        lppd = peak + np.log(np.mean(np.exp(ll - peak), axis=0))
        return float(np.mean(lppd))

    def posterior_predictive_check(self, X=None, random_state=None, n_draws=1000):
        check_is_fitted(self, "chains_")
        data = self.dataset_ if X is None else check_dataset(X)
        return posterior_predictive_check(self.chains_, data, self.error_model,
                                          random_state, n_draws)
