import numpy as np
import pandas as pd
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from h0meta import H0MetaAnalysis, check_dataset
from h0meta.likelihood import PackedDataset

FAST = dict(n_chains=2, n_iterations=600, random_state=0)


def as_columns(lenses):
    cols = {k: [] for k in ("lens_id", "z_d", "z_s", "pair_label", "delta_hat_days",
                            "sigma_delta_days", "phi_hat", "sigma_phi")}
    for lens in lenses:
        for p in lens.pairs:
            for k, v in zip(cols, (lens.lens_id, lens.z.z_d, lens.z.z_s, p.pair_label,
                                   p.delta_hat, p.sigma_delta, p.phi_hat, p.sigma_phi)):
                cols[k].append(v)
    return cols


@pytest.fixture(scope="module")
def fitted():
    from h0meta.simulate import PopulationSpec, generate_population
    lenses, _ = generate_population(PopulationSpec(n_quads=3, n_doubles=1, h0_true=70.0),
                                    np.random.default_rng(7))
    return H0MetaAnalysis(**FAST).fit(lenses), lenses


def test_params_round_trip():
    est = H0MetaAnalysis(error_model="gaussian", h0_update="repelling_attracting")
    params = est.get_params()
    assert params["error_model"] == "gaussian" and params["h0_ridge_move"] is None
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(n_chains=3)
    assert twin.n_chains == 3 and est.n_chains == 5


def test_target_acceptance_routed():
    assert H0MetaAnalysis(target_acceptance=0.3)._sampler_config().target_acceptance == 0.3
    ram = H0MetaAnalysis(h0_update="repelling_attracting", target_acceptance=0.2)
    assert ram._sampler_config().target_acceptance == 0.2
    assert ram._sampler_config().ridge_move


def test_fit_attributes(fitted):
    est, lenses = fitted
    assert est.lens_ids_ == tuple(l.lens_id for l in lenses)
    assert est.h0_mean_ == est.summary_["h0"].mean
    assert len(est.summary_.parameters) == 2 + len(lenses)
    assert 55 < est.h0_mean_ < 85


def test_predict_and_score(fitted):
    est, lenses = fitted
    pred = est.predict(lenses)
    observed = PackedDataset(lenses).phi_hat
    assert pred.shape == observed.shape
    np.testing.assert_allclose(pred, observed, rtol=0.2)
    assert np.isfinite(est.score(lenses))
    with pytest.raises(ValueError):
        from h0meta.likelihood import LensSystem
        est.predict([LensSystem("new", lenses[0].z, lenses[0].pairs)])


def test_subset_prediction_matches_full(fitted):
    est, lenses = fitted
    full = est.predict(lenses)
    part = est.predict(lenses[1:2])
    n0 = len(lenses[0].pairs)
    np.testing.assert_allclose(part, full[n0:n0 + len(lenses[1].pairs)], rtol=1e-12)


def test_ppc(fitted):
    est, _ = fitted
    res = est.posterior_predictive_check(random_state=0, n_draws=200)
    assert 0 <= res.global_p <= 1


def test_not_fitted():
    with pytest.raises(NotFittedError):
        H0MetaAnalysis().predict([])


def test_check_dataset_tables(small_population):
    lenses, _ = small_population
    cols = as_columns(lenses)
    assert check_dataset(cols) == lenses
    assert check_dataset(pd.DataFrame(cols)) == lenses
    assert check_dataset(PackedDataset(lenses)) == lenses
    arcsec = dict(cols, phi_hat=[v / 2.350443e-11 for v in cols["phi_hat"]],
                  sigma_phi=[v / 2.350443e-11 for v in cols["sigma_phi"]],
                  phi_unit=["arcsec2"] * len(cols["lens_id"]))
    back = check_dataset(arcsec)
    assert back[0].pairs[0].phi_hat == pytest.approx(lenses[0].pairs[0].phi_hat, rel=1e-6)


def test_check_dataset_errors(small_population):
    lenses, _ = small_population
    with pytest.raises(TypeError):
        check_dataset([1, 2])
    with pytest.raises(ValueError):
        check_dataset([lenses[0], lenses[0]])
    with pytest.raises(ValueError):
        check_dataset({"lens_id": ["A"]})
