import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from cmidebias.baselines import (
    PropensityModel,
    fit_nb_propensity,
    ips_evaluate,
    ips_metrics,
    ips_weights,
    stratified_evaluate,
)
from cmidebias.click_model import fit, score
from cmidebias.errors import ZeroMarMass
from cmidebias.metrics import evaluate
from cmidebias.perturbation import discretize


# --- Naive-Bayes propensities ---------------------------------------------------------


def test_identical_histograms_give_the_overall_rate():
    m = fit_nb_propensity([10, 20, 30, 25, 15], [10, 20, 30, 25, 15], 0.08)
    np.testing.assert_allclose(m.propensities, 0.08, rtol=1e-15)


def test_coat_overall_rate():
    assert 6960 / (290 * 300) == pytest.approx(0.08, abs=1e-3)


def test_doubled_logged_mass_doubles_the_propensity():
    m = fit_nb_propensity({1: 30, 2: 20, 3: 20, 4: 10, 5: 20}, {1: 35, 2: 25, 3: 20, 4: 10, 5: 10}, 0.1)
    assert m.propensity([5])[0] == pytest.approx(0.2, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 100), min_size=5, max_size=5), st.lists(st.integers(1, 100), min_size=5, max_size=5),
       st.integers(2, 50))
def test_scaling_both_histograms_changes_nothing(mnar, mar, c):
    a = fit_nb_propensity(mnar, mar, 0.08)
    b = fit_nb_propensity(np.array(mnar) * c, np.array(mar) * c, 0.08)
    np.testing.assert_allclose(a.propensities, b.propensities, rtol=1e-12)
    assert all(0.01 <= p <= 1.0 for p in a.propensities)


def test_zero_random_mass_is_an_error():
    with pytest.raises(ZeroMarMass):
        fit_nb_propensity([1, 2, 3], [1, 0, 3], 0.1)


def test_rating_absent_from_both_gets_the_overall_rate():
    assert fit_nb_propensity([1, 0, 3], [1, 0, 3], 0.1).propensities[1] == 0.1


def test_propensities_are_clipped():
    m = fit_nb_propensity([1, 99], [99, 1], 0.1)
    assert m.propensities == (0.01, 1.0)


def test_propensity_model_json_round_trip():
    m = fit_nb_propensity([5, 10, 3], [6, 6, 6], 0.2)
    assert PropensityModel.from_json(m.to_json()) == m


# --- inverse-propensity evaluation ------------------------------------------------------


def test_constant_propensities_reproduce_plain_metrics(rng):
    s, y = rng.random(50), rng.integers(0, 2, 50)
    a, b = ips_metrics(s, y, np.full(50, 0.3)), evaluate(s, y)
    for k in ("auc", "precision", "recall", "f1"):
        assert a.metric(k) == b.metric(k)


def test_two_row_weights_match_replication():
    # weights 1 and 3: one false positive and three true positives
    r = ips_metrics([0.9, 0.8], [0, 1], [1.0, 1 / 3])
    assert r.precision == pytest.approx(0.75, abs=1e-15)
    plain = evaluate([0.9, 0.8, 0.8, 0.8], [0, 1, 1, 1])
    assert r.precision == pytest.approx(plain.precision, abs=1e-15)
    assert r.auc == plain.auc


def test_integer_weights_match_replication(rng):
    s, y = rng.random(40), rng.integers(0, 2, 40)
    w = rng.integers(1, 6, 40)
    a = ips_metrics(s, y, 1.0 / w)
    b = evaluate(np.repeat(s, w), np.repeat(y, w))
    for k in ("auc", "precision", "recall", "f1"):
        assert a.metric(k) == pytest.approx(b.metric(k), abs=1e-12)


def test_self_normalized_rates_equal_ips_when_weights_sum_to_n():
    s, y = [0.9, 0.2, 0.6, 0.4], [1, 0, 1, 1]
    unit = ips_metrics(s, y, [1.0] * 4)
    assert unit.extras["weight_sum"] == 4.0
    assert unit.extras["ips"] == unit.extras["snips"]
    # in general the two differ by the factor n / sum(weights)
    r = ips_metrics(s, y, [0.5, 0.25, 1.0, 0.1])
    factor = 4 / r.extras["weight_sum"]
    for k, v in r.extras["ips"].items():
        assert r.extras["snips"][k] == pytest.approx(v * factor, rel=1e-12)


def test_clipping_bounds_the_weights():
    np.testing.assert_allclose(ips_weights([1e-6, 0.5, 1.0]), [100.0, 2.0, 1.0])
    with pytest.raises(ValueError):
        ips_weights([0.0, 0.5])


def test_ips_evaluate_uses_model_scores():
    ds = make_dataset(40)
    model = fit(ds)
    rep = ips_evaluate(model, ds, np.full(40, 0.5), scenario="E3")
    assert rep.scenario == "E3" and rep.weighting == "ips"
    assert rep.auc == evaluate(score(model, ds), ds.click).auc


# --- stratified evaluation --------------------------------------------------------------------


def test_stratified_evaluate_single_stratum_equals_plain():
    ds = make_dataset(60)
    model = fit(ds)
    bins = discretize(ds, 1)
    rep = stratified_evaluate(model, ds, bins)
    plain = evaluate(score(model, ds), ds.click)
    assert rep.auc == pytest.approx(plain.auc, abs=1e-15)


def test_stratified_evaluate_checks_lengths():
    ds = make_dataset(30)
    with pytest.raises(ValueError):
        stratified_evaluate(fit(ds), ds, discretize(make_dataset(20), 2))
