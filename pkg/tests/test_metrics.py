import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wasserstein_distance

from conftest import make_dataset
from cmidebias.click_model import ClickModelConfig, fit, logistic_model
from cmidebias.errors import AllStrataEmpty, DegenerateLabels, EmptySample, LengthMismatch, SchemaMismatch
from cmidebias.metrics import (
    EvalReport,
    auc_score,
    conditional_score_gap,
    confusion,
    evaluate,
    stratified_metrics,
    wasserstein_1d,
)


def pairwise_auc(s, y):
    pos = [a for a, t in zip(s, y) if t == 1]
    neg = [b for b, t in zip(s, y) if t == 0]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


# --- evaluate ----------------------------------------------------------------------------


def test_perfect_separation():
    r = evaluate([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert (r.auc, r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0, 1.0)


def test_all_scores_tied():
    assert auc_score(np.full(6, 0.3), [1, 0, 1, 0, 0, 1]) == 0.5


def test_interleaved_example():
    r = evaluate([0.9, 0.4, 0.6, 0.1], [1, 0, 1, 0], threshold=0.5)
    assert r.auc == pairwise_auc([0.9, 0.4, 0.6, 0.1], [1, 0, 1, 0]) == 1.0
    assert r.precision == 1.0 and r.recall == 1.0


def test_score_at_threshold_is_positive():
    assert confusion([0.5, 0.49], [1, 0]) == (1.0, 0.0, 0.0, 1.0)


def test_f1_with_no_predicted_positives_is_zero():
    r = evaluate([0.1, 0.2], [1, 0])
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)


def test_single_class_flags_auc():
    r = evaluate([0.1, 0.7], [1, 1])
    assert not r.auc_defined and np.isnan(r.auc)
    with pytest.raises(DegenerateLabels):
        auc_score([0.1, 0.7], [1, 1])


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        evaluate([0.1, 0.2], [1])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 60).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.2, 0.5, 0.7, 1.0]), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n))))
def test_auc_matches_pairwise_count(args):
    s, y = args
    if len(set(y)) < 2:
        return
    assert auc_score(s, y) == pytest.approx(pairwise_auc(s, y), abs=1e-12)
    # strictly increasing transforms and row shuffles change nothing
    assert auc_score(np.exp(3 * np.asarray(s)), y) == pytest.approx(auc_score(s, y), abs=1e-12)
    perm = np.random.default_rng(len(s)).permutation(len(s))
    assert auc_score(np.asarray(s)[perm], np.asarray(y)[perm]) == pytest.approx(auc_score(s, y), abs=1e-12)


def test_integer_weights_equal_replication(rng):
    s = rng.random(40)
    y = rng.integers(0, 2, 40)
    w = rng.integers(0, 4, 40)
    a = evaluate(s, y, weights=w)
    b = evaluate(np.repeat(s, w), np.repeat(y, w))
    for k in ("auc", "precision", "recall", "f1"):
        assert a.metric(k) == pytest.approx(b.metric(k), abs=1e-12)


def test_report_json_round_trip():
    r = evaluate([0.1, 0.7], [1, 1], scenario="E2")
    d = json.loads(r.to_json())
    assert d["auc"] is None and d["report_version"] == 1
    back = EvalReport.from_dict(d)
    assert np.isnan(back.auc) and back.scenario == "E2" and back.precision == r.precision


# --- stratified ---------------------------------------------------------------------------


def test_single_stratum_equals_plain(rng):
    s, y = rng.random(30), rng.integers(0, 2, 30)
    a, b = stratified_metrics(s, y, np.zeros(30)), evaluate(s, y)
    for k in ("auc", "precision", "recall", "f1"):
        assert a.metric(k) == pytest.approx(b.metric(k), abs=1e-15)


def test_strata_are_equally_weighted():
    s = [0.9, 0.1, 0.6, 0.6, 0.6, 0.6]
    y = [1, 0, 1, 0, 1, 0]
    r = stratified_metrics(s, y, [0, 0, 1, 1, 1, 1])
    assert [p["auc"] for p in r.strata] == [1.0, 0.5]
    assert r.auc == 0.75


def test_single_class_stratum_is_skipped_for_auc():
    s = [0.9, 0.1, 0.8, 0.7]
    y = [1, 0, 1, 1]
    r = stratified_metrics(s, y, ["a", "a", "b", "b"])
    assert r.auc == 1.0
    assert r.skipped_strata == [{"stratum": "b", "n_rows": 2, "metrics": ["auc"], "reason": "single class"}]
    assert r.recall == 1.0  # recall is defined in both strata


def test_no_stratum_defines_auc():
    r = stratified_metrics([0.2, 0.9, 0.3], [0, 0, 1], [0, 0, 1])
    assert np.isnan(r.auc) and not r.auc_defined


def test_empty_input():
    with pytest.raises(AllStrataEmpty):
        stratified_metrics([], [], [])


def test_stratum_labels_can_be_permuted(rng):
    s, y = rng.random(60), rng.integers(0, 2, 60)
    strata = rng.integers(0, 4, 60)
    relabel = np.array([3, 0, 2, 1])[strata]
    a, b = stratified_metrics(s, y, strata), stratified_metrics(s, y, relabel)
    for k in ("auc", "precision", "recall", "f1"):
        assert a.metric(k) == pytest.approx(b.metric(k), abs=1e-15)


# --- Wasserstein ----------------------------------------------------------------------------


def test_wasserstein_hand_values():
    assert wasserstein_1d([0.3, 0.1], [0.1, 0.3]) == 0.0
    assert wasserstein_1d([0.0], [1.0]) == 1.0
    assert wasserstein_1d([0.0, 1.0], [0.5, 0.5]) == 0.5


def test_wasserstein_empty():
    with pytest.raises(EmptySample):
        wasserstein_1d([], [1.0])


samples = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=25)


@settings(max_examples=150, deadline=None)
@given(samples, samples, samples)
def test_wasserstein_is_a_metric_and_matches_scipy(a, b, c):
    ab = wasserstein_1d(a, b)
    assert ab == pytest.approx(wasserstein_distance(a, b), abs=1e-9)
    assert ab == pytest.approx(wasserstein_1d(b, a), abs=1e-12)
    assert wasserstein_1d(a, c) <= ab + wasserstein_1d(b, c) + 1e-9
    assert (ab == 0.0) == (sorted(a) == sorted(b)) or ab < 1e-12


# --- conditional score gap ---------------------------------------------------------------------


def test_identical_models_have_zero_gap():
    ds = make_dataset(40)
    base = fit(ds)
    with_bf = logistic_model(np.r_[base.params["weights"], 0.0], float(base.params["bias"]))
    with_bf.feature_schema.update(feature_dim=3, include_bias_factor=True)
    matched, split = conditional_score_gap(ds, base, with_bf, subsets=(ds.click == 1, ds.click == 0))
    assert matched == pytest.approx(0.0, abs=1e-15)
    assert split > 0.0


def test_gap_requires_matching_features():
    a = fit(make_dataset(30, d=3))
    b = fit(make_dataset(30, d=2), ClickModelConfig(include_bias_factor=True))
    with pytest.raises(SchemaMismatch):
        conditional_score_gap(make_dataset(30, d=3), a, b)
