import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import coin_dataset, coin_oracle_counts
from cmidebias.cmi import (
    StatNetConfig,
    conditional_permutation,
    dv_objective,
    estimate_cmi_dv,
    first_variable,
    knn_neighbors,
    plugin_cmi_discrete,
    plugin_counts,
    split_holdout,
)
from cmidebias.data import Dataset, copy_groups
from cmidebias.errors import EmptyCounts, NonBinaryVariables, TooFewRows

LN2 = math.log(2.0)


# --- plug-in oracle ---------------------------------------------------------------


def entropy_identity_cmi(counts):
    """I(A; C | X) = H(A, X) + H(C, X) - H(A, C, X) - H(X), from raw entropies."""
    p = np.asarray(counts, dtype=float)
    p = p / p.sum()

    def h(q):
        q = q[q > 0]
        return -float(np.sum(q * np.log(q)))

    return h(p.sum(axis=2)) + h(p.sum(axis=1)) - h(p) - h(p.sum(axis=(1, 2)))


def test_plugin_independent_is_zero():
    assert plugin_cmi_discrete(coin_oracle_counts("independent")) == 0.0


def test_plugin_identity_channel_is_ln2():
    assert plugin_cmi_discrete([[[5, 0], [0, 5]]]) == pytest.approx(LN2, abs=1e-15)


def test_plugin_mixture_is_half_ln2():
    assert plugin_cmi_discrete(coin_oracle_counts("mixture")) == pytest.approx(0.5 * LN2, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 4), st.integers(1, 3), st.integers(1, 3)),
              elements=st.integers(0, 30)))
def test_plugin_matches_entropy_identity(counts):
    if counts.sum() == 0:
        with pytest.raises(EmptyCounts):
            plugin_cmi_discrete(counts)
        return
    v = plugin_cmi_discrete(counts)
    assert v >= 0.0
    assert v == pytest.approx(max(entropy_identity_cmi(counts), 0.0), abs=1e-10)
    # relabelling the values of either variable leaves the value unchanged
    assert plugin_cmi_discrete(counts[:, ::-1, :]) == pytest.approx(v, abs=1e-12)


def test_plugin_counts_table():
    t = plugin_counts([0, 0, 1, 1], [0, 1, 1, 1], [1, 1, 0, 0])
    assert t.shape == (2, 2, 2)
    assert t[0, 0, 1] == 1 and t[0, 1, 1] == 1 and t[1, 1, 0] == 2


# --- neighbours and conditional permutation ---------------------------------------------


def test_knn_excludes_self_and_finds_nearest():
    x = np.array([[0.0], [1.0], [3.0], [7.0]])
    nb = knn_neighbors(x, 1)
    assert nb[:, 0].tolist() == [1, 0, 1, 2]


def test_permutation_on_sign_grid_keeps_same_sign_clicks():
    x = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
    click = (x > 0).astype(int)
    ds = Dataset.from_arrays(x[:, None], np.zeros(6), np.ones(6), click)
    for seed in range(5):
        out = conditional_permutation(ds, knn_k=1, seed=seed)
        np.testing.assert_array_equal(out.click, click)


def test_permutation_preserves_click_determined_by_features(rng):
    x = rng.uniform(-1, 1, 4000)
    click = (x > 0).astype(int)
    ds = Dataset.from_arrays(x[:, None], np.zeros(len(x)), np.ones(len(x)), click)
    out = conditional_permutation(ds, knn_k=5, seed=1)
    assert np.mean(out.click == click) > 0.995
    # only rows next to the decision boundary can change
    assert np.all(np.abs(x[out.click != click]) < 0.01)


def test_permutation_needs_more_rows_than_neighbours():
    ds = Dataset.from_arrays(np.zeros((3, 1)), np.zeros(3), np.ones(3), [0, 1, 0])
    with pytest.raises(TooFewRows):
        conditional_permutation(ds, knn_k=5)


def test_permutation_never_donates_from_a_copy_of_the_same_row(rng):
    base = Dataset.from_arrays(rng.standard_normal((30, 2)), np.zeros(30), np.ones(30), rng.integers(0, 2, 30))
    dup = base.take(np.repeat(np.arange(30), 4))
    group, _ = copy_groups(dup)
    from cmidebias.cmi import neighbour_donor_pool

    pool = neighbour_donor_pool(dup, dup.x_r, 3, seed=0)
    assert not np.any(group[pool] == group[:, None])


# --- holdout split ------------------------------------------------------------------------


def test_holdout_keeps_copies_together():
    group = np.array([0, 1, 0, 2, 3, 1, 4, 4, 4, 5])
    train, hold = split_holdout(group, 6, 0.5, seed=2)
    assert len(np.intersect1d(train, hold)) == 0
    assert len(train) + len(hold) == len(group)
    assert not set(group[train]) & set(group[hold])
    assert len(set(group[hold])) == 3


def test_holdout_fraction_zero_is_empty():
    train, hold = split_holdout(np.arange(10), 10, 0.0, seed=0)
    assert len(hold) == 0 and len(train) == 10


# --- estimator --------------------------------------------------------------------------------


def test_dv_objective_of_constant_critic_is_zero():
    assert dv_objective(np.full(5, 2.0), np.full(7, 2.0)) == pytest.approx(0.0, abs=1e-12)


def test_first_variable_standardizes_bias_attribute(small_dataset):
    a = first_variable(small_dataset, "bias_attribute")
    assert a.mean() == pytest.approx(0.0, abs=1e-12) and a.std() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        first_variable(small_dataset, "popularity")


def test_estimator_rejects_non_binary_clicks():
    ds = Dataset.from_arrays(np.zeros((20, 1)), np.zeros(20), np.ones(20), np.arange(20) % 3)
    with pytest.raises(NonBinaryVariables):
        estimate_cmi_dv(ds, StatNetConfig(epochs=1))


def test_estimator_is_deterministic_and_records_curve():
    ds = coin_dataset("identical", 1500, seed=3)
    cfg = StatNetConfig(epochs=5, seed=3)
    a, b = estimate_cmi_dv(ds, cfg), estimate_cmi_dv(ds, cfg)
    assert a.value == b.value
    np.testing.assert_array_equal(a.train_curve, b.train_curve)
    assert len(a.train_curve) == 5
    assert a.n_joint == 300  # a fifth of the observations is held out
    assert a.to_dict()["unclamped"] == a.train_curve[-1]


def test_estimator_value_is_clamped_at_zero():
    est = estimate_cmi_dv(coin_dataset("independent", 2000, seed=1), StatNetConfig(epochs=3, seed=1))
    assert est.value == max(0.0, est.unclamped)


@pytest.mark.parametrize("kwargs", [
    {"activation": "gelu"}, {"hidden_layers": (0,)}, {"epochs": 0}, {"holdout_fraction": 1.0},
    {"ema_decay": 1.0}, {"input_noise": -0.1},
])
def test_statnet_config_validation(kwargs):
    with pytest.raises(ValueError):
        StatNetConfig(**kwargs)


@pytest.mark.slow
@pytest.mark.parametrize("case,lo,hi", [
    ("independent", 0.0, 0.02),
    ("identical", 0.62, 0.70),
    ("mixture", 0.5 * LN2 - 0.05, 0.5 * LN2 + 0.05),
])
def test_estimator_on_analytic_cases(case, lo, hi):
    est = estimate_cmi_dv(coin_dataset(case, 20_000, seed=0), StatNetConfig(seed=0))
    assert lo <= est.value <= hi
