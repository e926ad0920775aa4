import math

import numpy as np
import pytest

from conftest import make_dataset
from cmidebias.click_model import (
    CLAMP,
    ClickModelConfig,
    FittedClickModel,
    bce,
    bce_loss,
    design_matrix,
    fit,
    logistic_loss_and_grad,
    logistic_model,
    predict,
    score,
    stump_loss_and_grad,
)
from cmidebias.data import Dataset
from cmidebias.errors import SchemaMismatch, SingleClassTargetWarning
from cmidebias.metrics import auc_score

KINDS = ("logistic", "boosted_stumps")


@pytest.fixture
def separable():
    rng = np.random.default_rng(0)
    x = np.r_[-rng.uniform(1, 3, 100), rng.uniform(1, 3, 100)]
    return Dataset.from_arrays(x[:, None], np.zeros(200), np.ones(200), (x > 0).astype(int))


@pytest.mark.parametrize("kind", KINDS)
def test_separable_data_is_fit(separable, kind):
    model = fit(separable, ClickModelConfig(model_kind=kind))
    assert bce_loss(model, separable) < 0.05
    assert auc_score(score(model, separable), separable.click) == 1.0


def test_logistic_loss_curve_is_non_increasing(small_dataset):
    curve = fit(small_dataset).train_loss_curve
    assert np.all(np.diff(curve) <= 1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_single_class_target_gives_constant_predictor(kind):
    ds = make_dataset(20, click_rate=1.1)  # every click is 1
    with pytest.warns(SingleClassTargetWarning):
        model = fit(ds, ClickModelConfig(model_kind=kind))
    assert model.single_class
    p = score(model, ds)
    assert np.all(p == p[0]) and p[0] > 1 - 1e-9


def central_difference(f, theta, h=1e-6):
    out = np.empty_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


def test_logistic_gradient_matches_finite_differences(rng):
    x = rng.standard_normal((60, 4))
    y = rng.integers(0, 2, 60).astype(float)
    sw = rng.uniform(0.5, 2.0, 60)
    theta = rng.standard_normal(5) * 0.5
    _, grad = logistic_loss_and_grad(theta, x, y, sw, 0.3)
    fd = central_difference(lambda t: logistic_loss_and_grad(t, x, y, sw, 0.3)[0], theta)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-9)


def test_stump_gradient_matches_finite_differences(rng):
    x = rng.integers(0, 4, (50, 3)).astype(float)
    y = rng.integers(0, 2, 50).astype(float)
    sw = np.ones(50)
    params = {"features": np.array([0, 2, 1]), "thresholds": np.array([1.5, 0.5, 2.5])}
    theta = rng.standard_normal(7) * 0.3
    _, grad = stump_loss_and_grad(theta, params, x, y, sw, 0.1)
    fd = central_difference(lambda t: stump_loss_and_grad(t, params, x, y, sw, 0.1)[0], theta)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-9)


def test_fit_is_deterministic(small_dataset):
    for kind in KINDS:
        a = fit(small_dataset, ClickModelConfig(model_kind=kind, seed=3))
        b = fit(small_dataset, ClickModelConfig(model_kind=kind, seed=3))
        assert a.to_json() == b.to_json()


def test_integer_sample_weights_act_like_replication(small_dataset):
    w = np.arange(len(small_dataset)) % 3 + 1
    weighted = fit(small_dataset, ClickModelConfig(epochs=300), sample_weight=w)
    replicated = fit(small_dataset.take(np.repeat(np.arange(len(small_dataset)), w)), ClickModelConfig(epochs=300))
    np.testing.assert_allclose(score(weighted, small_dataset), score(replicated, small_dataset), atol=1e-6)


def test_bias_factor_adds_inputs():
    cont = make_dataset(30)
    cat = make_dataset(30, continuous=False)
    m_cont = fit(cont, ClickModelConfig(include_bias_factor=True))
    m_cat = fit(cat, ClickModelConfig(include_bias_factor=True))
    assert design_matrix(cont, m_cont.feature_schema).shape == (30, 4)
    assert design_matrix(cat, m_cat.feature_schema).shape == (30, 6)
    assert m_cat.feature_schema["bias_labels"] == ["a", "b", "c"]


# --- prediction ---------------------------------------------------------------------------


def test_zero_weights_predict_one_half():
    assert predict(logistic_model(np.zeros(3)), [5.0, -2.0, 7.0]) == 0.5


def test_unit_weight_examples():
    m = logistic_model([1.0])
    assert predict(m, [0.0]) == 0.5
    assert predict(m, [math.log(3.0)]) == pytest.approx(0.75, abs=1e-15)


def test_predictions_are_clamped():
    m = logistic_model([1.0])
    assert predict(m, [1e4]) == 1.0 - CLAMP
    assert predict(m, [-1e4]) == CLAMP


def test_schema_mismatch():
    with pytest.raises(SchemaMismatch):
        predict(logistic_model([1.0, 2.0]), [1.0])
    model = fit(make_dataset(20, d=3))
    with pytest.raises(SchemaMismatch):
        score(model, make_dataset(20, d=2))


@pytest.mark.parametrize("kind", KINDS)
def test_model_json_round_trip(small_dataset, kind):
    model = fit(small_dataset, ClickModelConfig(model_kind=kind, n_stumps=20))
    again = FittedClickModel.from_json(model.to_json())
    np.testing.assert_array_equal(score(model, small_dataset), score(again, small_dataset))
    assert again.to_json() == model.to_json()


# --- loss ------------------------------------------------------------------------------------


def test_bce_of_perfect_predictions_is_the_clamp_cost():
    # -ln(1 - 1e-12) is about 1.0000e-12
    y = np.array([1.0, 0.0, 1.0])
    assert bce(y.copy(), y) == pytest.approx(-math.log1p(-CLAMP), rel=1e-3)


def test_bce_of_one_half_is_ln2(small_dataset):
    assert bce_loss(logistic_model(np.zeros(3)), small_dataset) == pytest.approx(math.log(2.0), abs=1e-15)


def test_bce_single_example():
    assert bce(np.array([0.5]), np.array([1.0])) == pytest.approx(0.6931, abs=1e-4)


def test_config_validation():
    with pytest.raises(ValueError):
        ClickModelConfig(model_kind="catboost")
    with pytest.raises(ValueError):
        ClickModelConfig(epochs=0)
