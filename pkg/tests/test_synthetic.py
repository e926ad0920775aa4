import numpy as np
import pytest
from scipy.special import expit

from cmidebias.errors import CalibrationFailed
from cmidebias.synthetic import (
    SyntheticConfig,
    calibrate_intercept,
    coat_like_ratings,
    generate,
    generate_full,
    population_intercept,
    true_cmi,
)


def plugin_cmi(a, c, x):
    """Discrete I(A; C | X) from a count table."""
    t = np.zeros((x.max() + 1, a.max() + 1, 2))
    np.add.at(t, (x, a, c), 1)
    p = t / t.sum()
    px, pxa, pxc = p.sum((1, 2), keepdims=True), p.sum(2, keepdims=True), p.sum(1, keepdims=True)
    m = p > 0
    return float(np.sum(p[m] * np.log((p * px / (pxa * pxc))[m])))


def quantile_bins(v, k):
    return np.searchsorted(np.quantile(v, np.linspace(0, 1, k + 1)[1:-1]), v)


@pytest.fixture(scope="module")
def biased():
    return generate_full(SyntheticConfig(n_users=100, n_items=500, bias_strength=4.0, seed=3))


def test_generation_is_seed_deterministic():
    cfg = SyntheticConfig(n_users=10, n_items=30, seed=5)
    a, b = generate(cfg), generate(cfg)
    assert a[0].equals(b[0]) and a[1].equals(b[1])
    assert not generate(SyntheticConfig(n_users=10, n_items=30, seed=6))[0].equals(a[0])


def test_logged_and_oracle_structure(biased):
    mnar, mar = biased.mnar, biased.mar_oracle
    assert np.all(mnar.click <= mnar.exposure)
    assert np.all(mar.exposure == 1)
    assert len(mar) == 100 * 500
    # every exposed pair is logged, plus about a tenth of the unexposed ones
    n_unexposed = len(mar) - mnar.exposure.sum()
    assert (mnar.exposure == 0).sum() / n_unexposed == pytest.approx(0.1, abs=0.01)


def test_mean_exposure_matches_budget():
    cfg = SyntheticConfig(n_users=50, n_items=400, exposure_budget=0.3, seed=1)
    g = generate_full(cfg)
    s = cfg.relevance_strength * (g.mar_oracle.x_r @ g.preference) / np.sqrt(cfg.feature_dim)
    p = expit(s + cfg.bias_strength * (g.mar_oracle.x_nr - 0.5) + g.beta0)
    assert p.mean() == pytest.approx(0.3, abs=0.005)


def test_calibration_failure():
    with pytest.raises(CalibrationFailed):
        calibrate_intercept(np.zeros(4), 0.9, steps=1)


def test_exposure_rises_across_bias_strata(biased):
    mnar = biased.mnar
    strata = quantile_bins(mnar.x_nr, 5)
    # unexposed rows were kept at rate 0.1, so count each one ten times
    rate = []
    for k in range(5):
        rows = strata == k
        exposed = mnar.exposure[rows].sum()
        rate.append(exposed / (exposed + 10 * (rows.sum() - exposed)))
    assert rate[-1] >= 2 * rate[0]


def test_oracle_click_rate_matches_integral():
    cfg = SyntheticConfig(n_users=100, n_items=500, seed=2)
    _, mar = generate(cfg)
    z, w = np.polynomial.hermite_e.hermegauss(80)
    expected = float(w @ expit(cfg.click_strength * cfg.relevance_strength * z / np.sqrt(cfg.feature_dim)))
    expected /= np.sqrt(2 * np.pi)
    assert mar.click.mean() == pytest.approx(expected, abs=0.01)


def test_no_bias_means_no_dependence():
    v = true_cmi(SyntheticConfig(bias_strength=0.0), 100_000)
    assert abs(v.value) <= 3 * v.se + 1e-15
    v = true_cmi(SyntheticConfig(bias_strength=0.0), 100_000, target="exposure")
    assert v.value > 0  # a click still requires exposure, so E and C stay dependent


def test_no_bias_plugin_estimate_is_small():
    g = generate_full(SyntheticConfig(n_users=100, n_items=500, bias_strength=0.0, seed=4))
    mnar = g.mnar
    s = mnar.x_r @ g.preference
    assert plugin_cmi(quantile_bins(mnar.x_nr, 5), mnar.click.astype(int), quantile_bins(s, 20)) <= 0.02


def test_biased_oracle_is_positive_and_precise():
    v = true_cmi(SyntheticConfig(bias_strength=4.0), 1_000_000)
    assert v.value > 0 and v.se < 0.005


def test_standard_error_scales_with_sample_size():
    cfg = SyntheticConfig(bias_strength=4.0)
    ratio = true_cmi(cfg, 400_000).se / true_cmi(cfg, 100_000).se
    assert ratio == pytest.approx(0.5, rel=0.2)


@pytest.mark.parametrize("target,tol", [("exposure", 0.003), ("bias_attribute", 0.002)])
def test_oracle_matches_simulated_plugin(target, tol):
    """A direct simulation of the generative law, binned finely, reproduces the oracle."""
    cfg = SyntheticConfig(bias_strength=4.0)
    b0 = population_intercept(cfg)
    rng = np.random.default_rng(7)
    n = 2_000_000
    s = cfg.relevance_strength * rng.standard_normal(n) / np.sqrt(cfg.feature_dim)
    x = rng.random(n)
    e = rng.random(n) < expit(s + cfg.bias_strength * (x - 0.5) + b0)
    c = e & (rng.random(n) < expit(cfg.click_strength * s))
    keep = e | (rng.random(n) < 0.1)
    first = e.astype(int) if target == "exposure" else quantile_bins(x, 20)
    sim = plugin_cmi(first[keep], c[keep].astype(int), quantile_bins(s, 60)[keep])
    assert true_cmi(cfg, 200_000, target=target).value == pytest.approx(sim, abs=tol)


def test_unknown_oracle_target():
    with pytest.raises(ValueError):
        true_cmi(SyntheticConfig(), 100, target="popularity")


def test_coat_like_layout():
    m = coat_like_ratings(seed=1, n_users=40, n_items=60, train_per_user=6, test_per_user=4)
    assert m.train.shape == m.test.shape == (40, 60)
    assert np.all((m.train > 0).sum(1) == 6) and np.all((m.test > 0).sum(1) == 4)
    assert not np.any((m.train > 0) & (m.test > 0))
    assert set(np.unique(m.train[m.train > 0])) <= {1, 2, 3, 4, 5}
    assert m.user_features.shape == (40, 14) and m.item_features.shape == (60, 33)
    assert np.all(m.user_features.sum(1) == 4) and np.all(m.item_features.sum(1) == 4)


def test_coat_like_self_selection_favours_high_ratings():
    m = coat_like_ratings(seed=0)
    assert m.train[m.train > 0].mean() > m.test[m.test > 0].mean() + 0.3


@pytest.mark.parametrize("kwargs", [{"n_users": 0}, {"bias_strength": -1.0}, {"click_strength": 0.0},
                                    {"exposure_budget": 1.5}, {"x_nr_dist": "normal"}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SyntheticConfig(**kwargs)
