"""Simulated interaction logs with a known selection mechanism.

Each user-item pair gets relevant features ``x_r ~ N(0, I_d)`` and a
bias attribute ``x_nr``. Exposure depends on relevance and on the bias
attribute; a click needs exposure and depends on relevance only:

    s = a * (u . x_r) / sqrt(d)
    E ~ Bernoulli(sigmoid(s + b * (x_nr - mean(x_nr)) + beta0))
    C = E * Bernoulli(sigmoid(c * s))

``beta0`` is calibrated so that the mean exposure probability matches the
exposure budget. The logged (MNAR) data keep every exposed pair plus a 10%
sample of unexposed ones; the oracle (MAR) data expose every pair.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit, ndtri

from .data import Dataset
from .errors import CalibrationFailed

UNEXPOSED_KEEP = 0.1
X_NR_MEAN = {"uniform01": 0.5, "exponential": 1.0}

# independent random streams
_S_XR, _S_XNR, _S_EXPOSE, _S_CLICK, _S_KEEP, _S_MAR, _S_ORACLE = range(7)


@dataclass(frozen=True)
class SyntheticConfig:
    n_users: int = 100
    n_items: int = 200
    feature_dim: int = 8
    bias_strength: float = 4.0
    relevance_strength: float = 2.0
    click_strength: float = 2.0
    exposure_budget: float = 0.3
    x_nr_dist: str = "uniform01"
    seed: int = 0

    def __post_init__(self):
        if self.n_users <= 0 or self.n_items <= 0 or self.feature_dim <= 0:
            raise ValueError("n_users, n_items and feature_dim must be positive")
        if self.bias_strength < 0:
            raise ValueError("bias_strength must be non-negative")
        if self.relevance_strength <= 0 or self.click_strength <= 0:
            raise ValueError("relevance_strength and click_strength must be positive")
        if not 0.0 < self.exposure_budget <= 1.0:
            raise ValueError("exposure_budget must lie in (0, 1]")
        if self.x_nr_dist not in X_NR_MEAN:
            raise ValueError(f"x_nr_dist must be one of {tuple(X_NR_MEAN)}")

    @property
    def n_pairs(self) -> int:
        return self.n_users * self.n_items

    def to_dict(self) -> dict:
        return asdict(self)


class OracleValue(NamedTuple):
    value: float
    se: float


class GeneratedData(NamedTuple):
    mnar: Dataset
    mar_oracle: Dataset
    beta0: float
    preference: np.ndarray


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


def preference_vector(d: int) -> np.ndarray:
    """The fixed unit preference direction (equal loading on every feature)."""
    return np.full(d, 1.0 / np.sqrt(d))


def calibrate_intercept(logit_base: np.ndarray, budget: float, steps: int = 100, tol: float = 0.005) -> float:
    """Bisection for ``beta0`` with ``mean(sigmoid(logit_base + beta0)) = budget``."""
    lo, hi = -60.0, 60.0
    mid = 0.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        m = float(expit(logit_base + mid).mean())
        if abs(m - budget) <= tol * 1e-3:
            break
        if m < budget:
            lo = mid
        else:
            hi = mid
    if abs(float(expit(logit_base + mid).mean()) - budget) > tol:
        raise CalibrationFailed(f"mean exposure cannot reach {budget} within {steps} bisection steps")
    return mid


def _draw_x_nr(rng, dist: str, n: int) -> np.ndarray:
    return rng.random(n) if dist == "uniform01" else rng.exponential(1.0, n)


def generate_full(cfg: SyntheticConfig) -> GeneratedData:
    n, d = cfg.n_pairs, cfg.feature_dim
    u = preference_vector(d)
    x_r = _rng(cfg.seed, _S_XR).standard_normal((n, d))
    x_nr = _draw_x_nr(_rng(cfg.seed, _S_XNR), cfg.x_nr_dist, n)
    s = cfg.relevance_strength * (x_r @ u) / np.sqrt(d)
    base = s + cfg.bias_strength * (x_nr - X_NR_MEAN[cfg.x_nr_dist])
    beta0 = calibrate_intercept(base, cfg.exposure_budget)
    exposure = (_rng(cfg.seed, _S_EXPOSE).random(n) < expit(base + beta0)).astype(np.int8)
    p_click = expit(cfg.click_strength * s)
    click = (exposure == 1) & (_rng(cfg.seed, _S_CLICK).random(n) < p_click)
    keep = (exposure == 1) | (_rng(cfg.seed, _S_KEEP).random(n) < UNEXPOSED_KEEP)
    pair = np.arange(n)
    users, items = pair // cfg.n_items, pair % cfg.n_items
    names = [f"x{j}" for j in range(d)]
    mnar = Dataset.from_arrays(
        x_r[keep], x_nr[keep], exposure[keep], click[keep].astype(np.int8),
        user_id=users[keep], item_id=items[keep], split="train", feature_names=names,
    )
    mar_click = (_rng(cfg.seed, _S_MAR).random(n) < p_click).astype(np.int8)
    mar = Dataset.from_arrays(
        x_r, x_nr, np.ones(n, dtype=np.int8), mar_click,
        user_id=users, item_id=items, split="benchmark", feature_names=names,
    )
    return GeneratedData(mnar, mar, beta0, u)


def generate(cfg: SyntheticConfig) -> tuple[Dataset, Dataset]:
    """The logged (MNAR) dataset and the fully exposed (MAR) oracle dataset."""
    g = generate_full(cfg)
    return g.mnar, g.mar_oracle


# ---------------------------------------------------------------------------
# exact dependence under the generative law


def _x_nr_quadrature(dist: str, n: int = 64) -> tuple[np.ndarray, np.ndarray]:
    if dist == "uniform01":
        t, w = np.polynomial.legendre.leggauss(n)
        return 0.5 * (t + 1.0), 0.5 * w
    t, w = np.polynomial.laguerre.laggauss(n)
    return t, w


def _bern_kl(p, q):
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(p > 0, p * np.log(p / q), 0.0)
        b = np.where(p < 1, (1 - p) * np.log((1 - p) / (1 - q)), 0.0)
    return a + b


def _entropy(p):
    p = np.clip(p, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(p > 0, p * np.log(p), 0.0)


def population_intercept(cfg: SyntheticConfig, grid: int = 4096) -> float:
    """``beta0`` that matches the exposure budget in expectation over the generative law."""
    s = cfg.relevance_strength / np.sqrt(cfg.feature_dim) * ndtri((np.arange(grid) + 0.5) / grid)
    t, qw = _x_nr_quadrature(cfg.x_nr_dist)
    logit = s[:, None] + cfg.bias_strength * (t - X_NR_MEAN[cfg.x_nr_dist])[None, :]
    lo, hi = -60.0, 60.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if float((expit(logit + mid) @ qw).mean()) < cfg.exposure_budget else (lo, mid)
    return 0.5 * (lo + hi)


def true_cmi(cfg: SyntheticConfig, n_mc: int = 1_000_000, target: str = "bias_attribute",
             beta0: float | None = None) -> OracleValue:
    """Conditional mutual information given x_r under the law of the logged rows.

    ``target`` selects I(x_nr; C | x_r) or I(E; C | x_r). Because selection
    and clicks depend on x_r only through the relevance score ``s``, the
    outer expectation is a Monte-Carlo average over ``s`` and the inner one
    over x_nr uses Gauss quadrature. Rows are weighted by their inclusion
    probability in the log. Returns the value with its delta-method
    standard error.
    """
    rng = _rng(cfg.seed, _S_ORACLE)
    sd = cfg.relevance_strength / np.sqrt(cfg.feature_dim)
    s = sd * rng.standard_normal(n_mc)[:, None]
    t, qw = _x_nr_quadrature(cfg.x_nr_dist)
    base_nr = cfg.bias_strength * (t - X_NR_MEAN[cfg.x_nr_dist])[None, :]
    if beta0 is None:
        beta0 = population_intercept(cfg)
    pi = expit(s + base_nr + beta0)  # P(E=1 | s, x_nr)
    sig = expit(cfg.click_strength * s)  # P(click | exposed, s)
    g = pi + UNEXPOSED_KEEP * (1.0 - pi)  # inclusion probability
    weight = g @ qw  # inclusion probability given s (unnormalized density of s in the log)
    if target == "bias_attribute":
        post = g * qw / weight[:, None]  # density of x_nr given s among logged rows
        q1 = pi * sig / g  # P(C=1 | s, x_nr) among logged rows
        q1_bar = np.sum(post * q1, axis=1, keepdims=True)
        per_s = np.sum(post * _bern_kl(q1, q1_bar), axis=1)
    elif target == "exposure":
        e1 = (pi @ qw) / weight  # P(E=1 | s) among logged rows
        p11 = e1 * sig[:, 0]
        p10 = e1 * (1.0 - sig[:, 0])
        p00 = 1.0 - e1
        h_joint = _entropy(p11) + _entropy(p10) + _entropy(p00)
        per_s = _entropy(e1) + _entropy(1 - e1) + _entropy(p11) + _entropy(1.0 - p11) - h_joint
    else:
        raise ValueError(f"unknown target {target!r}")
    value = float(np.sum(weight * per_s) / np.sum(weight))
    se = float(np.sqrt(np.sum((weight * (per_s - value)) ** 2)) / np.sum(weight))
    return OracleValue(max(value, 0.0) if abs(value) < 1e-15 else value, se)


# ---------------------------------------------------------------------------
# rating matrices in the Coat layout


class RatingMatrices(NamedTuple):
    train: np.ndarray
    test: np.ndarray
    user_features: np.ndarray
    item_features: np.ndarray
    user_names: list
    item_names: list


def _one_hot_blocks(rng, n: int, blocks) -> np.ndarray:
    cols = []
    for size in blocks:
        cols.append(np.eye(size, dtype=np.int64)[rng.integers(0, size, n)])
    return np.concatenate(cols, axis=1)


def coat_like_ratings(seed: int = 0, n_users: int = 290, n_items: int = 300, train_per_user: int = 24,
                      test_per_user: int = 16, selection_strength: float = 0.7) -> RatingMatrices:
    """Self-selected and randomized rating grids shaped like the Coat distribution.

    Users and items carry one-hot attribute blocks (14 and 33 binary
    columns). A latent 1-5 rating depends on user-item attribute affinities
    plus noise. Each user rates ``train_per_user`` items drawn with
    probability proportional to ``exp(selection_strength * rating)``
    (self-selection, missing not at random) and ``test_per_user`` further
    items drawn uniformly (missing at random).
    """
    rng = _rng(seed, 101)
    user_blocks, item_blocks = (2, 6, 3, 3), (2, 16, 13, 2)
    uf = _one_hot_blocks(rng, n_users, user_blocks)
    itf = _one_hot_blocks(rng, n_items, item_blocks)
    affinity = rng.normal(0.0, 0.8, (uf.shape[1], itf.shape[1]))
    latent = (uf @ affinity @ itf.T) / 2.0
    latent += rng.normal(0.0, 0.6, n_users)[:, None] + rng.normal(0.0, 0.6, n_items)[None, :]
    latent += rng.normal(0.0, 0.8, latent.shape)
    # cut points put roughly 33/26/20/13/8 percent of all cells on ratings 1..5
    cuts = np.quantile(latent, [0.33, 0.59, 0.79, 0.92])
    rating = 1 + np.searchsorted(cuts, latent, side="right")
    train = np.zeros((n_users, n_items), dtype=np.int64)
    test = np.zeros((n_users, n_items), dtype=np.int64)
    for u in range(n_users):
        logits = selection_strength * rating[u]
        gumbel = logits - np.log(-np.log(rng.random(n_items)))  # top-k of Gumbel keys = weighted draws
        chosen = np.argsort(-gumbel, kind="stable")[:train_per_user]
        train[u, chosen] = rating[u, chosen]
        rest = np.setdiff1d(np.arange(n_items), chosen)
        picked = rng.choice(rest, size=test_per_user, replace=False)
        test[u, picked] = rating[u, picked]
    user_names = [f"u{b}_{j}" for b, size in enumerate(user_blocks) for j in range(size)]
    item_names = [f"i{b}_{j}" for b, size in enumerate(item_blocks) for j in range(size)]
    return RatingMatrices(train, test, uf, itf, user_names, item_names)
