"""Bayesian optimization over a box with a Gaussian-process surrogate.

The surrogate works on coordinates rescaled to the unit cube and on z-scored
objective values. The acquisition is expected improvement for minimization,
maximized over a seeded candidate set followed by a coordinate search around
the most promising candidates.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.special import ndtr

from .errors import ObjectiveAlwaysNonFinite, SingularKernel

log = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class BoConfig:
    n_iter: int = 50
    n_init: int | None = None  # defaults to 2K + 1
    bounds: tuple[tuple[float, float], ...] | None = None  # defaults to [0.05, 1]^K
    kernel: str = "matern52"
    length_scale: float = 0.2
    noise_variance: float = 1e-4
    acquisition: str = "expected_improvement"
    xi: float = 0.01
    n_candidates: int = 2048
    n_refine: int = 5
    refine_min_step: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be at least 1")
        if self.n_init is not None and self.n_init < 1:
            raise ValueError("n_init must be at least 1")
        if self.kernel not in ("matern52", "rbf"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.length_scale <= 0 or self.noise_variance <= 0:
            raise ValueError("length_scale and noise_variance must be positive")
        if self.acquisition != "expected_improvement":
            raise ValueError("only expected_improvement is supported")
        if self.bounds is not None:
            for lo, hi in self.bounds:
                if not lo < hi:
                    raise ValueError(f"bound [{lo}, {hi}] is empty")

    def box(self, k: int) -> np.ndarray:
        if self.bounds is None:
            return np.tile([0.05, 1.0], (k, 1))
        b = np.asarray(self.bounds, dtype=np.float64)
        if b.shape != (k, 2):
            raise ValueError(f"bounds have shape {b.shape}, expected ({k}, 2)")
        return b


@dataclass
class BoTrace:
    points: list = field(default_factory=list)
    values: list = field(default_factory=list)
    extras: list = field(default_factory=list)

    @property
    def finite_values(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)

    @property
    def best_index(self) -> int:
        v = self.finite_values
        v = np.where(np.isfinite(v), v, np.inf)
        return int(np.argmin(v))

    @property
    def best_point(self) -> np.ndarray:
        return self.points[self.best_index]

    @property
    def best_value(self) -> float:
        return float(self.values[self.best_index])

    def running_best(self) -> np.ndarray:
        v = self.finite_values
        return np.minimum.accumulate(np.where(np.isfinite(v), v, np.inf))

    def rows(self, extra_columns=("cmi_term", "bce_term")) -> list[list]:
        out = []
        for i, (p, v, e) in enumerate(zip(self.points, self.values, self.extras)):
            out.append([i, *map(float, p), float(v), *[e.get(c, "") for c in extra_columns]])
        return out

    def to_csv(self, path, extra_columns=("cmi_term", "bce_term")) -> None:
        k = len(self.points[0]) if self.points else 0
        header = ["trial", *[f"w_{j + 1}" for j in range(k)], "loss", *extra_columns]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in self.rows(extra_columns):
                w.writerow([repr(x) if isinstance(x, float) else x for x in row])


# ---------------------------------------------------------------------------
# Gaussian process


def kernel_matrix(a: np.ndarray, b: np.ndarray, kernel: str, length_scale: float,
                  signal_variance: float = 1.0) -> np.ndarray:
    d2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    r = np.sqrt(np.maximum(d2, 0.0)) / length_scale
    if kernel == "rbf":
        return signal_variance * np.exp(-0.5 * r * r)
    s = np.sqrt(5.0) * r
    return signal_variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


class GaussianProcess:
    """Exact GP regression with a constant prior mean equal to the data mean."""

    def __init__(self, x, y, kernel="matern52", length_scale=0.2, noise_variance=1e-4, signal_variance=1.0):
        self.x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        self.y = np.asarray(y, dtype=np.float64).ravel()
        if len(self.y) < 1:
            raise ValueError("need at least one observation")
        self.kernel = kernel
        self.length_scale = length_scale
        self.signal_variance = signal_variance
        self.prior_mean = float(self.y.mean())
        k = kernel_matrix(self.x, self.x, kernel, length_scale, signal_variance)
        jitter = 1e-10
        while True:
            try:
                self.chol = cholesky(k + (noise_variance + jitter) * np.eye(len(self.y)), lower=True)
                break
            except np.linalg.LinAlgError:
                if jitter >= 1e-4:
                    raise SingularKernel("kernel matrix not positive definite after jitter 1e-4") from None
                jitter *= 10.0
        self.jitter = jitter
        self.alpha = cho_solve((self.chol, True), self.y - self.prior_mean)

    def predict(self, xq) -> tuple[np.ndarray, np.ndarray]:
        xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
        ks = kernel_matrix(xq, self.x, self.kernel, self.length_scale, self.signal_variance)
        mean = self.prior_mean + ks @ self.alpha
        v = np.linalg.solve(self.chol, ks.T) if len(self.y) > 0 else np.zeros((0, len(xq)))
        var = np.maximum(self.signal_variance - np.sum(v * v, axis=0), 0.0)
        return mean, var


def gp_posterior(x_obs, y_obs, x_query, kernel="matern52", length_scale=0.2, noise_variance=1e-4,
                 signal_variance=1.0) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance at each query point."""
    gp = GaussianProcess(x_obs, y_obs, kernel, length_scale, noise_variance, signal_variance)
    return gp.predict(x_query)


def expected_improvement(mean, variance, best_so_far: float, xi: float = 0.0):
    """EI for minimization; reduces to ``max(0, best - mean - xi)`` where the variance is zero."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    imp = best_so_far - mean - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, imp / sigma, 0.0)
    ei = imp * ndtr(z) + sigma * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    ei = np.where(sigma > 0, ei, np.maximum(imp, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


# ---------------------------------------------------------------------------
# optimization loop


def latin_hypercube(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    u = (np.arange(n)[:, None] + rng.random((n, k))) / n
    for j in range(k):
        u[:, j] = u[rng.permutation(n), j]
    return u


def _split_result(res) -> tuple[float, dict]:
    if isinstance(res, tuple):
        value, extras = res
        return float(value), dict(extras)
    return float(res), {}


def _surrogate_targets(values: np.ndarray) -> np.ndarray:
    y = values.astype(np.float64).copy()
    finite = np.isfinite(y)
    lo, hi = y[finite].min(), y[finite].max()
    y[~finite] = hi + 3.0 * ((hi - lo) if hi > lo else 1.0)
    sd = y.std()
    return (y - y.mean()) / (sd if sd > 0 else 1.0)


def propose(gp: GaussianProcess, best: float, k: int, cfg: BoConfig, rng: np.random.Generator) -> np.ndarray:
    """Maximize EI on the unit cube: random candidates, then coordinate search from the best few."""

    def acq(u):
        m, v = gp.predict(u)
        return expected_improvement(m, v, best, cfg.xi)

    cand = rng.random((cfg.n_candidates, k))
    ei = acq(cand)
    starts = np.argsort(-ei, kind="stable")[: cfg.n_refine]
    best_u, best_ei = cand[starts[0]].copy(), float(ei[starts[0]])
    for s in starts:
        u, cur = cand[s].copy(), float(ei[s])
        step = 0.1
        while step >= cfg.refine_min_step:
            moves = np.concatenate([np.eye(k) * step, -np.eye(k) * step]) + u
            moves = np.clip(moves, 0.0, 1.0)
            vals = acq(moves)
            j = int(np.argmax(vals))
            if vals[j] > cur:
                u, cur = moves[j], float(vals[j])
            else:
                step *= 0.5
        if cur > best_ei:
            best_u, best_ei = u, cur
    return best_u


def minimize(objective: Callable, cfg: BoConfig | None = None, k: int | None = None,
             callback: Callable | None = None) -> BoTrace:
    """Minimize a black-box function of a K-vector over the configured box.

    ``objective`` returns a float, or ``(float, dict)`` whose dict is kept in
    the trace. Non-finite values are recorded as-is and replaced by a
    pessimistic value when fitting the surrogate.
    """
    cfg = cfg or BoConfig()
    if k is None:
        if cfg.bounds is None:
            raise ValueError("pass k or explicit bounds")
        k = len(cfg.bounds)
    box = cfg.box(k)
    lo, span = box[:, 0], box[:, 1] - box[:, 0]
    rng = np.random.default_rng([cfg.seed, 31337])
    n_init = cfg.n_init if cfg.n_init is not None else 2 * k + 1
    trace = BoTrace()
    units: list[np.ndarray] = []

    def evaluate(u):
        w = lo + u * span
        value, extras = _split_result(objective(w))
        trace.points.append(w)
        trace.values.append(value)
        trace.extras.append(extras)
        units.append(u)
        if callback is not None:
            callback(len(trace.values) - 1, w, value, extras)

    for u in latin_hypercube(n_init, k, rng):
        evaluate(u)
    for it in range(cfg.n_iter):
        values = np.array(trace.values)
        if not np.any(np.isfinite(values)):
            raise ObjectiveAlwaysNonFinite(f"objective non-finite at all {len(values)} evaluated points")
        y = _surrogate_targets(values)
        gp = GaussianProcess(np.array(units), y, cfg.kernel, cfg.length_scale, cfg.noise_variance)
        evaluate(propose(gp, float(y.min()), k, cfg, rng))
        log.debug("bo iteration %d: value %.6g best %.6g", it, trace.values[-1], trace.best_value)
    if not np.any(np.isfinite(trace.values)):
        raise ObjectiveAlwaysNonFinite("objective never returned a finite value")
    return trace
