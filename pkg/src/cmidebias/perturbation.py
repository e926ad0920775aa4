"""Stratification of the bias attribute and weighted row resampling."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import Dataset
from .errors import AllZeroWeightCoverage, DegenerateAttributeWarning, InvalidWeights, KMismatch

# RNG stream ids; each consumes the stream and stream + 1
_STREAM_KEEP = 11
_STREAM_DRAW = 21


@dataclass(frozen=True, eq=False)
class BinAssignment:
    """Stratum index per row.

    ``edges`` are the interior cut points for a continuous attribute (empty for
    categorical); ``labels`` map stratum index to category for categorical.
    ``degenerate`` is set when fewer strata than requested were populated.
    """

    bin_index: np.ndarray
    k: int
    edges: np.ndarray
    labels: tuple | None = None
    requested_k: int | None = None
    degenerate: bool = False

    def counts(self) -> np.ndarray:
        return np.bincount(self.bin_index, minlength=self.k)


@dataclass(frozen=True)
class PerturbationConfig:
    perturb_fraction: float = 0.1
    mode: str = "partial"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.perturb_fraction <= 1.0:
            raise ValueError(f"perturb_fraction must lie in [0, 1], got {self.perturb_fraction}")
        if self.mode not in ("partial", "full"):
            raise ValueError(f"mode must be 'partial' or 'full', got {self.mode!r}")


def as_weights(weights, k: int | None = None) -> np.ndarray:
    """Validate a weight vector: finite, non-negative, not all zero."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise InvalidWeights("weight vector is empty")
    if k is not None and w.size != k:
        raise InvalidWeights(f"expected {k} weights, got {w.size}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidWeights(f"weights must be finite and non-negative: {w}")
    if not np.any(w > 0):
        raise AllZeroWeightCoverage("at least one weight must be positive")
    return w


def discretize(dataset: Dataset, k: int | None = None) -> BinAssignment:
    """Assign each row to one of ``k`` strata of its bias attribute.

    Continuous attributes use equal-frequency bins whose interior edges are
    the ``j/k`` empirical quantiles; a value equal to an edge goes to the
    lower bin. An attribute with at most ``k`` distinct values (such as a
    propensity looked up from a rating) gets one stratum per value instead;
    with fewer than ``k`` values the assignment is flagged degenerate. Categorical attributes map sorted labels to ``0..k-1`` and
    require ``k`` to equal the number of labels.
    """
    if dataset.x_nr_kind == "categorical":
        codes, labels = dataset.x_nr_codes()
        if k is None:
            k = len(labels)
        if k != len(labels):
            raise KMismatch(f"categorical bias attribute has {len(labels)} classes but K={k}")
        return BinAssignment(codes, k, np.empty(0), labels=tuple(labels), requested_k=k)

    if k is None or k < 1:
        raise ValueError(f"K must be a positive integer, got {k}")
    x = dataset.x_nr.astype(np.float64)
    distinct = np.unique(x)
    if len(distinct) <= k:
        # a stratum per distinct value, cut halfway between neighbouring values
        edges = 0.5 * (distinct[:-1] + distinct[1:])
    else:
        edges = np.unique(np.quantile(x, np.arange(1, k) / k)) if k > 1 else np.empty(0)
    raw = np.searchsorted(edges, x, side="left")
    occupied = np.flatnonzero(np.bincount(raw, minlength=len(edges) + 1))
    remap = np.full(len(edges) + 1, -1, dtype=np.intp)
    remap[occupied] = np.arange(len(occupied))
    bins = remap[raw]
    # an edge survives only if the bins on both sides are populated
    kept_edges = edges[occupied[1:] - 1] if len(occupied) > 1 else np.empty(0)
    k_eff = len(occupied)
    degenerate = k_eff < k
    if degenerate:
        warnings.warn(
            f"bias attribute supports only {k_eff} of {k} requested strata",
            DegenerateAttributeWarning,
            stacklevel=2,
        )
    return BinAssignment(bins, k_eff, kept_edges, requested_k=k, degenerate=degenerate)


def effective_sampling_distribution(bins: BinAssignment, weights) -> np.ndarray:
    """Probability that one weighted draw lands in each stratum."""
    w = as_weights(weights, bins.k)
    mass = bins.counts() * (w / w.max())
    total = mass.sum()
    if total <= 0:
        raise AllZeroWeightCoverage("every populated stratum has zero weight")
    return mass / total


def _stratum_index(bins: BinAssignment):
    order = np.argsort(bins.bin_index, kind="stable").astype(np.intp)
    offsets = np.concatenate(([0], np.cumsum(bins.counts()))).astype(np.intp)
    return offsets, order


def weighted_indices(bins: BinAssignment, weights, n_draws: int, seed: int, stream: int = _STREAM_DRAW) -> np.ndarray:
    """Row indices of ``n_draws`` draws with replacement, P(row i) proportional to w[bin(i)]."""
    q = effective_sampling_distribution(bins, weights)
    if n_draws == 0:
        return np.empty(0, dtype=np.intp)
    offsets, members = _stratum_index(bins)
    return _kernels.weighted_draws(seed, stream, n_draws, np.cumsum(q), offsets, members)


def resample_indices(bins: BinAssignment, weights, cfg: PerturbationConfig) -> np.ndarray:
    n = len(bins.bin_index)
    w = as_weights(weights, bins.k)
    if cfg.mode == "full":
        return weighted_indices(bins, w, n, cfg.seed)
    n_weighted = int(math.floor(cfg.perturb_fraction * n + 1e-9))
    n_keep = n - n_weighted
    keys = _kernels.uniforms(cfg.seed, _STREAM_KEEP, 0, n)
    kept = np.sort(np.argsort(keys, kind="stable")[:n_keep]).astype(np.intp)
    drawn = weighted_indices(bins, w, n_weighted, cfg.seed)
    return np.concatenate((kept, drawn))


def resample(dataset: Dataset, bins: BinAssignment, weights, cfg: PerturbationConfig) -> Dataset:
    """Resample rows with stratum weights.

    ``full`` draws N rows with replacement. ``partial`` keeps
    ``ceil((1 - rho) N)`` rows chosen uniformly without replacement, in their
    original order, then appends ``floor(rho N)`` weighted draws in draw order.
    """
    if len(bins.bin_index) != len(dataset):
        raise ValueError("bin assignment does not match dataset length")
    return dataset.take(resample_indices(bins, weights, cfg))


def duplicate_rate(indices: np.ndarray) -> float:
    """Fraction of output rows that repeat an earlier output row."""
    if len(indices) == 0:
        return 0.0
    return 1.0 - len(np.unique(indices)) / len(indices)
