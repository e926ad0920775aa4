"""Propensity-based comparison methods.

* Naive-Bayes propensities ``P(observed | rating)`` from the rating
  histograms of a logged sample and a randomized sample.
* Inverse-propensity-weighted evaluation, with self-normalized rates.
* Propensity-stratified evaluation (equal weight per stratum).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .click_model import FittedClickModel, score
from .data import Dataset
from .errors import ZeroMarMass
from .metrics import EvalReport, evaluate, stratified_metrics
from .perturbation import BinAssignment

DEFAULT_CLIP = 0.01


@dataclass(frozen=True)
class PropensityModel:
    ratings: tuple[int, ...]
    propensities: tuple[float, ...]
    observed_rate: float
    clip_min: float = DEFAULT_CLIP

    def __post_init__(self):
        if not 0.0 < self.clip_min <= 1.0:
            raise ValueError("clip_min must lie in (0, 1]")

    def propensity(self, ratings) -> np.ndarray:
        """Propensity of each rating value (unknown values raise KeyError)."""
        lookup = dict(zip(self.ratings, self.propensities))
        return np.array([lookup[int(r)] for r in np.asarray(ratings).ravel()], dtype=np.float64)

    def to_dict(self) -> dict:
        return {"ratings": list(self.ratings), "propensities": list(self.propensities),
                "observed_rate": self.observed_rate, "clip_min": self.clip_min}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PropensityModel":
        d = json.loads(text)
        return cls(tuple(d["ratings"]), tuple(d["propensities"]), d["observed_rate"], d["clip_min"])


def _histogram(h, support=None) -> dict:
    if isinstance(h, dict):
        return {int(k): float(v) for k, v in h.items()}
    arr = np.asarray(h, dtype=np.float64).ravel()
    support = support or range(1, len(arr) + 1)
    return {int(r): float(v) for r, v in zip(support, arr)}


def fit_nb_propensity(mnar_ratings, mar_ratings, observed_fraction: float,
                      clip_min: float = DEFAULT_CLIP) -> PropensityModel:
    """``P(O=1 | Y=r) = P_logged(Y=r) * P(O=1) / P_random(Y=r)``, clipped to [clip_min, 1].

    Histograms are count vectors over ratings 1..R or ``{rating: count}``
    mappings. A rating absent from both samples gets the overall rate.
    """
    mnar, mar = _histogram(mnar_ratings), _histogram(mar_ratings)
    if set(mnar) != set(mar):
        raise ValueError("histograms must share one rating support")
    tot_mnar, tot_mar = sum(mnar.values()), sum(mar.values())
    if tot_mnar <= 0 or tot_mar <= 0:
        raise ValueError("both histograms must be non-empty")
    if not 0.0 < observed_fraction <= 1.0:
        raise ValueError("observed_fraction must lie in (0, 1]")
    ratings = tuple(sorted(mnar))
    props = []
    for r in ratings:
        p_mnar, p_mar = mnar[r] / tot_mnar, mar[r] / tot_mar
        if p_mar == 0.0:
            if p_mnar > 0.0:
                raise ZeroMarMass(f"rating {r} observed in the logged sample but absent from the random one")
            p = observed_fraction
        else:
            p = p_mnar * observed_fraction / p_mar
        props.append(float(min(max(p, clip_min), 1.0)))
    return PropensityModel(ratings, tuple(props), float(observed_fraction), clip_min)


def ips_weights(propensities, clip_min: float = DEFAULT_CLIP) -> np.ndarray:
    """Per-row inverse propensities after clipping the propensities to [clip_min, 1]."""
    p = np.asarray(propensities, dtype=np.float64).ravel()
    if np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise ValueError("propensities must be finite and positive")
    return 1.0 / np.clip(p, clip_min, 1.0)


def ips_metrics(scores, labels, propensities, threshold: float = 0.5, clip_min: float = DEFAULT_CLIP,
                scenario: str = "custom") -> EvalReport:
    """Metrics with every row weighted by its inverse propensity.

    For the ratio metrics (AUC, precision, recall, F1) the inverse-propensity
    and self-normalized estimators coincide, because the weight normalizer
    cancels. The two differ for rate estimates, which are reported in
    ``extras``: ``ips`` divides weighted sums by the row count, ``snips`` by
    the weight total. Constant weights cancel exactly and are replaced by
    ones, so constant propensities reproduce the unweighted metrics bit for bit.
    """
    w = ips_weights(propensities, clip_min)
    y = np.asarray(labels).ravel().astype(np.float64)
    s = np.asarray(scores, dtype=np.float64).ravel()
    metric_w = np.ones_like(w) if np.all(w == w[0]) else w
    rep = evaluate(s, y, threshold, weights=metric_w, scenario=scenario)
    n, total = len(w), float(w.sum())
    pred = (s >= threshold).astype(np.float64)
    rep.weighting = "ips"
    rep.extras = {
        "clip_min": clip_min,
        "weight_sum": total,
        "ips": {"positive_rate": float(w @ y) / n, "predicted_positive_rate": float(w @ pred) / n},
        "snips": {"positive_rate": float(w @ y) / total, "predicted_positive_rate": float(w @ pred) / total},
    }
    return rep


def ips_evaluate(model: FittedClickModel, dataset: Dataset, propensities, threshold: float = 0.5,
                 clip_min: float = DEFAULT_CLIP, scenario: str = "custom") -> EvalReport:
    return ips_metrics(score(model, dataset), dataset.click, propensities, threshold, clip_min, scenario)


def stratified_evaluate(model: FittedClickModel, dataset: Dataset, bins: BinAssignment,
                        threshold: float = 0.5, scenario: str = "custom") -> EvalReport:
    """Per-stratum metrics averaged with equal stratum weights."""
    if len(bins.bin_index) != len(dataset):
        raise ValueError("bin assignment does not match dataset length")
    return stratified_metrics(score(model, dataset), dataset.click, bins.bin_index, threshold, scenario)
