"""Pointwise click-prediction metrics and score-distribution distances.

All metrics accept optional non-negative row weights. A weight acts like a
replication count: with integer weights every metric equals its unweighted
value on the row-replicated data, exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AllStrataEmpty, DegenerateLabels, EmptySample, LengthMismatch, SchemaMismatch

REPORT_VERSION = 1
METRICS = ("auc", "precision", "recall", "f1")


@dataclass
class EvalReport:
    auc: float
    precision: float
    recall: float
    f1: float
    threshold: float = 0.5
    n_rows: int = 0
    scenario: str = "custom"
    auc_defined: bool = True
    weighting: str = "none"
    strata: list = field(default_factory=list)
    skipped_strata: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def metric(self, name: str) -> float:
        return float(getattr(self, name))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["report_version"] = REPORT_VERSION
        for k in METRICS:
            if isinstance(d[k], float) and math.isnan(d[k]):
                d[k] = None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = {k: v for k, v in d.items() if k != "report_version"}
        for k in METRICS:
            if d.get(k) is None:
                d[k] = float("nan")
        return cls(**d)


def _check(scores, labels, weights=None):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise LengthMismatch(f"{len(s)} scores but {len(y)} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be binary")
    y = y.astype(bool)
    if weights is None:
        w = np.ones(len(s))
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
        if w.shape != s.shape:
            raise LengthMismatch(f"{len(w)} weights for {len(s)} rows")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
    return s, y, w


def auc_score(scores, labels, weights=None) -> float:
    """Weighted Mann-Whitney AUC; tied positive-negative pairs count one half.

    Raises DegenerateLabels unless both classes carry positive weight.
    """
    s, y, w = _check(scores, labels, weights)
    wp = w[y].sum()
    wn = w[~y].sum()
    if wp <= 0 or wn <= 0:
        raise DegenerateLabels("AUC needs at least one positive and one negative row")
    uniq, inv = np.unique(s, return_inverse=True)
    pos_at = np.bincount(inv, weights=np.where(y, w, 0.0), minlength=len(uniq))
    neg_at = np.bincount(inv, weights=np.where(y, 0.0, w), minlength=len(uniq))
    neg_below = np.concatenate([[0.0], np.cumsum(neg_at)[:-1]])
    num = float(np.sum(pos_at * (neg_below + 0.5 * neg_at)))
    return num / (wp * wn)


def confusion(scores, labels, threshold: float = 0.5, weights=None) -> tuple[float, float, float, float]:
    """Weighted (tp, fp, fn, tn); a score at or above the threshold predicts positive."""
    s, y, w = _check(scores, labels, weights)
    pred = s >= threshold
    return (float(w[pred & y].sum()), float(w[pred & ~y].sum()),
            float(w[~pred & y].sum()), float(w[~pred & ~y].sum()))


def _prf(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def evaluate(scores, labels, threshold: float = 0.5, weights=None, scenario: str = "custom") -> EvalReport:
    """AUC, precision, recall and F1; AUC is NaN (and flagged) when a class is missing."""
    s, y, w = _check(scores, labels, weights)
    try:
        auc, defined = auc_score(s, y, w), True
    except DegenerateLabels:
        auc, defined = float("nan"), False
    tp, fp, fn, _ = confusion(s, y, threshold, w)
    precision, recall, f1 = _prf(tp, fp, fn)
    return EvalReport(auc=auc, precision=precision, recall=recall, f1=f1, threshold=float(threshold),
                      n_rows=len(s), scenario=scenario, auc_defined=defined,
                      weighting="none" if weights is None else "weighted")


def _defined_metrics(s, y, threshold) -> dict:
    """Metrics of one stratum, omitting those whose denominator is empty there."""
    tp, fp, fn, _ = confusion(s, y, threshold)
    out = {}
    if y.any() and not y.all():
        out["auc"] = auc_score(s, y)
    if tp + fp > 0:
        out["precision"] = tp / (tp + fp)
    if tp + fn > 0:
        out["recall"] = tp / (tp + fn)
    if "precision" in out and "recall" in out:
        out["f1"] = _prf(tp, fp, fn)[2]
    return out


def stratified_metrics(scores, labels, strata, threshold: float = 0.5, scenario: str = "custom") -> EvalReport:
    """Metrics within each stratum, averaged with equal stratum weights.

    A metric is averaged over the strata where it is defined: AUC needs both
    classes, precision a predicted positive, recall an actual positive, F1
    both of the latter. Strata lacking any metric are listed in
    ``skipped_strata`` with the missing names; per-stratum values are kept in
    ``strata``. A metric defined in no stratum is NaN (``auc_defined`` flags AUC).
    """
    s, y, _ = _check(scores, labels)
    strata = np.asarray(strata).ravel()
    if strata.shape != s.shape:
        raise LengthMismatch("stratum labels must align with scores")
    if len(s) == 0:
        raise AllStrataEmpty("no rows to stratify")
    per, skipped = [], []
    for label in np.unique(strata):
        rows = strata == label
        values = _defined_metrics(s[rows], y[rows], threshold)
        entry = {"stratum": label.item() if hasattr(label, "item") else label, "n_rows": int(rows.sum())}
        per.append({**entry, **{k: values.get(k) for k in METRICS}})
        missing = [k for k in METRICS if k not in values]
        if missing:
            skipped.append({**entry, "metrics": missing,
                            "reason": "single class" if "auc" in missing else "empty denominator"})
    means = {}
    for k in METRICS:
        vals = [p[k] for p in per if p[k] is not None]
        means[k] = float(np.mean(vals)) if vals else float("nan")
    return EvalReport(**means, threshold=float(threshold), n_rows=len(s), scenario=scenario,
                      auc_defined=not math.isnan(means["auc"]), weighting="stratified",
                      strata=per, skipped_strata=skipped)


# ---------------------------------------------------------------------------
# distribution distances


def wasserstein_1d(a, b) -> float:
    """Wasserstein-1 distance between two empirical distributions on the line.

    Computed as the integral of the absolute difference of the two quantile
    functions, which are step functions with breaks at i/n and j/m.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if len(a) == 0 or len(b) == 0:
        raise EmptySample("both samples must be non-empty")
    n, m = len(a), len(b)
    if n == m:
        return float(np.mean(np.abs(a - b)))
    # breakpoints as exact integer numerators over the common denominator n*m
    ticks = np.union1d(np.arange(1, n + 1) * m, np.arange(1, m + 1) * n)
    lower = np.concatenate([[0], ticks[:-1]])
    width = (ticks - lower) / (n * m)
    ia = lower // m  # quantile step index of a on (lower, tick]
    ib = lower // n
    return float(np.sum(width * np.abs(a[ia] - b[ib])))


def conditional_score_gap(dataset, model_without_bf, model_with_bf, subsets=None) -> tuple[float, float]:
    """Gap between click predictions with and without the bias attribute.

    Returns the Wasserstein distance between the two models' predictions on
    the same rows, and the distance between the bias-free model's predictions
    on two caller-designated row subsets (NaN when ``subsets`` is None).
    """
    from .click_model import score

    s_without, s_with = model_without_bf.feature_schema, model_with_bf.feature_schema
    if s_without["feature_dim"] != s_with["feature_dim"] or s_without["include_bias_factor"]:
        raise SchemaMismatch("models must share relevant features; the first must exclude the bias attribute")
    p0 = score(model_without_bf, dataset)
    p1 = score(model_with_bf, dataset)
    matched = wasserstein_1d(p0, p1)
    split = float("nan")
    if subsets is not None:
        m_a, m_b = (np.asarray(m, dtype=bool) for m in subsets)
        split = wasserstein_1d(p0[m_a], p0[m_b])
    return matched, split
