"""Pointwise click models trained with binary cross-entropy.

Two model kinds share one interface: L2-regularized logistic regression fit
by full-batch gradient descent (the step starts at ``learning_rate``, doubles
after every epoch that lowers the loss and halves until one does), and
gradient-boosted depth-1 trees.
Optionally the bias attribute is appended to the inputs (scalar for a
continuous attribute, one-hot for a categorical one).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels
from .data import Dataset
from .errors import SchemaMismatch, SingleClassTargetWarning

CLAMP = 1e-12
FORMAT_VERSION = 1
KINDS = ("logistic", "boosted_stumps")


@dataclass(frozen=True)
class ClickModelConfig:
    model_kind: str = "logistic"
    l2: float = 1e-4
    learning_rate: float = 0.1
    epochs: int = 100
    n_stumps: int = 200
    include_bias_factor: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.model_kind not in KINDS:
            raise ValueError(f"model_kind must be one of {KINDS}, got {self.model_kind!r}")
        if self.l2 < 0 or self.learning_rate <= 0 or self.epochs <= 0 or self.n_stumps <= 0:
            raise ValueError("invalid click model hyperparameters")


@dataclass(frozen=True, eq=False)
class FittedClickModel:
    kind: str
    params: dict
    train_loss_curve: np.ndarray
    feature_schema: dict
    single_class: bool = False
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": FORMAT_VERSION,
                "kind": self.kind,
                "schema": self.feature_schema,
                "params": {k: np.asarray(v).tolist() for k, v in self.params.items()},
                "train_loss_curve": [float(v) for v in self.train_loss_curve],
                "single_class": self.single_class,
                "config": self.config,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "FittedClickModel":
        doc = json.loads(text)
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {doc.get('format_version')}")
        params = {k: np.asarray(v) for k, v in doc["params"].items()}
        if "features" in params:
            params["features"] = params["features"].astype(np.intp)
        return cls(
            kind=doc["kind"],
            params=params,
            train_loss_curve=np.asarray(doc["train_loss_curve"]),
            feature_schema=doc["schema"],
            single_class=doc["single_class"],
            config=doc.get("config", {}),
        )


# ---------------------------------------------------------------------------
# design matrix


def _schema(dataset: Dataset, include_bias_factor: bool) -> dict:
    schema = {
        "feature_dim": dataset.feature_dim,
        "include_bias_factor": include_bias_factor,
        "x_nr_kind": dataset.x_nr_kind,
        "bias_labels": None,
    }
    if include_bias_factor and dataset.x_nr_kind == "categorical":
        schema["bias_labels"] = [str(v) for v in dataset.x_nr_codes()[1]]
    schema["n_inputs"] = dataset.feature_dim + (
        0 if not include_bias_factor else (1 if schema["bias_labels"] is None else len(schema["bias_labels"]))
    )
    return schema


def design_matrix(dataset: Dataset, schema: dict) -> np.ndarray:
    """Model inputs for ``dataset`` under a fitted model's feature schema."""
    if dataset.ragged or dataset.feature_dim != schema["feature_dim"]:
        raise SchemaMismatch(f"expected {schema['feature_dim']} relevant features, got {dataset.feature_dim}")
    x = dataset.x_r.astype(np.float64)
    if not schema["include_bias_factor"]:
        return x
    if dataset.x_nr_kind != schema["x_nr_kind"]:
        raise SchemaMismatch("bias attribute kind differs from the training data")
    if schema["bias_labels"] is None:
        return np.column_stack([x, dataset.x_nr.astype(np.float64)])
    lookup = {lab: j for j, lab in enumerate(schema["bias_labels"])}
    onehot = np.zeros((len(dataset), len(lookup)))
    for i, v in enumerate(dataset.x_nr.tolist()):
        j = lookup.get(str(v))
        if j is not None:
            onehot[i, j] = 1.0
    return np.column_stack([x, onehot])


# ---------------------------------------------------------------------------
# losses


def _clamp(p):
    return np.clip(p, CLAMP, 1.0 - CLAMP)


def bce(p: np.ndarray, y: np.ndarray, sample_weight: np.ndarray | None = None) -> float:
    p = _clamp(p)
    terms = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    if sample_weight is None:
        return float(terms.mean())
    return float(np.sum(sample_weight * terms) / np.sum(sample_weight))


def _normalized_weights(sample_weight, n: int) -> np.ndarray:
    if sample_weight is None:
        return np.ones(n)
    sw = np.asarray(sample_weight, dtype=np.float64)
    if sw.shape != (n,) or np.any(sw < 0) or not np.all(np.isfinite(sw)) or sw.sum() <= 0:
        raise ValueError("sample_weight must be a finite non-negative vector with positive sum")
    return sw / sw.mean()


def logistic_loss_and_grad(theta: np.ndarray, x: np.ndarray, y: np.ndarray, sw: np.ndarray, l2: float):
    """Weighted mean BCE plus ``l2/2 * |w|^2`` and its gradient; ``theta = [w..., b]``."""
    w, b = theta[:-1], theta[-1]
    p = expit(x @ w + b)
    loss = bce(p, y, sw) + 0.5 * l2 * float(w @ w)
    r = sw * (p - y) / sw.sum()
    grad = np.empty_like(theta)
    grad[:-1] = x.T @ r + l2 * w
    grad[-1] = r.sum()
    return loss, grad


def _stump_margin(params: dict, x: np.ndarray) -> np.ndarray:
    f = np.full(len(x), float(params["base"]))
    for feat, thr, lv, rv in zip(params["features"], params["thresholds"], params["left"], params["right"]):
        f += np.where(x[:, feat] <= thr, lv, rv)
    return f


def stump_loss_and_grad(theta: np.ndarray, params: dict, x: np.ndarray, y: np.ndarray, sw: np.ndarray, l2: float):
    """Loss and gradient in the leaf values with the split structure held fixed.

    ``theta = [base, left_1..left_T, right_1..right_T]``.
    """
    t = len(params["features"])
    base, left, right = theta[0], theta[1:1 + t], theta[1 + t:]
    go_left = np.column_stack([x[:, f] <= thr for f, thr in zip(params["features"], params["thresholds"])]) \
        if t else np.zeros((len(x), 0), dtype=bool)
    margin = base + np.where(go_left, left, right).sum(axis=1)
    p = expit(margin)
    loss = bce(p, y, sw) + 0.5 * l2 * float(left @ left + right @ right)
    r = sw * (p - y) / sw.sum()
    grad = np.empty_like(theta)
    grad[0] = r.sum()
    grad[1:1 + t] = r @ go_left + l2 * left
    grad[1 + t:] = r @ ~go_left + l2 * right
    return loss, grad


# ---------------------------------------------------------------------------
# fitting


def _logit(p: float) -> float:
    p = min(max(p, CLAMP), 1.0 - CLAMP)
    return float(np.log(p / (1.0 - p)))


def _fit_logistic(x, y, sw, cfg: ClickModelConfig):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    flat = scale <= 1e-12
    mean = np.where(flat, 0.0, mean)
    scale = np.where(flat, 1.0, scale)
    xs = (x - mean) / scale
    theta = np.zeros(x.shape[1] + 1)
    loss, grad = logistic_loss_and_grad(theta, xs, y, sw, cfg.l2)
    curve = np.empty(cfg.epochs)
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        # halve the step until the loss does not increase; grow it after a success
        for _ in range(60):
            cand = theta - lr * grad
            cand_loss, cand_grad = logistic_loss_and_grad(cand, xs, y, sw, cfg.l2)
            if cand_loss <= loss:
                lr *= 2.0
                break
            lr *= 0.5
        else:
            cand, cand_loss, cand_grad = theta, loss, grad
        theta, loss, grad = cand, cand_loss, cand_grad
        curve[epoch] = loss
    # fold the input scaling into the parameters
    w = theta[:-1] / scale
    b = theta[-1] - float(w @ mean)
    return {"weights": w, "bias": np.float64(b)}, curve


def _fit_stumps(x, y, sw, cfg: ClickModelConfig):
    n, d = x.shape
    xs = np.ascontiguousarray(x, dtype=np.float64)
    order = np.ascontiguousarray(np.argsort(xs, axis=0, kind="stable").astype(np.intp))
    base = _logit(float(np.sum(sw * y) / np.sum(sw)))
    margin = np.full(n, base)
    feats, thrs, lefts, rights = [], [], [], []
    curve = []
    for _ in range(cfg.n_stumps):
        p = expit(margin)
        g = sw * (p - y)
        h = np.maximum(sw * p * (1.0 - p), 1e-16)
        gt = float(np.cumsum(g)[-1])
        ht = float(np.cumsum(h)[-1])
        f, thr, gain, gl, hl = _kernels.best_stump(xs, order, g, h, gt, ht, cfg.l2)
        if f < 0:
            break
        lv = -cfg.learning_rate * gl / (hl + cfg.l2)
        rv = -cfg.learning_rate * (gt - gl) / (ht - hl + cfg.l2)
        margin += np.where(xs[:, f] <= thr, lv, rv)
        feats.append(int(f))
        thrs.append(float(thr))
        lefts.append(float(lv))
        rights.append(float(rv))
        curve.append(bce(expit(margin), y, sw))
    if not curve:
        curve.append(bce(expit(margin), y, sw))
    params = {
        "base": np.float64(base),
        "features": np.array(feats, dtype=np.intp),
        "thresholds": np.array(thrs),
        "left": np.array(lefts),
        "right": np.array(rights),
    }
    return params, np.array(curve)


def fit(dataset: Dataset, cfg: ClickModelConfig | None = None, sample_weight=None) -> FittedClickModel:
    """Fit a click model; ``sample_weight`` multiplies each row's BCE term (IPS training)."""
    cfg = cfg or ClickModelConfig()
    schema = _schema(dataset, cfg.include_bias_factor)
    x = design_matrix(dataset, schema)
    y = dataset.click.astype(np.float64)
    sw = _normalized_weights(sample_weight, len(dataset))
    config = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    if np.all(y == y[0]):
        warnings.warn("all click labels are identical; fitting a constant predictor", SingleClassTargetWarning,
                      stacklevel=2)
        const = _logit(float(y[0]))
        if cfg.model_kind == "logistic":
            params = {"weights": np.zeros(x.shape[1]), "bias": np.float64(const)}
        else:
            params = {"base": np.float64(const), "features": np.zeros(0, dtype=np.intp), "thresholds": np.zeros(0),
                      "left": np.zeros(0), "right": np.zeros(0)}
        p = np.full(len(y), expit(const))
        return FittedClickModel(cfg.model_kind, params, np.array([bce(p, y, sw)]), schema, True, config)
    if cfg.model_kind == "logistic":
        params, curve = _fit_logistic(x, y, sw, cfg)
    else:
        params, curve = _fit_stumps(x, y, sw, cfg)
    return FittedClickModel(cfg.model_kind, params, curve, schema, False, config)


def logistic_model(weights, bias: float = 0.0) -> FittedClickModel:
    """A logistic model with given parameters over unnamed inputs."""
    w = np.asarray(weights, dtype=np.float64)
    schema = {"feature_dim": len(w), "include_bias_factor": False, "x_nr_kind": "continuous",
              "bias_labels": None, "n_inputs": len(w)}
    return FittedClickModel("logistic", {"weights": w, "bias": np.float64(bias)}, np.zeros(0), schema)


# ---------------------------------------------------------------------------
# scoring


def predict(model: FittedClickModel, x):
    """Clamped click probability for one input vector, or a vector of them for a matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != model.feature_schema["n_inputs"]:
        raise SchemaMismatch(f"expected {model.feature_schema['n_inputs']} inputs, got shape {x.shape}")
    if model.kind == "logistic":
        margin = x2 @ model.params["weights"] + float(model.params["bias"])
    else:
        margin = _stump_margin(model.params, x2)
    p = _clamp(expit(margin))
    return float(p[0]) if single else p


def score(model: FittedClickModel, dataset: Dataset) -> np.ndarray:
    return predict(model, design_matrix(dataset, model.feature_schema))


def bce_loss(model: FittedClickModel, dataset: Dataset) -> float:
    """Mean binary cross-entropy of the clamped predictions."""
    return bce(score(model, dataset), dataset.click.astype(np.float64))
