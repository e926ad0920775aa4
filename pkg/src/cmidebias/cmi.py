"""Conditional mutual information I(A; C | X) between a first variable, clicks and relevant features.

The neural estimator maximizes the Donsker-Varadhan lower bound

    I = sup_T  E_joint[T] - log E_marginal[exp T]

over a small feed-forward critic ``T(x, a, c)``. Samples from the
conditional product ``P(X) P(A|X) P(C|X)`` are produced by replacing each
row's click with the click of one of its k nearest neighbours in ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from . import _kernels
from .data import Dataset, copy_groups, standardize_features
from .errors import DivergedTraining, EmptyCounts, NonBinaryVariables, TooFewRows

TARGETS = ("exposure", "bias_attribute")


@dataclass(frozen=True)
class StatNetConfig:
    hidden_layers: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 256
    ema_decay: float = 0.99
    knn_k: int = 5
    holdout_fraction: float = 0.2
    input_noise: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"activation must be 'relu' or 'tanh', got {self.activation!r}")
        if any(h <= 0 for h in self.hidden_layers):
            raise ValueError("hidden layer widths must be positive")
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0 or self.knn_k <= 0:
            raise ValueError("learning_rate, epochs, batch_size and knn_k must be positive")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError(f"holdout_fraction must lie in [0, 1), got {self.holdout_fraction}")
        if self.input_noise < 0:
            raise ValueError("input_noise must be non-negative")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must lie in (0, 1), got {self.ema_decay}")


@dataclass(frozen=True, eq=False)
class CmiEstimate:
    value: float
    train_curve: np.ndarray
    n_joint: int
    n_marginal: int
    target: str = "exposure"
    backend: str = field(default=_kernels.BACKEND)

    @property
    def unclamped(self) -> float:
        return float(self.train_curve[-1])

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "unclamped": self.unclamped,
            "n_joint": self.n_joint,
            "n_marginal": self.n_marginal,
            "target": self.target,
            "train_curve": [float(v) for v in self.train_curve],
        }


# ---------------------------------------------------------------------------
# exact plug-in value for finite supports


def plugin_cmi_discrete(counts) -> float:
    """Exact I(A; C | X) in nats from a count table indexed ``[x, a, c]``."""
    n = np.asarray(counts, dtype=np.float64)
    if n.ndim != 3:
        raise ValueError(f"expected a 3-d count table, got shape {n.shape}")
    if np.any(n < 0):
        raise ValueError("counts must be non-negative")
    total = n.sum()
    if total <= 0:
        raise EmptyCounts("count table is empty")
    nx = n.sum(axis=(1, 2), keepdims=True)
    na = n.sum(axis=2, keepdims=True)
    nc = n.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = n * nx / (na * nc)
        terms = np.where(n > 0, n * np.log(ratio), 0.0)
    return float(max(terms.sum() / total, 0.0))


def plugin_counts(x_bucket, a, c) -> np.ndarray:
    """Contingency table ``[x, a, c]`` from integer-coded columns."""
    x_bucket = np.asarray(x_bucket, dtype=np.intp)
    a = np.asarray(a, dtype=np.intp)
    c = np.asarray(c, dtype=np.intp)
    shape = (x_bucket.max() + 1, a.max() + 1, c.max() + 1)
    out = np.zeros(shape)
    np.add.at(out, (x_bucket, a, c), 1.0)
    return out


# ---------------------------------------------------------------------------
# conditional permutation


def knn_neighbors(x: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Indices of the ``k`` nearest other rows of each row (Euclidean).

    A tiny seeded jitter breaks distance ties so that duplicated feature
    vectors spread their neighbour choices over all duplicates.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n <= k:
        raise TooFewRows(f"need more than knn_k={k} rows, got {n}")
    jitter = np.random.default_rng([seed, 7919]).standard_normal(x.shape) * 1e-7
    xj = x + jitter
    _, idx = cKDTree(xj).query(xj, k=k + 1)
    idx = np.asarray(idx, dtype=np.intp).reshape(n, k + 1)
    is_self = idx == np.arange(n)[:, None]
    # drop self where found, otherwise the farthest of the k + 1
    drop = np.where(is_self.any(axis=1), is_self.argmax(axis=1), k)
    keep = np.ones_like(idx, dtype=bool)
    keep[np.arange(n), drop] = False
    return np.ascontiguousarray(idx[keep].reshape(n, k))


def neighbour_donor_pool(dataset: Dataset, x: np.ndarray, knn_k: int, seed: int) -> np.ndarray:
    """For each row, ``knn_k`` candidate donor rows taken from distinct neighbouring observations.

    Copies of one observation (see ``copy_groups``) count as a single point:
    neighbours are searched among one representative per group, so a row is
    never its own donor through a duplicate.
    """
    group, n_groups = copy_groups(dataset)
    rep = np.full(n_groups, -1, dtype=np.intp)
    rep[group[::-1]] = np.arange(len(group) - 1, -1, -1)  # first row of each group
    nbrs = knn_neighbors(x[rep], knn_k, seed)
    return np.ascontiguousarray(rep[nbrs][group])


def conditional_permutation(dataset: Dataset, knn_k: int = 5, seed: int = 0) -> Dataset:
    """Replace each click with the click of a random one of its ``knn_k`` neighbours in x_r."""
    pool = neighbour_donor_pool(dataset, dataset.x_r, knn_k, seed)
    donors = _kernels.knn_donors(seed, 1, pool)
    return dataset.replace(click=dataset.click[donors])


# ---------------------------------------------------------------------------
# neural estimator


def _binary(name: str, a: np.ndarray) -> np.ndarray:
    vals = np.unique(a)
    if not np.all(np.isin(vals, (0, 1))):
        raise NonBinaryVariables(f"{name} must be binary, found values {vals[:10]}")
    return a.astype(np.float64)


def first_variable(dataset: Dataset, target: str) -> np.ndarray:
    """The variable whose dependence on clicks is measured, as a float column."""
    if target == "exposure":
        return _binary("exposure", dataset.exposure)
    if target == "bias_attribute":
        if dataset.x_nr_kind == "categorical":
            a = dataset.x_nr_codes()[0].astype(np.float64)
        else:
            a = dataset.x_nr.astype(np.float64)
        sd = a.std()
        return (a - a.mean()) / sd if sd > 0 else a - a.mean()
    raise ValueError(f"target must be one of {TARGETS}, got {target!r}")


def init_critic(dims, activation: str, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 104729])
    parts = []
    for li, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        last = li == len(dims) - 2
        gain = 1.0 if last or activation == "tanh" else 2.0
        parts.append(rng.standard_normal(a * b) * np.sqrt(gain / a))
        parts.append(np.zeros(b))
    return np.concatenate(parts).astype(np.float32)


def dv_objective(t_joint: np.ndarray, t_marginal: np.ndarray) -> float:
    return float(np.mean(t_joint) - (logsumexp(t_marginal) - np.log(len(t_marginal))))


def split_holdout(group: np.ndarray, n_groups: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded (train, holdout) row split that keeps all copies of an observation on one side.

    ``floor(fraction * n_groups)`` groups are held out; the holdout is empty
    for fraction 0.
    """
    n_hold = int(np.floor(fraction * n_groups))
    order = np.argsort(_kernels.uniforms(seed, 5, 0, n_groups), kind="stable")
    held = np.zeros(n_groups, dtype=bool)
    held[order[:n_hold]] = True
    rows = held[group]
    return np.flatnonzero(~rows).astype(np.intp), np.flatnonzero(rows).astype(np.intp)


def _jittered(zb: np.ndarray, scale: np.ndarray, seed: int, epoch: int) -> np.ndarray:
    """Training inputs with fresh Gaussian noise on the conditioning columns."""
    if not np.any(scale):
        return zb
    noise = np.random.default_rng([seed, 3, epoch]).standard_normal(zb.shape, dtype=np.float32)
    return np.ascontiguousarray(zb + noise * scale)


def estimate_cmi_dv(dataset: Dataset, cfg: StatNetConfig | None = None, target: str = "exposure") -> CmiEstimate:
    """Donsker-Varadhan estimate of I(target; click | x_r) in nats.

    The critic trains on one part of the rows; the objective is scored on
    the held-out rest so that memorized samples cannot inflate it. Each epoch
    redraws the neighbour donors for the marginal sample and the minibatch
    order, runs one pass of bias-corrected gradient ascent, then records the
    held-out objective. During training the conditioning features carry
    fresh Gaussian noise of scale ``input_noise`` (in standard deviations),
    which keeps the critic from memorizing individual training rows; any
    critic is a valid witness for the bound, so this only restricts the
    critic family. The reported value is the last recorded objective clamped
    below at zero.
    """
    cfg = cfg or StatNetConfig()
    c = _binary("click", dataset.click).astype(np.float32)
    a = first_variable(dataset, target)
    x, _ = standardize_features(dataset)
    x = x.x_r
    n = len(dataset)
    nbrs = neighbour_donor_pool(dataset, x, cfg.knn_k, cfg.seed)
    train, hold = split_holdout(*copy_groups(dataset), cfg.holdout_fraction, cfg.seed)
    if len(hold) == 0:
        hold = train
    if len(train) < 2:
        raise TooFewRows("not enough rows left to train the critic")
    zb_all = np.column_stack([x, a]).astype(np.float32)
    zb = np.ascontiguousarray(zb_all[train])
    c_train = np.ascontiguousarray(c[train])
    dims = np.array([zb.shape[1] + 1, *cfg.hidden_layers, 1], dtype=np.intp)
    act = _kernels.ACT_RELU if cfg.activation == "relu" else _kernels.ACT_TANH
    flat = init_critic(dims, cfg.activation, cfg.seed)
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    z_joint = np.ascontiguousarray(np.column_stack([zb_all[hold], c[hold]]))
    z_marg = z_joint.copy()
    t, ema = 0, -1.0
    noise_mask = np.zeros(zb.shape[1], dtype=np.float32)
    noise_mask[: x.shape[1]] = cfg.input_noise
    curve = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        cm = c[_kernels.knn_donors(cfg.seed, 1000 + 2 * epoch, nbrs)]
        perm = np.argsort(_kernels.uniforms(cfg.seed, 1001 + 2 * epoch, 0, len(train)), kind="stable")
        t, ema = _kernels.critic_epoch(
            flat, m, v, dims, _jittered(zb, noise_mask, cfg.seed, epoch), c_train, np.ascontiguousarray(cm[train]), perm.astype(np.intp),
            cfg.batch_size, cfg.learning_rate, cfg.ema_decay, act, t, ema,
        )
        if not np.isfinite(ema):
            raise DivergedTraining(f"critic diverged in epoch {epoch}")
        z_marg[:, -1] = cm[hold]
        t_joint = _kernels.critic_forward(flat, dims, z_joint, act).astype(np.float64)
        t_marg = _kernels.critic_forward(flat, dims, z_marg, act).astype(np.float64)
        value = dv_objective(t_joint, t_marg)
        if not np.isfinite(value):
            raise DivergedTraining(f"DV objective is not finite in epoch {epoch}")
        curve[epoch] = value
    return CmiEstimate(
        value=max(0.0, float(curve[-1])),
        train_curve=curve,
        n_joint=len(hold),
        n_marginal=len(hold),
        target=target,
    )
