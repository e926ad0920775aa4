"""Interaction-log schema: records, columnar datasets and their invariants."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import EmptyDataset

SPLITS = ("train", "eval", "benchmark")
X_NR_KINDS = ("continuous", "categorical")


class InteractionRecord(NamedTuple):
    """One logged (user, item, relevant features, bias attribute, exposure, click) event."""

    user_id: Any
    item_id: Any
    x_r: tuple[float, ...]
    x_nr: Any
    exposure: int
    click: int


class Violation(NamedTuple):
    row: int
    rule: str


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented, immutable collection of interaction records.

    ``x_r`` is an ``(N, d)`` float array. Datasets built from records whose
    feature vectors disagree in length keep ``x_r`` as a 1-D object array so
    that :func:`validate` can report the offending rows.
    """

    user_id: np.ndarray
    item_id: np.ndarray
    x_r: np.ndarray
    x_nr: np.ndarray
    exposure: np.ndarray
    click: np.ndarray
    split: str = "train"
    x_nr_kind: str = "continuous"
    feature_names: tuple[str, ...] | None = None
    origin: np.ndarray | None = None
    declared_dim: int | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.x_nr_kind not in X_NR_KINDS:
            raise ValueError(f"x_nr_kind must be one of {X_NR_KINDS}, got {self.x_nr_kind!r}")
        n = len(self.user_id)
        for name in ("item_id", "x_r", "x_nr", "exposure", "click"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if self.origin is not None and len(self.origin) != n:
            raise ValueError("origin column length mismatch")
        for name in ("user_id", "item_id", "x_r", "x_nr", "exposure", "click", "origin"):
            a = getattr(self, name)
            if a is not None:
                _frozen(a)

    @classmethod
    def from_arrays(
        cls,
        x_r,
        x_nr,
        exposure,
        click,
        user_id=None,
        item_id=None,
        split: str = "train",
        x_nr_kind: str | None = None,
        feature_names: Sequence[str] | None = None,
        origin=None,
    ) -> "Dataset":
        x_r = np.array(x_r, dtype=np.float64)
        if x_r.ndim == 1:
            x_r = x_r[:, None]
        n = x_r.shape[0]
        if x_nr_kind is None:
            x_nr_kind = "continuous" if np.asarray(x_nr).dtype.kind in "fiub" else "categorical"
        if x_nr_kind == "continuous":
            x_nr = np.array(x_nr, dtype=np.float64)
        else:
            x_nr = np.array(x_nr, dtype=object)
        user_id = np.arange(n) if user_id is None else np.asarray(user_id)
        item_id = np.arange(n) if item_id is None else np.asarray(item_id)
        return cls(
            user_id=user_id.copy(),
            item_id=item_id.copy(),
            x_r=x_r,
            x_nr=x_nr,
            exposure=np.array(exposure, dtype=np.int8),
            click=np.array(click, dtype=np.int8),
            split=split,
            x_nr_kind=x_nr_kind,
            feature_names=tuple(feature_names) if feature_names is not None else None,
            origin=None if origin is None else np.array(origin, dtype=object),
        )

    @classmethod
    def from_records(
        cls,
        records: Iterable[InteractionRecord],
        split: str = "train",
        x_nr_kind: str | None = None,
        feature_names: Sequence[str] | None = None,
    ) -> "Dataset":
        records = [InteractionRecord(*r) for r in records]
        if not records:
            raise EmptyDataset("cannot build a dataset from zero records")
        dims = {len(r.x_r) for r in records}
        if len(dims) == 1:
            x_r = np.array([r.x_r for r in records], dtype=np.float64).reshape(len(records), -1)
        else:
            x_r = np.empty(len(records), dtype=object)
            for i, r in enumerate(records):
                x_r[i] = np.asarray(r.x_r, dtype=np.float64)
        x_nr = [r.x_nr for r in records]
        if x_nr_kind is None:
            x_nr_kind = (
                "continuous"
                if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in x_nr)
                else "categorical"
            )
        x_nr = np.array(x_nr, dtype=np.float64 if x_nr_kind == "continuous" else object)
        return cls(
            user_id=np.array([r.user_id for r in records], dtype=object),
            item_id=np.array([r.item_id for r in records], dtype=object),
            x_r=x_r,
            x_nr=x_nr,
            exposure=np.array([r.exposure for r in records], dtype=np.int8),
            click=np.array([r.click for r in records], dtype=np.int8),
            split=split,
            x_nr_kind=x_nr_kind,
            feature_names=tuple(feature_names) if feature_names is not None else None,
            declared_dim=len(records[0].x_r),
        )

    def __len__(self) -> int:
        return len(self.user_id)

    @property
    def n(self) -> int:
        return len(self)

    @property
    def ragged(self) -> bool:
        return self.x_r.dtype == object

    @property
    def feature_dim(self) -> int:
        if self.declared_dim is not None:
            return self.declared_dim
        if self.ragged:
            return len(self.x_r[0])
        return self.x_r.shape[1]

    @property
    def records(self) -> list[InteractionRecord]:
        return list(iter(self))

    def __iter__(self) -> Iterator[InteractionRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> InteractionRecord:
        x_nr = self.x_nr[i]
        if self.x_nr_kind == "continuous":
            x_nr = float(x_nr)
        return InteractionRecord(
            self.user_id[i],
            self.item_id[i],
            tuple(float(v) for v in self.x_r[i]),
            x_nr,
            int(self.exposure[i]),
            int(self.click[i]),
        )

    def take(self, indices) -> "Dataset":
        """Rows at ``indices`` (repeats allowed), in the given order."""
        idx = np.asarray(indices, dtype=np.intp)
        return dataclasses.replace(
            self,
            user_id=self.user_id[idx],
            item_id=self.item_id[idx],
            x_r=self.x_r[idx],
            x_nr=self.x_nr[idx],
            exposure=self.exposure[idx],
            click=self.click[idx],
            origin=None if self.origin is None else self.origin[idx],
        )

    def replace(self, **changes) -> "Dataset":
        return dataclasses.replace(self, **changes)

    def equals(self, other: "Dataset") -> bool:
        """Same records in the same order, same split, attribute kind and feature names."""
        if not isinstance(other, Dataset) or len(self) != len(other):
            return False
        if (self.split, self.x_nr_kind, self.feature_names) != (other.split, other.x_nr_kind, other.feature_names):
            return False
        return self.records == other.records

    def x_nr_codes(self) -> tuple[np.ndarray, list]:
        """Integer codes of a categorical bias attribute in sorted-label order."""
        labels = sorted(set(self.x_nr.tolist()), key=lambda v: (str(type(v)), v))
        lookup = {v: j for j, v in enumerate(labels)}
        return np.array([lookup[v] for v in self.x_nr.tolist()], dtype=np.intp), labels

    def bias_matrix(self) -> np.ndarray:
        """Bias attribute as a float design block: raw scalar, or one-hot over labels."""
        if self.x_nr_kind == "continuous":
            return self.x_nr.astype(np.float64)[:, None]
        codes, labels = self.x_nr_codes()
        out = np.zeros((len(self), len(labels)))
        out[np.arange(len(self)), codes] = 1.0
        return out


def concat(datasets: Sequence[Dataset], origins: Sequence[str] | None = None, split: str | None = None) -> Dataset:
    """Row-wise union; ``origins`` tags each block for provenance reporting."""
    if not datasets:
        raise EmptyDataset("nothing to concatenate")
    first = datasets[0]
    for d in datasets[1:]:
        if d.feature_dim != first.feature_dim or d.x_nr_kind != first.x_nr_kind:
            raise ValueError("datasets disagree on feature_dim or x_nr_kind")
    if origins is not None:
        origin = np.concatenate([np.full(len(d), o, dtype=object) for d, o in zip(datasets, origins)])
    elif all(d.origin is not None for d in datasets):
        origin = np.concatenate([d.origin for d in datasets])
    else:
        origin = None
    return Dataset(
        user_id=np.concatenate([d.user_id.astype(object) for d in datasets]),
        item_id=np.concatenate([d.item_id.astype(object) for d in datasets]),
        x_r=np.concatenate([d.x_r for d in datasets]),
        x_nr=np.concatenate([d.x_nr for d in datasets]),
        exposure=np.concatenate([d.exposure for d in datasets]),
        click=np.concatenate([d.click for d in datasets]),
        split=split or first.split,
        x_nr_kind=first.x_nr_kind,
        feature_names=first.feature_names,
        origin=origin,
    )


def copy_groups(dataset: Dataset) -> tuple[np.ndarray, int]:
    """Group id per row; rows sharing user, item, exposure and click are copies of one observation.

    Resampling with replacement repeats rows; procedures that need
    independent neighbours or disjoint splits treat each group as one point.
    Returns the group of each row (numbered by first appearance) and the
    number of groups.
    """
    ids: dict = {}
    keys = zip(dataset.user_id.tolist(), dataset.item_id.tolist(), dataset.exposure.tolist(), dataset.click.tolist())
    group = np.fromiter((ids.setdefault(key, len(ids)) for key in keys), dtype=np.intp, count=len(dataset))
    return group, len(ids)


def validate(dataset: Dataset) -> list[Violation]:
    """Check record invariants; returns one violation per offending row and rule."""
    out: list[Violation] = []
    dim = dataset.feature_dim
    for i in range(len(dataset)):
        e = int(dataset.exposure[i])
        c = int(dataset.click[i])
        if e not in (0, 1):
            out.append(Violation(i, "binary-exposure"))
        if c not in (0, 1):
            out.append(Violation(i, "binary-click"))
        if c == 1 and e == 0:
            out.append(Violation(i, "click-implies-exposure"))
        x = dataset.x_r[i]
        if len(x) != dim:
            out.append(Violation(i, "feature-dim"))
        elif not np.all(np.isfinite(np.asarray(x, dtype=np.float64))):
            out.append(Violation(i, "finite-features"))
    return out


@dataclass(frozen=True)
class FeatureTransform:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, dataset: Dataset) -> Dataset:
        return dataset.replace(x_r=(dataset.x_r - self.mean) / self.scale)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}


def standardize_features(dataset: Dataset) -> tuple[Dataset, FeatureTransform]:
    """Z-score every ``x_r`` column using the population standard deviation.

    Zero-variance columns are passed through untouched (mean 0, scale 1).
    """
    if len(dataset) < 2:
        raise EmptyDataset(f"standardization needs at least 2 records, got {len(dataset)}")
    x = dataset.x_r
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    flat = sd <= 1e-12 * np.maximum(1.0, np.abs(mean))
    mean = np.where(flat, 0.0, mean)
    scale = np.where(flat, 1.0, sd)
    transform = FeatureTransform(mean=mean, scale=scale)
    return transform.apply(dataset), transform
