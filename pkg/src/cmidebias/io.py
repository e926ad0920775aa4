"""Dataset files: the Coat rating-matrix distribution, generic CSV, and the
package's own CSV + JSON-sidecar format."""

from __future__ import annotations

import csv
import json
import os
import tempfile
import warnings
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .baselines import PropensityModel, fit_nb_propensity
from .data import Dataset
from .errors import DataWarning, MissingColumn, NonNumericFeature, RatingOutOfRange, ShapeMismatch

FORMAT_VERSION = 1
COAT_SHAPE = (290, 300)
CLICK_MIN_RATING = 4


# ---------------------------------------------------------------------------
# helpers


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(v: float) -> str:
    return repr(float(v))


def _parse_id(values: list[str]) -> np.ndarray:
    try:
        return np.array([int(v) for v in values], dtype=np.int64)
    except ValueError:
        return np.array(values, dtype=object)


def _is_float(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# Coat


class CoatData(NamedTuple):
    train: Dataset
    test: Dataset
    propensity: PropensityModel
    train_ratings: np.ndarray
    test_ratings: np.ndarray


def _coat_file(directory: Path, name: str) -> Path:
    for cand in (directory / name, directory / "user_item_features" / name):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"{name} not found under {directory}")


def _read_matrix(path: Path, shape) -> np.ndarray:
    m = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if shape is not None and m.shape != tuple(shape):
        raise ShapeMismatch(f"{path.name} has shape {m.shape}, expected {tuple(shape)}")
    if np.any(m != np.round(m)):
        raise RatingOutOfRange(f"{path.name} contains non-integer entries")
    return m.astype(np.int64)


def _feature_names(directory: Path, map_name: str, prefix: str, width: int) -> list[str]:
    try:
        lines = [ln.strip() for ln in _coat_file(directory, map_name).read_text().splitlines() if ln.strip()]
    except FileNotFoundError:
        lines = []
    if len(lines) != width:
        return [f"{prefix}{j}" for j in range(width)]
    return [f"{prefix}{ln.split()[-1] if ' ' in ln else ln}" for ln in lines]


def load_coat_full(directory, shape=COAT_SHAPE) -> CoatData:
    """Load the Coat distribution (or any directory in its layout).

    Expects ``train.ascii`` and ``test.ascii`` rating grids (0 = unobserved,
    1-5 = rating) plus ``user_features.ascii`` / ``item_features.ascii``
    binary feature grids, optionally under ``user_item_features/`` and with
    ``*_features_map.txt`` name files. ``shape=None`` accepts any grid size.
    """
    directory = Path(directory)
    train = _read_matrix(_coat_file(directory, "train.ascii"), shape)
    test = _read_matrix(_coat_file(directory, "test.ascii"), shape if shape is not None else train.shape)
    if test.shape != train.shape:
        raise ShapeMismatch(f"train grid {train.shape} and test grid {test.shape} differ")
    for name, m in (("train", train), ("test", test)):
        if m.min() < 0 or m.max() > 5:
            raise RatingOutOfRange(f"{name} ratings must lie in 0..5, found {m.min()}..{m.max()}")
    n_users, n_items = train.shape
    uf = np.loadtxt(_coat_file(directory, "user_features.ascii"), ndmin=2)
    itf = np.loadtxt(_coat_file(directory, "item_features.ascii"), ndmin=2)
    if uf.shape[0] != n_users or itf.shape[0] != n_items:
        raise ShapeMismatch(f"feature rows ({uf.shape[0]}, {itf.shape[0]}) do not match grid {train.shape}")
    names = (_feature_names(directory, "user_features_map.txt", "user:", uf.shape[1])
             + _feature_names(directory, "item_features_map.txt", "item:", itf.shape[1]))
    support = range(1, 6)
    mnar_hist = [int(np.sum(train == r)) for r in support]
    mar_hist = [int(np.sum(test == r)) for r in support]
    observed = float(np.count_nonzero(train)) / train.size
    prop = fit_nb_propensity(mnar_hist, mar_hist, observed)

    def build(m: np.ndarray, split: str) -> Dataset:
        users, items = np.nonzero(m)  # row-major: by user, then item
        ratings = m[users, items]
        x_r = np.concatenate([uf[users], itf[items]], axis=1)
        return Dataset.from_arrays(
            x_r, prop.propensity(ratings), np.ones(len(users), dtype=np.int8),
            (ratings >= CLICK_MIN_RATING).astype(np.int8), user_id=users, item_id=items,
            split=split, x_nr_kind="continuous", feature_names=names,
        )

    return CoatData(build(train, "train"), build(test, "benchmark"), prop, train, test)


def load_coat(directory, shape=COAT_SHAPE) -> tuple[Dataset, Dataset]:
    """(MNAR train, MAR test) datasets from a Coat-format directory."""
    data = load_coat_full(directory, shape)
    return data.train, data.test


def write_coat_dir(directory, train: np.ndarray, test: np.ndarray, user_features: np.ndarray,
                   item_features: np.ndarray, user_names=None, item_names=None) -> None:
    """Write rating grids and features in the Coat layout."""
    directory = Path(directory)
    feat = directory / "user_item_features"
    feat.mkdir(parents=True, exist_ok=True)

    def grid(m):
        return "\n".join(" ".join(str(int(v)) for v in row) for row in m) + "\n"

    atomic_write(directory / "train.ascii", grid(train))
    atomic_write(directory / "test.ascii", grid(test))
    atomic_write(feat / "user_features.ascii", grid(user_features))
    atomic_write(feat / "item_features.ascii", grid(item_features))
    if user_names is not None:
        atomic_write(feat / "user_features_map.txt", "\n".join(user_names) + "\n")
    if item_names is not None:
        atomic_write(feat / "item_features_map.txt", "\n".join(item_names) + "\n")


# ---------------------------------------------------------------------------
# generic CSV


def load_csv(path, schema: dict) -> Dataset:
    """Read a CSV with a header row using a column mapping.

    ``schema`` keys: ``user``, ``item``, ``x_r`` (list of columns), ``x_nr``,
    optional ``exposure``, ``click``, ``categorical`` (x_r columns to one-hot
    encode, in sorted label order), ``x_nr_kind`` and ``split``. A missing
    exposure column defaults to all ones with a warning.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    required = [schema["user"], schema["item"], schema["x_nr"], *schema["x_r"]]
    for opt in ("click",):
        if opt in schema:
            required.append(schema[opt])
    missing = [c for c in required if c not in header]
    if missing:
        raise MissingColumn(f"columns {missing} not in {path}")
    if schema.get("exposure") and schema["exposure"] not in header:
        raise MissingColumn(f"exposure column {schema['exposure']!r} not in {path}")
    categorical = set(schema.get("categorical", ()))
    cols, names = [], []
    for c in schema["x_r"]:
        vals = [r[c] for r in rows]
        if c in categorical:
            labels = sorted(set(vals))
            for lab in labels:
                cols.append([1.0 if v == lab else 0.0 for v in vals])
                names.append(f"{c}={lab}")
        else:
            bad = next((v for v in vals if not _is_float(v)), None)
            if bad is not None:
                raise NonNumericFeature(f"column {c!r} has non-numeric value {bad!r}")
            cols.append([float(v) for v in vals])
            names.append(c)
    x_r = np.array(cols, dtype=np.float64).T.reshape(len(rows), len(cols))
    raw_nr = [r[schema["x_nr"]] for r in rows]
    kind = schema.get("x_nr_kind") or ("continuous" if all(_is_float(v) for v in raw_nr) else "categorical")
    x_nr = np.array([float(v) for v in raw_nr]) if kind == "continuous" else np.array(raw_nr, dtype=object)
    if schema.get("exposure"):
        exposure = np.array([int(float(r[schema["exposure"]])) for r in rows], dtype=np.int8)
    else:
        warnings.warn("no exposure column; every row is treated as exposed", DataWarning, stacklevel=2)
        exposure = np.ones(len(rows), dtype=np.int8)
    if schema.get("click"):
        click = np.array([int(float(r[schema["click"]])) for r in rows], dtype=np.int8)
    else:
        warnings.warn("no click column; every row is treated as not clicked", DataWarning, stacklevel=2)
        click = np.zeros(len(rows), dtype=np.int8)
    return Dataset.from_arrays(
        x_r, x_nr, exposure, click,
        user_id=_parse_id([r[schema["user"]] for r in rows]),
        item_id=_parse_id([r[schema["item"]] for r in rows]),
        split=schema.get("split", "train"), x_nr_kind=kind, feature_names=names,
    )


# ---------------------------------------------------------------------------
# native format


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_csv(dataset: Dataset, path, metadata: dict | None = None) -> None:
    """Write ``dataset`` as CSV plus a JSON sidecar describing its schema.

    Floats are written in shortest round-trip form, so reading the file back
    reproduces every value bit for bit.
    """
    if dataset.ragged:
        raise ValueError("ragged datasets cannot be written to the tabular format")
    d = dataset.feature_dim
    names = list(dataset.feature_names) if dataset.feature_names else [f"x{j}" for j in range(d)]
    header = ["user_id", "item_id", *[f"xr:{n}" for n in names], "x_nr", "exposure", "click"]
    has_origin = dataset.origin is not None
    if has_origin:
        header.append("origin")
    import io as _io

    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    cont = dataset.x_nr_kind == "continuous"
    for i in range(len(dataset)):
        row = [dataset.user_id[i], dataset.item_id[i], *map(_num, dataset.x_r[i]),
               _num(dataset.x_nr[i]) if cont else dataset.x_nr[i],
               int(dataset.exposure[i]), int(dataset.click[i])]
        if has_origin:
            row.append(dataset.origin[i])
        w.writerow(row)
    atomic_write(path, buf.getvalue())
    side = {
        "format_version": FORMAT_VERSION,
        "n_rows": len(dataset),
        "feature_names": names,
        "named_features": bool(dataset.feature_names),
        "x_nr_kind": dataset.x_nr_kind,
        "split": dataset.split,
        "has_origin": has_origin,
        "metadata": metadata or {},
    }
    atomic_write(sidecar_path(path), json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_sidecar(path) -> dict:
    return json.loads(sidecar_path(path).read_text())


def load_dataset(path) -> Dataset:
    """Read a dataset written by ``save_csv``."""
    side = read_sidecar(path)
    if side.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {side.get('format_version')}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    names = side["feature_names"]
    if header[2:2 + len(names)] != [f"xr:{n}" for n in names]:
        raise MissingColumn("feature columns do not match the sidecar")
    d = len(names)
    cols = list(zip(*rows)) if rows else [[] for _ in header]
    x_r = np.array([[float(v) for v in r[2:2 + d]] for r in rows], dtype=np.float64).reshape(len(rows), d)
    raw_nr = list(cols[2 + d])
    kind = side["x_nr_kind"]
    x_nr = np.array([float(v) for v in raw_nr]) if kind == "continuous" else np.array(raw_nr, dtype=object)
    origin = np.array(cols[5 + d], dtype=object) if side.get("has_origin") else None
    return Dataset.from_arrays(
        x_r, x_nr, np.array([int(v) for v in cols[3 + d]], dtype=np.int8),
        np.array([int(v) for v in cols[4 + d]], dtype=np.int8),
        user_id=_parse_id(list(cols[0])), item_id=_parse_id(list(cols[1])),
        split=side["split"], x_nr_kind=kind, origin=origin,
        feature_names=names if side.get("named_features", True) else None,
    )
