"""Loading, splitting, preprocessing and candidate-set corruption of regression data."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .numeric import ConstantColumnError, make_rng, minmax, standardize

SPLITS = ("train", "validation", "test")
BUNDLED = ("abalone", "concrete")


class LoadError(ValueError):
    pass


class SplitError(ValueError):
    pass


class CorruptionError(ValueError):
    pass


# -- schema -----------------------------------------------------------------


@dataclass(frozen=True)
class Column:
    name: str
    kind: str = "continuous"
    lo: float | None = None
    hi: float | None = None
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("continuous", "bounded", "categorical"):
            raise LoadError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "bounded" and not (self.lo is not None and self.hi is not None and self.hi > self.lo):
            raise LoadError(f"column {self.name!r}: bounded columns need hi > lo")
        if self.kind == "categorical" and not self.levels:
            raise LoadError(f"column {self.name!r}: categorical columns need levels")


@dataclass(frozen=True)
class DatasetSchema:
    columns: tuple[Column, ...]
    target: str

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if names.count(self.target) != 1:
            raise LoadError(f"target {self.target!r} must name exactly one column")
        if len(set(names)) != len(names):
            raise LoadError("duplicate column names in schema")

    @property
    def features(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.name != self.target)

    @classmethod
    def from_dict(cls, d: dict) -> DatasetSchema:
        try:
            cols = tuple(
                Column(c["name"], c.get("kind", "continuous"), c.get("lo"), c.get("hi"), tuple(c.get("levels", ())))
                for c in d["columns"]
            )
            return cls(cols, d["target"])
        except KeyError as e:
            raise LoadError(f"schema is missing field {e}") from None

    @classmethod
    def load(cls, path) -> DatasetSchema:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise LoadError(f"cannot read schema {path}: {e}") from None


def bundled_paths(name: str) -> tuple[Path, Path]:
    """CSV and schema paths of a dataset shipped with the package."""
    if name not in BUNDLED:
        raise LoadError(f"no bundled dataset {name!r}; available: {', '.join(BUNDLED)}")
    root = resources.files("plr") / "data"
    return Path(str(root / f"{name}.csv")), Path(str(root / f"{name}.json"))


# -- raw tables ---------------------------------------------------------------


@dataclass
class Table:
    schema: DatasetSchema
    columns: dict[str, np.ndarray]
    target: np.ndarray

    @property
    def n_rows(self) -> int:
        return int(self.target.shape[0])

    def take(self, idx) -> Table:
        return Table(self.schema, {k: v[idx] for k, v in self.columns.items()}, self.target[idx])


def load_csv(path, schema: DatasetSchema) -> Table:
    """Read a headered CSV into typed columns following ``schema``."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as e:
        raise LoadError(f"cannot read {path}: {e}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise LoadError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    wanted = [c.name for c in schema.columns]
    missing = [n for n in wanted if n not in header]
    if missing:
        raise LoadError(f"{path}: missing column(s) {', '.join(missing)}")
    pos = {n: header.index(n) for n in wanted}
    body = [r for r in rows[1:] if r]

    cols: dict[str, list] = {n: [] for n in wanted}
    for lineno, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise LoadError(f"{path}:{lineno}: expected {len(header)} fields, got {len(r)}")
        for c in schema.columns:
            cell = r[pos[c.name]].strip()
            if c.kind == "categorical":
                if cell not in c.levels:
                    raise LoadError(f"{path}:{lineno}: column {c.name!r} has unknown level {cell!r}")
                cols[c.name].append(cell)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise LoadError(f"{path}:{lineno}: column {c.name!r} has unparseable value {cell!r}") from None
            if not math.isfinite(v):
                raise LoadError(f"{path}:{lineno}: column {c.name!r} is not finite")
            cols[c.name].append(v)

    arrays = {}
    for c in schema.columns:
        arrays[c.name] = np.array(cols[c.name], dtype=object if c.kind == "categorical" else np.float64)
    target = arrays.pop(schema.target).astype(np.float64)
    return Table(schema, arrays, target)


def split_sizes(n: int, fractions=(0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise SplitError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    if n < 5:
        raise SplitError(f"need at least 5 rows to split, got {n}")
    n_val = int(math.floor(n * fractions[1] + 1e-9))
    n_test = int(math.floor(n * fractions[2] + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split(n: int, rng: np.random.Generator, fractions=(0.6, 0.2, 0.2)) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random disjoint train/validation/test index arrays; remainder rows go to train."""
    n_train, n_val, _ = split_sizes(n, fractions)
    perm = rng.permutation(n)
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


# -- preprocessing ------------------------------------------------------------


@dataclass
class FittedTransform:
    """Per-column statistics fitted on the training split."""

    steps: list[tuple[str, str, tuple]] = field(default_factory=list)
    dropped: list[str] = field(default_factory=list)

    @property
    def feature_names(self) -> list[str]:
        names = []
        for name, kind, params in self.steps:
            if kind == "categorical":
                names.extend(f"{name}={lvl}" for lvl in params)
            else:
                names.append(name)
        return names

    def apply(self, table: Table) -> np.ndarray:
        parts = []
        for name, kind, params in self.steps:
            col = table.columns[name]
            if kind == "continuous":
                mean, std = params
                parts.append(((col - mean) / std)[:, None])
            elif kind == "bounded":
                parts.append(minmax(col, *params)[:, None])
            else:
                parts.append(np.stack([(col == lvl).astype(np.float64) for lvl in params], axis=1))
        if not parts:
            return np.zeros((table.n_rows, 0))
        return np.ascontiguousarray(np.concatenate(parts, axis=1), dtype=np.float64)


def fit_transform(train: Table) -> FittedTransform:
    tf = FittedTransform()
    for c in train.schema.features:
        if c.kind == "continuous":
            try:
                _, mean, std = standardize(train.columns[c.name])
            except ConstantColumnError:
                tf.dropped.append(c.name)
                continue
            tf.steps.append((c.name, "continuous", (mean, std)))
        elif c.kind == "bounded":
            tf.steps.append((c.name, "bounded", (c.lo, c.hi)))
        else:
            tf.steps.append((c.name, "categorical", c.levels))
    return tf


def preprocess(train: Table, validation: Table, test: Table):
    """Fit the transform on ``train`` and apply it to all three splits.

    Labels stay in their original units.
    """
    tf = fit_transform(train)
    return (tf.apply(train), tf.apply(validation), tf.apply(test)), tf


# -- partial labels -------------------------------------------------------------


@dataclass
class PartialDataset:
    """Features with one candidate set per row; every set holds the true label.

    ``y_true`` is carried for evaluation and the supervised baseline only.
    """

    X: np.ndarray
    candidates: np.ndarray
    y_true: np.ndarray
    split_tag: str = "train"

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.candidates = np.ascontiguousarray(self.candidates, dtype=np.float64)
        self.y_true = np.ascontiguousarray(self.y_true, dtype=np.float64)
        if self.candidates.ndim == 1:
            self.candidates = self.candidates.reshape(-1, 1)
        n = self.X.shape[0]
        if self.candidates.shape[0] != n or self.y_true.shape != (n,):
            raise ValueError(
                f"inconsistent sizes: X {self.X.shape}, candidates {self.candidates.shape}, y_true {self.y_true.shape}"
            )
        if self.split_tag not in SPLITS:
            raise ValueError(f"split_tag must be one of {SPLITS}")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_candidates(self) -> int:
        return self.candidates.shape[1]

    def subset(self, idx) -> PartialDataset:
        return PartialDataset(self.X[idx], self.candidates[idx], self.y_true[idx], self.split_tag)


def corrupt(labels, num_false: int, span: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    """Candidate sets of size ``1 + num_false``: the true label plus uniform draws over ``span``.

    The true label's column is chosen at random per row. Returns an
    ``(n, 1 + num_false)`` array.
    """
    y = np.asarray(labels, dtype=np.float64)
    if num_false < 0:
        raise CorruptionError(f"num_false must be >= 0, got {num_false}")
    lo, hi = float(span[0]), float(span[1])
    if not hi > lo:
        raise CorruptionError(f"label span is degenerate: ({lo}, {hi})")
    n = y.shape[0]
    k = 1 + num_false
    out = np.empty((n, k))
    if num_false == 0:
        out[:, 0] = y
        return out
    false = rng.uniform(lo, hi, size=(n, num_false))
    pos = rng.integers(0, k, size=n)
    cols = np.arange(k)[None, :]
    shifted = cols - (cols > pos[:, None])
    out[:] = np.take_along_axis(false, np.clip(shifted, 0, num_false - 1), axis=1)
    out[np.arange(n), pos] = y
    return out


def synth_linear(n: int, w, b: float, x_range, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free ``y = X @ w + b`` with X uniform over ``x_range``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    X = rng.uniform(x_range[0], x_range[1], size=(n, w.shape[0]))
    return X, X @ w + b


def partial_from_labels(X, y, num_false: int, rng, span=None, split_tag="train") -> PartialDataset:
    y = np.asarray(y, dtype=np.float64)
    span = span if span is not None else (float(y.min()), float(y.max()))
    return PartialDataset(X, corrupt(y, num_false, span, rng), y, split_tag)


# -- JSON-lines exchange --------------------------------------------------------


def write_jsonl(path, data: PartialDataset) -> None:
    with open(path, "w") as fh:
        for x, c, y in zip(data.X, data.candidates, data.y_true):
            rec = {"features": x.tolist(), "candidates": c.tolist(), "y_true": float(y)}
            fh.write(json.dumps(rec) + "\n")


def read_jsonl(path, split_tag: str = "train") -> PartialDataset:
    X, C, Y = [], [], []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    X.append(rec["features"])
                    C.append(rec["candidates"])
                    Y.append(rec["y_true"])
                except (json.JSONDecodeError, KeyError) as e:
                    raise LoadError(f"{path}:{lineno}: bad record ({e})") from None
    except OSError as e:
        raise LoadError(f"cannot read {path}: {e}") from None
    if not X:
        raise LoadError(f"{path}: no records")
    if len({len(c) for c in C}) != 1:
        raise LoadError(f"{path}: candidate sets differ in size")
    return PartialDataset(np.array(X, dtype=np.float64), np.array(C, dtype=np.float64), np.array(Y), split_tag)


def make_splits(
    table: Table,
    num_false: int,
    seed: int,
    corrupt_validation: bool = True,
    fractions=(0.6, 0.2, 0.2),
) -> tuple[PartialDataset, PartialDataset, PartialDataset]:
    """Split, preprocess and corrupt ``table`` for one repetition.

    False labels are drawn from the span of the *training* labels. The test
    split is never corrupted; its candidate sets hold only the true label.
    """
    tr, va, te = split(table.n_rows, make_rng(seed, 0), fractions)
    parts = [table.take(i) for i in (tr, va, te)]
    (Xtr, Xva, Xte), _ = preprocess(*parts)
    ytr, yva, yte = (p.target for p in parts)
    span = (float(ytr.min()), float(ytr.max()))
    train = PartialDataset(Xtr, corrupt(ytr, num_false, span, make_rng(seed, 1)), ytr, "train")
    cva = corrupt(yva, num_false, span, make_rng(seed, 2)) if corrupt_validation else yva[:, None]
    validation = PartialDataset(Xva, cva, yva, "validation")
    test = PartialDataset(Xte, yte[:, None], yte, "test")
    return train, validation, test
