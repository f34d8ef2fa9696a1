"""Dataset loading, target binarization, stratified splits and the toy DGP."""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, ParseError, StratificationError
from .nn import BinaryBatch
from .rng import make_rng, standard_normal

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "validation", "calibration", "test")
DEFAULT_FRACTIONS = (0.6, 0.1, 0.1, 0.2)
DEFAULT_MISSING = ("", "?", "NA", "NaN", "nan")


@dataclass(frozen=True)
class RawDataset:
    """Encoded features plus the untouched target column.

    ``feature_kinds`` maps each source column to ``numeric`` or
    ``categorical``; categorical columns appear in ``feature_names`` as one
    ``name=level`` indicator column per level.
    """

    name: str
    features: np.ndarray
    feature_names: tuple[str, ...]
    target: np.ndarray
    feature_kinds: dict = field(default_factory=dict)
    dropped_rows: int = 0

    def __len__(self):
        return self.features.shape[0]


@dataclass(frozen=True)
class Dataset:
    """Numeric feature matrix with binary labels, ready for splitting."""

    name: str
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] = ()

    def __len__(self):
        return self.y.shape[0]


def read_schema(path) -> dict:
    path = Path(path)
    try:
        schema = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read schema {path}: {exc}") from exc
    for key in ("target", "columns"):
        if key not in schema:
            raise ConfigError(f"schema {path} lacks required key {key!r}")
    if "path" in schema:
        schema["path"] = str((path.parent / schema["path"]).resolve())
    schema.setdefault("name", path.stem)
    return schema


def load_csv(path, schema: dict) -> RawDataset:
    """Parse a delimited file according to ``schema``.

    ``schema`` keys: ``target`` (column name), ``columns`` (list of
    ``{"name", "kind"}`` feature columns, kind ``numeric`` or
    ``categorical``), and optionally ``name``, ``separator`` (default ``,``),
    ``header`` (default true) and ``missing`` (tokens treated as missing).
    Without a header row, ``names`` must list every column of the file in
    order. Rows with a missing value in any used column are dropped.
    """
    path = Path(path if path is not None else schema["path"])
    sep = schema.get("separator", ",")
    missing = set(schema.get("missing", DEFAULT_MISSING))
    columns = schema["columns"]
    target = schema["target"]
    for col in columns:
        if col.get("kind", "numeric") not in ("numeric", "categorical"):
            raise ConfigError(f"column {col['name']!r} has unknown kind {col.get('kind')!r}")

    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise ConfigError(f"cannot open data file {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle, delimiter=sep, skipinitialspace=True)
        if schema.get("header", True):
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise ParseError("file is empty", line=1) from None
            first_line = 2
        else:
            if "names" not in schema:
                raise ConfigError("schema without header must give 'names' for every column")
            header = list(schema["names"])
            first_line = 1
        index = {name: i for i, name in enumerate(header)}
        wanted = [c["name"] for c in columns] + [target]
        unknown = [n for n in wanted if n not in index]
        if unknown:
            raise ConfigError(f"schema names columns absent from {path.name}: {unknown}")

        rows, dropped = [], 0
        for lineno, row in enumerate(reader, start=first_line):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=lineno)
            cells = [row[index[n]].strip() for n in wanted]
            if any(c in missing for c in cells):
                dropped += 1
                continue
            rows.append((lineno, cells))

    if dropped:
        log.info("%s: dropped %d rows with missing values", path.name, dropped)
    if not rows:
        raise ParseError("no complete rows in file")

    blocks, names, kinds = [], [], {}
    for j, col in enumerate(columns):
        kind = col.get("kind", "numeric")
        kinds[col["name"]] = kind
        values = [cells[j] for _, cells in rows]
        if kind == "numeric":
            out = np.empty(len(rows))
            for i, (lineno, cells) in enumerate(rows):
                try:
                    out[i] = float(cells[j])
                except ValueError:
                    raise ParseError(
                        f"column {col['name']!r}: {cells[j]!r} is not numeric", line=lineno) from None
            blocks.append(out[:, None])
            names.append(col["name"])
        else:
            levels = sorted(set(values))
            onehot = np.array([[v == lev for lev in levels] for v in values], dtype=float)
            blocks.append(onehot)
            names.extend(f"{col['name']}={lev}" for lev in levels)
    features = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
    target_values = np.array([cells[-1] for _, cells in rows], dtype=object)
    return RawDataset(schema.get("name", path.stem), features, tuple(names), target_values,
                      kinds, dropped)


def binarize_majority(targets) -> np.ndarray:
    """1 for the most frequent class, 0 otherwise.

    Frequency ties go to the class whose string form sorts first.
    """
    targets = list(targets)
    if not targets:
        raise ContractError("cannot binarize an empty target")
    counts = Counter(targets)
    top = max(counts.values())
    majority = min((c for c, n in counts.items() if n == top), key=str)
    return np.array([1 if t == majority else 0 for t in targets], dtype=int)


def to_dataset(raw: RawDataset, binarize: bool = True) -> Dataset:
    """Binary-labelled view of ``raw``; ``binarize=False`` expects 0/1 targets."""
    if binarize:
        y = binarize_majority(raw.target).astype(float)
    else:
        y = np.asarray(raw.target, dtype=float)
        if not np.all((y == 0) | (y == 1)):
            raise ContractError("targets are not binary; pass binarize=True")
    return Dataset(raw.name, np.asarray(raw.features, dtype=float), y, raw.feature_names)


class SplitSet:
    """Train / validation / calibration / test partition of one dataset.

    ``indices`` maps each split name to source row indices. Reading the
    ``test`` attribute is counted in ``test_reads`` so a pipeline can prove
    it touched the test rows exactly once.
    """

    def __init__(self, train, validation, calibration, test, indices,
                 mean=None, std=None):
        self.train = train
        self.validation = validation
        self.calibration = calibration
        self._test = test
        self.indices = indices
        self.mean = mean
        self.std = std
        self.test_reads = 0

    @property
    def test(self) -> BinaryBatch:
        self.test_reads += 1
        return self._test

    def batches(self) -> dict:
        """All four batches without registering a test read (for tooling)."""
        return {"train": self.train, "validation": self.validation,
                "calibration": self.calibration, "test": self._test}

    @property
    def standardized(self) -> bool:
        return self.mean is not None


def largest_remainder(total: int, fractions) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``fractions``.

    Floors first; leftover units go to the largest fractional remainders,
    earlier splits winning ties.
    """
    quotas = total * np.asarray(fractions, dtype=float)
    alloc = np.floor(quotas + 1e-9).astype(int)
    remainder = quotas - alloc
    order = sorted(range(len(quotas)), key=lambda i: (-round(remainder[i], 9), i))
    for i in order[: total - alloc.sum()]:
        alloc[i] += 1
    return alloc


def stratified_split(dataset: Dataset, fractions=DEFAULT_FRACTIONS, seed=0) -> SplitSet:
    """Class-stratified four-way split, deterministic given ``seed``.

    Each class is shuffled with its own child stream of ``seed`` and cut by
    :func:`largest_remainder`. Indices within a split are kept in source order.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 4 or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"fractions must be four positive numbers summing to 1, got {fractions}")
    y = np.asarray(dataset.y)
    parts = {name: [] for name in SPLIT_NAMES}
    for k, cls in enumerate(np.unique(y)):
        members = np.flatnonzero(y == cls)
        if members.size < 4:
            raise StratificationError(f"class {cls:g} has {members.size} rows; at least 4 are needed")
        alloc = largest_remainder(members.size, fractions)
        if np.any(alloc == 0):
            empty = [SPLIT_NAMES[i] for i in np.flatnonzero(alloc == 0)]
            raise StratificationError(f"class {cls:g} is too small to appear in splits {empty}")
        perm = make_rng(seed, k).permutation(members)
        bounds = np.concatenate([[0], np.cumsum(alloc)])
        for i, name in enumerate(SPLIT_NAMES):
            parts[name].append(perm[bounds[i]:bounds[i + 1]])
    indices = {name: np.sort(np.concatenate(idx)) for name, idx in parts.items()}
    batches = {name: BinaryBatch(dataset.X[idx], y[idx]) for name, idx in indices.items()}
    return SplitSet(batches["train"], batches["validation"], batches["calibration"],
                    batches["test"], indices)


def standardize(splits: SplitSet) -> SplitSet:
    """Scale every split by the train mean and standard deviation.

    Columns that are constant on train are centered but not scaled.
    """
    X = splits.train.X
    if X.shape[0] == 0:
        raise ContractError("cannot standardize with an empty train split")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    scale = np.where(std > 0, std, 1.0)

    def tx(batch):
        return BinaryBatch((batch.X - mean) / scale, batch.y)

    b = splits.batches()
    return SplitSet(tx(b["train"]), tx(b["validation"]), tx(b["calibration"]), tx(b["test"]),
                    splits.indices, mean, std)


def yeo_johnson(x, lam: float):
    """Yeo-Johnson power transform, elementwise."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    xp, xn = x[pos], x[~pos]
    if lam != 0:
        out[pos] = ((xp + 1.0) ** lam - 1.0) / lam
    else:
        out[pos] = np.log1p(xp)
    if lam != 2:
        out[~pos] = -((1.0 - xn) ** (2.0 - lam) - 1.0) / (2.0 - lam)
    else:
        out[~pos] = -np.log1p(-xn)
    return out[()] if out.ndim == 0 else out


TOY_LAMBDA = -1.0


def toy_boundary_offset(X) -> np.ndarray:
    """Signed distance ``x1 - t(x2)`` from the noiseless toy decision boundary."""
    X = np.asarray(X, dtype=float)
    return X[:, 0] - yeo_johnson(X[:, 1], TOY_LAMBDA)


def generate_toy(n: int, seed=0) -> RawDataset:
    """``y = 1[x1 < t(x2) + e]`` with ``x1, x2, e`` iid N(0, 1), t = Yeo-Johnson(-1)."""
    if n < 1:
        raise ContractError("n must be positive")
    rng = make_rng(seed)
    x1 = standard_normal(rng, n)
    x2 = standard_normal(rng, n)
    noise = standard_normal(rng, n)
    y = (x1 < yeo_johnson(x2, TOY_LAMBDA) + noise).astype(int)
    return RawDataset("Toy", np.column_stack([x1, x2]), ("x1", "x2"), y,
                      {"x1": "numeric", "x2": "numeric"})
