"""Tabular data: CSV ingestion under a declared schema, stratified splits,
and the synthetic datasets bundled for offline use."""

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .constraints import SampleSet
from .errors import ConfigError, SchemaError
from .perturb import CounterfactualMap

CATEGORICAL = "categorical"
NUMERIC = "numeric"
ROLES = ("feature", "label", "protected", "dropped")
MISSING_TOKENS = ("?", "")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    type: str = NUMERIC
    role: str = "feature"
    levels: tuple = None

    def __post_init__(self):
        if self.type not in (CATEGORICAL, NUMERIC):
            raise SchemaError(f"column {self.name!r}: unknown type {self.type!r}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.levels is not None:
            object.__setattr__(self, "levels", tuple(self.levels))


@dataclass(frozen=True)
class Drop:
    column: str


@dataclass(frozen=True)
class GroupLevels:
    """Rename levels: ``mapping`` sends an original level to its group name.

    Levels not in ``mapping`` keep their name, or become ``catch_all`` when
    the column has declared levels and the value is not among them.
    """

    column: str
    mapping: dict
    catch_all: str = None


@dataclass(frozen=True)
class BinQuantiles:
    column: str
    k: int


@dataclass(frozen=True)
class BinThreshold:
    column: str
    edges: tuple


@dataclass(frozen=True)
class OneHot:
    """Treat a numeric column as categorical (one level per distinct value)."""

    column: str


@dataclass
class DatasetSchema:
    columns: list
    transforms: list = field(default_factory=list)
    missing: str = "drop"
    missing_tokens: tuple = MISSING_TOKENS

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        labels = [c for c in self.columns if c.role == "label"]
        if len(labels) != 1:
            raise SchemaError(f"schema needs exactly one label column, found {len(labels)}")
        for c in self.columns:
            if c.role == "protected" and c.type != CATEGORICAL:
                raise SchemaError(f"protected column {c.name!r} must be categorical")
        for t in self.transforms:
            if t.column not in names:
                raise SchemaError(f"transform {type(t).__name__} references unknown column {t.column!r}")
        if self.missing not in ("drop", "error"):
            raise SchemaError("missing must be 'drop' or 'error'")

    @property
    def names(self):
        return [c.name for c in self.columns]

    def column(self, name):
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def label(self):
        return next(c for c in self.columns if c.role == "label")

    @classmethod
    def from_dict(cls, d):
        cols = [ColumnSpec(**c) for c in d["columns"]]
        ts = []
        for t in d.get("transforms", []):
            t = dict(t)
            op = t.pop("op")
            if op == "drop":
                ts.append(Drop(**t))
            elif op == "group_levels":
                groups = t.pop("groups", None)
                mapping = dict(t.pop("mapping", {}) or {})
                for target, members in (groups or {}).items():
                    for lv in members:
                        mapping[lv] = target
                ts.append(GroupLevels(t["column"], mapping, t.get("catch_all")))
            elif op == "bin_quantiles":
                ts.append(BinQuantiles(t["column"], int(t["k"])))
            elif op == "bin_threshold":
                ts.append(BinThreshold(t["column"], tuple(float(e) for e in t["edges"])))
            elif op == "one_hot":
                ts.append(OneHot(t["column"]))
            else:
                raise SchemaError(f"unknown transform op {op!r}")
        return cls(
            cols,
            ts,
            d.get("missing", "drop"),
            tuple(d.get("missing_tokens", MISSING_TOKENS)),
        )

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class FeatureGroup:
    column: str
    start: int
    levels: tuple

    @property
    def indices(self):
        return tuple(range(self.start, self.start + len(self.levels)))


@dataclass
class DatasetMeta:
    feature_names: list
    groups: dict
    numeric: dict
    label_levels: tuple
    categorical: dict
    rows: np.ndarray

    def counterfactual_map(self, column, swap=None):
        """Map swapping two levels of a categorical column (default: first two)."""
        g = self.groups[column]
        if swap is None:
            i, j = 0, 1
        else:
            i, j = (g.levels.index(s) if isinstance(s, str) else int(s) for s in swap)
        return CounterfactualMap.swap_levels(g.indices, i, j)

    def decode_row(self, x):
        """Recover the categorical levels encoded in one feature row."""
        out = {}
        for name, g in self.groups.items():
            block = np.asarray(x)[list(g.indices)]
            out[name] = g.levels[int(np.argmax(block))]
        return out


def quantile_edges(values, k):
    values = np.asarray(values, dtype=np.float64)
    return np.quantile(values, [i / k for i in range(1, k)])


def bin_values(values, edges):
    """Bin index per value; a value equal to an edge goes to the lower bin."""
    return np.searchsorted(np.asarray(edges, dtype=np.float64), np.asarray(values, dtype=np.float64), side="left")


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        rows = [r for r in reader if r]
    if not rows:
        raise SchemaError(f"{path}: empty file")
    return [h.strip() for h in rows[0]], [[v.strip() for v in r] for r in rows[1:]]


def load_dataset(path, schema):
    """Read ``path`` and encode it per ``schema``.

    Transforms run in declared order; categorical columns (and binned
    numerics) are one-hot encoded, remaining numerics are min-max scaled to
    [0, 1]. Returns ``(SampleSet, DatasetMeta)``.
    """
    header, rows = read_csv(path)
    if sorted(header) != sorted(schema.names):
        raise SchemaError(f"header {header} does not match schema columns {schema.names}")
    pos = {h: i for i, h in enumerate(header)}

    kept, row_ids = [], []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise SchemaError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        missing = [c.name for c in schema.columns if c.role != "dropped" and row[pos[c.name]] in schema.missing_tokens]
        if missing:
            if schema.missing == "error":
                raise SchemaError(f"row {r}, column {missing[0]!r}: missing value")
            continue
        kept.append(row)
        row_ids.append(r)
    if not kept:
        raise SchemaError("no rows left after dropping missing values")

    types = {c.name: c.type for c in schema.columns}
    levels = {c.name: c.levels for c in schema.columns}
    dropped = {c.name for c in schema.columns if c.role == "dropped"}
    values = {c.name: [row[pos[c.name]] for row in kept] for c in schema.columns if c.name not in dropped}

    for t in schema.transforms:
        if isinstance(t, Drop):
            dropped.add(t.column)
            values.pop(t.column, None)
            continue
        if t.column in dropped:
            continue
        col = values[t.column]
        if isinstance(t, GroupLevels):
            declared = levels[t.column]
            new = []
            for r, v in zip(row_ids, col):
                v = t.mapping.get(v, v)
                if declared is not None and v not in declared and t.catch_all is not None:
                    v = t.catch_all
                new.append(v)
            values[t.column] = new
        elif isinstance(t, (BinQuantiles, BinThreshold, OneHot)):
            nums = _to_float(col, row_ids, t.column)
            if isinstance(t, OneHot):
                uniq = sorted(set(nums))
                values[t.column] = [repr(v) for v in nums]
                levels[t.column] = tuple(repr(v) for v in uniq)
            else:
                edges = quantile_edges(nums, t.k) if isinstance(t, BinQuantiles) else t.edges
                b = bin_values(nums, edges)
                nbins = len(edges) + 1
                values[t.column] = [f"bin{i}" for i in b]
                levels[t.column] = tuple(f"bin{i}" for i in range(nbins))
            types[t.column] = CATEGORICAL

    label_col = schema.label
    label_raw = values.pop(label_col.name)
    if types[label_col.name] == CATEGORICAL:
        lv = levels[label_col.name] or tuple(sorted(set(label_raw)))
        index = {v: i for i, v in enumerate(lv)}
        bad = [(r, v) for r, v in zip(row_ids, label_raw) if v not in index]
        if bad:
            raise SchemaError(f"row {bad[0][0]}, column {label_col.name!r}: unknown label level {bad[0][1]!r}")
        labels = np.array([index[v] for v in label_raw], dtype=np.int64)
    else:
        nums = _to_float(label_raw, row_ids, label_col.name)
        lv = tuple(str(v) for v in sorted(set(nums)))
        labels = np.asarray(nums).astype(np.int64)

    blocks, names, groups, numeric, categorical = [], [], {}, {}, {}
    width = 0
    for c in schema.columns:
        if c.name in dropped or c.name == label_col.name:
            continue
        col = values[c.name]
        if types[c.name] == CATEGORICAL:
            lv_c = levels[c.name] or tuple(sorted(set(col)))
            index = {v: i for i, v in enumerate(lv_c)}
            enc = np.zeros((len(col), len(lv_c)))
            for n, (r, v) in enumerate(zip(row_ids, col)):
                if v not in index:
                    raise SchemaError(f"row {r}, column {c.name!r}: unknown categorical level {v!r}")
                enc[n, index[v]] = 1.0
            groups[c.name] = FeatureGroup(c.name, width, lv_c)
            categorical[c.name] = np.array(col, dtype=object)
            names.extend(f"{c.name}={v}" for v in lv_c)
            blocks.append(enc)
            width += len(lv_c)
        else:
            nums = np.asarray(_to_float(col, row_ids, c.name))
            lo, hi = float(nums.min()), float(nums.max())
            scaled = (nums - lo) / (hi - lo) if hi > lo else np.zeros_like(nums)
            numeric[c.name] = (width, lo, hi)
            names.append(c.name)
            blocks.append(scaled.reshape(-1, 1))
            width += 1
    if not blocks:
        raise SchemaError("schema leaves no feature columns")
    X = np.hstack(blocks)
    meta = DatasetMeta(names, groups, numeric, tuple(lv), categorical, np.array(row_ids))
    return SampleSet(X, labels, str(path)), meta


def _to_float(col, row_ids, name):
    out = []
    for r, v in zip(row_ids, col):
        try:
            out.append(float(v))
        except ValueError:
            raise SchemaError(f"row {r}, column {name!r}: {v!r} is not numeric") from None
    return out


@dataclass
class Split:
    indices: tuple
    parts: tuple

    @property
    def train(self):
        return self.parts[0]

    @property
    def validation(self):
        return self.parts[1]

    @property
    def test(self):
        return self.parts[2]

    def __iter__(self):
        return iter(self.parts)


def _allocate(n, fractions):
    raw = [n * f for f in fractions]
    counts = [int(math.floor(r + 1e-9)) for r in raw]
    rem = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:rem]:
        counts[i] += 1
    return counts


def split(data, fractions=(0.8, 0.0, 0.2), seed=0):
    """Stratified, deterministic train/validation/test split.

    Empty parts come back as ``None``. Indices within each part keep the
    input order.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("split fractions must be three nonnegative numbers summing to 1", "split.fractions")
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    labels = np.asarray(data.labels)
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(idx.size)]
        counts = _allocate(idx.size, fractions)
        pos = 0
        for p, c in enumerate(counts):
            parts[p].extend(idx[pos : pos + c].tolist())
            pos += c
            if c == 0 and fractions[p] > 0:
                warnings.warn(f"split part {p} received no samples of label {lab}", stacklevel=2)
    indices = tuple(np.array(sorted(p), dtype=np.int64) for p in parts)
    sets = tuple(data.subset(i) if i.size else None for i in indices)
    return Split(indices, sets)


# Synthetic data

FAIRNESS_COLUMNS = ("x1", "x2", "x3", "group", "gender", "label")


def fairness_schema():
    return DatasetSchema(
        [
            ColumnSpec("x1"),
            ColumnSpec("x2"),
            ColumnSpec("x3"),
            ColumnSpec("group", CATEGORICAL, "feature", ("A", "B", "C", "D")),
            ColumnSpec("gender", CATEGORICAL, "protected", ("Female", "Male")),
            ColumnSpec("label", CATEGORICAL, "label", ("0", "1")),
        ]
    )


def make_biased_population(
    n, seed=0, gender_effect=6.0, proxy=3.0, hard_group="D", hard_group_effect=0.0, noise=0.0
):
    """Rows of a synthetic population whose label depends on gender.

    The label logit is a linear score of the numeric features plus
    ``gender_effect`` for one gender, with an extra ``hard_group_effect``
    inside ``hard_group``. ``proxy`` shifts feature x3 by +-proxy according
    to gender, so gender can be partly read off x3. Returns string rows
    matching ``FAIRNESS_COLUMNS``.
    """
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    group = rng.choice(np.array(["A", "B", "C", "D"]), size=n, p=[0.4, 0.3, 0.2, 0.1])
    male = rng.random(n) < 0.5
    effect = gender_effect + hard_group_effect * (group == hard_group)
    logit = 2.0 * x[:, 0] - 1.5 * x[:, 1] + 0.5 * x[:, 2] + effect * (male - 0.5)
    logit = logit + noise * rng.normal(size=n)
    x[:, 2] += proxy * (2.0 * male - 1.0)
    y = (logit > 0).astype(int)
    rows = []
    for i in range(n):
        rows.append(
            [repr(round(float(v), 6)) for v in x[i]]
            + [str(group[i]), "Male" if male[i] else "Female", str(y[i])]
        )
    return rows


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def make_moons(n, noise=0.1, seed=0):
    """Two interleaving half circles, rescaled into the unit box [0.05, 0.95]^2."""
    rng = np.random.default_rng(seed)
    n1 = n // 2
    n0 = n - n1
    t0 = np.pi * rng.random(n0)
    t1 = np.pi * rng.random(n1)
    a = np.column_stack([np.cos(t0), np.sin(t0)])
    b = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    X = np.vstack([a, b]) + noise * rng.normal(size=(n, 2))
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    # fixed affine map so train/test draws share coordinates
    lo = np.array([-1.5, -1.0])
    hi = np.array([2.5, 1.5])
    X = 0.05 + 0.9 * (X - lo) / (hi - lo)
    X = np.clip(X, 0.0, 1.0)
    perm = rng.permutation(n)
    return SampleSet(X[perm], y[perm], "moons")
