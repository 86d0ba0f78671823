"""Flow-record ingestion, encoding and splitting.

Raw ToN-IoT network records (or any CSV with the same conventions) are read
into a :class:`RawFlowTable`, the five flow identifiers are removed, and the
remaining fields are integer-encoded (categoricals) and min-max scaled with
statistics frozen from the training split. The result is a
:class:`FeatureMatrix` with every value in ``[0, 1]``.

The public ToN-IoT network CSV carries 43 fields besides ``label`` and
``type``; after the identifiers go, 38 remain. Models consume exactly
:data:`INPUT_WIDTH` columns, so the fitted schema right-pads with constant
zero columns when a table is narrower (see ``docs/dataset.md``).
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    EmptyClass,
    FormatError,
    HeaderMismatch,
    IdentifierMissing,
    InvalidParam,
    LabelError,
    MissingFile,
    NonFiniteInput,
    RowArity,
    SchemaColumnMissing,
    WrongLength,
)
from .kvfile import read_kv, write_kv

logger = logging.getLogger(__name__)

INPUT_WIDTH = 39
GRID_SIDE = 8
IDENTIFIER_COLUMNS = ("ts", "src_ip", "dst_ip", "src_port", "dst_port")
SCHEMA_FORMAT = "edgenids-schema"
SCHEMA_VERSION = 1

_LABEL_SYMBOLS = {
    "0": 0, "normal": 0, "benign": 0, "legitimate": 0,
    "1": 1, "attack": 1, "malicious": 1,
}


@dataclass
class RawFlowTable:
    """Header plus string cells exactly as read from the CSV.

    Cells stay as text until :func:`fit_encode_normalize` decides the column
    kind; this keeps ingestion cheap and lossless.
    """

    column_names: list[str]
    rows: list[list[str]]
    label_column: str = "label"
    attack_type_column: str = "type"

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise HeaderMismatch(f"column {name!r} not in table") from None

    def column(self, name: str) -> list[str]:
        i = self.column_index(name)
        return [r[i] for r in self.rows]

    def labels(self) -> np.ndarray:
        return encode_labels(self.column(self.label_column))

    def class_counts(self) -> dict[str, int]:
        y = self.labels()
        return {"benign": int((y == 0).sum()), "malicious": int((y == 1).sum())}

    @property
    def feature_columns(self) -> list[str]:
        skip = {self.label_column, self.attack_type_column}
        return [c for c in self.column_names if c not in skip]


@dataclass(frozen=True)
class ColumnEncoding:
    name: str
    kind: str  # "numeric" | "categorical" | "pad"
    lo: float = 0.0
    hi: float = 0.0
    categories: tuple[str, ...] = ()

    @property
    def reserved_index(self) -> int:
        return len(self.categories)


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[ColumnEncoding, ...]
    label_column: str = "label"

    @property
    def feature_columns(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def width(self) -> int:
        return len(self.columns)


@dataclass(frozen=True)
class FeatureMatrix:
    data: np.ndarray
    labels: np.ndarray
    schema: FeatureSchema | None = None
    row_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if data.ndim != 2 or labels.shape != (data.shape[0],):
            raise WrongLength(f"data {data.shape} / labels {labels.shape} disagree")
        row_ids = self.row_ids
        if row_ids is None:
            row_ids = np.arange(data.shape[0], dtype=np.int64)
        row_ids = np.ascontiguousarray(row_ids, dtype=np.int64)
        for arr in (data, labels, row_ids):
            arr.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "row_ids", row_ids)

    def __len__(self) -> int:
        return self.data.shape[0]

    def take(self, idx: np.ndarray) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureMatrix(self.data[idx], self.labels[idx], self.schema, self.row_ids[idx])

    def class_counts(self) -> tuple[int, int]:
        return int((self.labels == 0).sum()), int((self.labels == 1).sum())


def encode_labels(values: Sequence[str]) -> np.ndarray:
    out = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        try:
            out[i] = _LABEL_SYMBOLS[str(v).strip().lower()]
        except KeyError:
            raise LabelError(f"row {i}: label {v!r} is not one of {sorted(_LABEL_SYMBOLS)}") from None
    return out


def load_flow_csv(
    path: str | Path,
    schema_hint: FeatureSchema | None = None,
    label_column: str = "label",
    attack_type_column: str = "type",
) -> RawFlowTable:
    """Read a comma-separated flow file with a header row.

    Raises MissingFile, HeaderMismatch (label or hinted feature column
    absent) and RowArity (with the 0-based data row index).
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise HeaderMismatch(f"{path}: no header row") from None
        required = [label_column]
        if schema_hint is not None:
            required += [c.name for c in schema_hint.columns if c.kind != "pad"]
        missing = [c for c in required if c not in header]
        if missing:
            raise HeaderMismatch(f"{path}: missing columns {missing}")
        width = len(header)
        rows = []
        for i, row in enumerate(reader):
            if len(row) != width:
                raise RowArity(i, width, len(row))
            rows.append(row)
    table = RawFlowTable(header, rows, label_column, attack_type_column)
    counts = table.class_counts()
    logger.info("loaded %s: %d rows (%d benign, %d malicious)",
                path, len(rows), counts["benign"], counts["malicious"])
    return table


def drop_identifiers(table: RawFlowTable) -> RawFlowTable:
    for name in IDENTIFIER_COLUMNS:
        if name not in table.column_names:
            raise IdentifierMissing(name)
    keep = [i for i, c in enumerate(table.column_names) if c not in IDENTIFIER_COLUMNS]
    return RawFlowTable(
        [table.column_names[i] for i in keep],
        [[row[i] for i in keep] for row in table.rows],
        table.label_column,
        table.attack_type_column,
    )


def _parse_numeric(values: list[str]) -> np.ndarray | None:
    try:
        return np.array([float(v) for v in values], dtype=np.float64)
    except ValueError:
        return None


def _minmax(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.zeros_like(x)
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def _encode_column(enc: ColumnEncoding, values: list[str] | None, n: int) -> np.ndarray:
    if enc.kind == "pad":
        return np.zeros(n)
    assert values is not None
    if enc.kind == "numeric":
        x = _parse_numeric(values)
        if x is None:
            raise NonFiniteInput(f"column {enc.name!r}: non-numeric cell in numeric column")
        if not np.isfinite(x).all():
            raise NonFiniteInput(f"column {enc.name!r}: NaN or infinite value")
    else:
        lookup = {c: i for i, c in enumerate(enc.categories)}
        x = np.array([lookup.get(v, enc.reserved_index) for v in values], dtype=np.float64)
    return _minmax(x, enc.lo, enc.hi)


def fit_encode_normalize(
    train_table: RawFlowTable, input_width: int = INPUT_WIDTH
) -> tuple[FeatureSchema, FeatureMatrix]:
    """Fit per-column encodings on a training table and apply them.

    Column kind: numeric when every cell parses as a float, else
    categorical (sorted category list, index = position). Constant columns
    scale to 0.
    """
    if any(c in train_table.column_names for c in IDENTIFIER_COLUMNS):
        raise InvalidParam("drop_identifiers must run before fitting")
    encodings = []
    for name in train_table.feature_columns:
        values = train_table.column(name)
        x = _parse_numeric(values)
        if x is not None:
            if not np.isfinite(x).all():
                raise NonFiniteInput(f"column {name!r}: NaN or infinite value")
            lo, hi = (float(x.min()), float(x.max())) if len(x) else (0.0, 0.0)
            encodings.append(ColumnEncoding(name, "numeric", lo, hi))
        else:
            cats = tuple(sorted(set(values)))
            encodings.append(ColumnEncoding(name, "categorical", 0.0, float(len(cats) - 1), cats))
    for k in range(max(0, input_width - len(encodings))):
        encodings.append(ColumnEncoding(f"_pad{k}", "pad"))
    schema = FeatureSchema(tuple(encodings), train_table.label_column)
    return schema, apply_schema(train_table, schema)


def apply_schema(table: RawFlowTable, schema: FeatureSchema) -> FeatureMatrix:
    n = len(table.rows)
    cols = []
    for enc in schema.columns:
        if enc.kind == "pad":
            cols.append(np.zeros(n))
            continue
        if enc.name not in table.column_names:
            raise SchemaColumnMissing(enc.name)
        cols.append(_encode_column(enc, table.column(enc.name), n))
    data = np.stack(cols, axis=1) if cols else np.zeros((n, 0))
    return FeatureMatrix(data, table.labels(), schema)


def stratified_split(
    matrix: FeatureMatrix,
    fractions: tuple[float, ...] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[FeatureMatrix, ...]:
    """Split so each class is apportioned by largest remainder.

    Every class contributes ``floor(f * n_class)`` rows to each split, and
    leftover rows go to the splits with the largest fractional parts, so
    per-class counts are within one row of the exact proportion.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if (fr <= 0).any() or not np.isclose(fr.sum(), 1.0):
        raise InvalidParam(f"fractions must be positive and sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[] for _ in fr]
    for cls in (0, 1):
        idx = np.flatnonzero(matrix.labels == cls)
        if len(idx) < len(fr):
            raise EmptyClass(f"class {cls} has {len(idx)} rows, need at least {len(fr)}")
        idx = rng.permutation(idx)
        exact = fr * len(idx)
        counts = np.floor(exact).astype(int)
        short = len(idx) - counts.sum()
        # stable ordering: ties go to the earlier split
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:short]] += 1
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for k in range(len(fr)):
            parts[k].append(idx[bounds[k]:bounds[k + 1]])
    return tuple(matrix.take(np.sort(np.concatenate(p))) for p in parts)


def stratified_sample(table: RawFlowTable, n: int, seed: int = 0) -> RawFlowTable:
    """Seeded class-proportional row subsample (desk-scale datasets)."""
    if n >= len(table.rows):
        return table
    y = table.labels()
    rng = np.random.default_rng(seed)
    picked = []
    total = len(y)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        take = int(round(n * len(idx) / total))
        picked.append(rng.choice(idx, size=min(take, len(idx)), replace=False))
    keep = np.sort(np.concatenate(picked))
    return RawFlowTable(table.column_names, [table.rows[i] for i in keep],
                        table.label_column, table.attack_type_column)


def split_table(
    table: RawFlowTable,
    fractions: tuple[float, ...] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[FeatureSchema, tuple[FeatureMatrix, ...]]:
    """Stratified split of a raw table, with encodings fitted on the first part only.

    Identifier columns are dropped when present. Row ids of the returned
    matrices index into ``table.rows``.
    """
    if any(c in table.column_names for c in IDENTIFIER_COLUMNS):
        table = drop_identifiers(table)
    y = table.labels()
    index = FeatureMatrix(np.zeros((len(y), 0)), y)
    parts = stratified_split(index, fractions, seed)

    def sub(p: FeatureMatrix) -> RawFlowTable:
        return RawFlowTable(table.column_names, [table.rows[i] for i in p.row_ids],
                            table.label_column, table.attack_type_column)

    schema, first = fit_encode_normalize(sub(parts[0]))
    out = [first] + [apply_schema(sub(p), schema) for p in parts[1:]]
    out = [FeatureMatrix(m.data, m.labels, schema, p.row_ids) for m, p in zip(out, parts)]
    return schema, tuple(out)


# The generating direction is a fixed constant so the oracle hyperplane is
# known independently of any seed: w_i proportional to (-1)^i (1 + i mod 3).
_SYNTH_DIRECTION = np.array([(-1) ** i * (1 + i % 3) for i in range(INPUT_WIDTH)], dtype=np.float64)
SYNTH_DIRECTION = _SYNTH_DIRECTION / np.linalg.norm(_SYNTH_DIRECTION)
SYNTH_NOISE = 0.1
SYNTH_HALF_GAP = 0.25


def synth_flows(n: int, class_ratio: float = 0.5, seed: int = 0) -> FeatureMatrix:
    """Synthetic flow features from two overlapping Gaussian classes.

    Class ``y`` has mean ``0.5 + s_y * 0.25 * w`` (``s_0 = -1``, ``s_1 = +1``,
    ``w`` = :data:`SYNTH_DIRECTION`, unit norm) and isotropic noise with
    sigma 0.1, clipped to ``[0, 1]``. The projection on ``w`` is therefore
    N(+-0.25, 0.1^2), so the rule ``w . (x - 0.5) > 0`` is correct with
    probability Phi(2.5) ~ 0.994 per class. ``class_ratio`` is the fraction
    of malicious rows.
    """
    if n < 2:
        raise InvalidParam("n must be >= 2")
    if not 0.0 < class_ratio < 1.0:
        raise InvalidParam("class_ratio must lie in (0, 1)")
    n_mal = int(round(n * class_ratio))
    n_mal = min(max(n_mal, 1), n - 1)
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.permutation(n)[:n_mal]] = 1
    sign = np.where(labels == 1, 1.0, -1.0)[:, None]
    data = 0.5 + sign * SYNTH_HALF_GAP * SYNTH_DIRECTION + SYNTH_NOISE * rng.standard_normal((n, INPUT_WIDTH))
    return FeatureMatrix(np.clip(data, 0.0, 1.0), labels)


def synth_oracle_predict(data: np.ndarray) -> np.ndarray:
    """Label rows with the generating hyperplane of :func:`synth_flows`."""
    return ((np.asarray(data) - 0.5) @ SYNTH_DIRECTION > 0).astype(np.int64)


def reshape_grid(vector) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    if v.shape != (INPUT_WIDTH,):
        raise WrongLength(f"expected {INPUT_WIDTH} values, got shape {v.shape}")
    grid = np.zeros(GRID_SIDE * GRID_SIDE)
    grid[:INPUT_WIDTH] = v
    return grid.reshape(GRID_SIDE, GRID_SIDE)


def reshape_grids(batch: np.ndarray) -> np.ndarray:
    """Batch form of :func:`reshape_grid`; returns ``(n, 8, 8, 1)``."""
    x = np.asarray(batch)
    if x.ndim != 2 or x.shape[1] != INPUT_WIDTH:
        raise WrongLength(f"expected (n, {INPUT_WIDTH}) batch, got {x.shape}")
    out = np.zeros((x.shape[0], GRID_SIDE * GRID_SIDE), dtype=x.dtype)
    out[:, :INPUT_WIDTH] = x
    return out.reshape(-1, GRID_SIDE, GRID_SIDE, 1)


# -- persistence -------------------------------------------------------------

def save_schema(schema: FeatureSchema, path: str | Path) -> None:
    items: list[tuple[str, object]] = [
        ("format", SCHEMA_FORMAT),
        ("version", SCHEMA_VERSION),
        ("label_column", schema.label_column),
        ("columns", schema.width),
    ]
    for i, c in enumerate(schema.columns):
        items.append((f"column.{i}.name", c.name))
        items.append((f"column.{i}.kind", c.kind))
        if c.kind == "numeric":
            items.append((f"column.{i}.min", repr(c.lo)))
            items.append((f"column.{i}.max", repr(c.hi)))
        elif c.kind == "categorical":
            items.append((f"column.{i}.categories", json.dumps(list(c.categories))))
    write_kv(path, items)


def load_schema(path: str | Path) -> FeatureSchema:
    kv = read_kv(path)
    if kv.get("format") != SCHEMA_FORMAT:
        raise FormatError(f"{path}: not a schema file")
    if int(kv.get("version", -1)) != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported schema version {kv.get('version')}")
    cols = []
    try:
        for i in range(int(kv["columns"])):
            name, kind = kv[f"column.{i}.name"], kv[f"column.{i}.kind"]
            if kind == "numeric":
                cols.append(ColumnEncoding(name, kind, float(kv[f"column.{i}.min"]), float(kv[f"column.{i}.max"])))
            elif kind == "categorical":
                cats = tuple(json.loads(kv[f"column.{i}.categories"]))
                cols.append(ColumnEncoding(name, kind, 0.0, float(len(cats) - 1), cats))
            elif kind == "pad":
                cols.append(ColumnEncoding(name, kind))
            else:
                raise FormatError(f"{path}: unknown column kind {kind!r}")
    except KeyError as exc:
        raise FormatError(f"{path}: missing key {exc}") from None
    return FeatureSchema(tuple(cols), kv.get("label_column", "label"))


def save_matrix(matrix: FeatureMatrix, path: str | Path) -> None:
    np.savez(path, data=matrix.data, labels=matrix.labels, row_ids=matrix.row_ids)


def load_matrix(path: str | Path, schema: FeatureSchema | None = None) -> FeatureMatrix:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with np.load(path) as z:
        return FeatureMatrix(z["data"], z["labels"], schema, z["row_ids"])
