"""Dataset representation, CSV ingestion and model-matrix encoding."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Base class for ingestion and validation failures."""


class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


class EmptyDataError(DataError):
    pass


@dataclass(frozen=True)
class ColumnKind:
    """Continuous when ``levels`` is None, otherwise categorical with the
    given ordered, distinct level labels (the first is the reference)."""

    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.levels is not None:
            levels = tuple(str(v) for v in self.levels)
            if len(levels) < 2:
                raise SchemaError("a categorical column needs at least 2 levels")
            if len(set(levels)) != len(levels):
                raise SchemaError(f"duplicate categorical levels: {levels}")
            object.__setattr__(self, "levels", levels)

    @classmethod
    def continuous(cls) -> "ColumnKind":
        return cls(None)

    @classmethod
    def categorical(cls, levels: Sequence) -> "ColumnKind":
        return cls(tuple(levels))

    @property
    def is_categorical(self) -> bool:
        return self.levels is not None

    @property
    def n_levels(self) -> int:
        return 0 if self.levels is None else len(self.levels)

    def to_json(self):
        if self.levels is None:
            return "continuous"
        return {"categorical": list(self.levels)}


BINARY = ColumnKind.categorical(("0", "1"))
CONTINUOUS = ColumnKind.continuous()


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates plus right-censored outcome.

    Categorical covariates are stored in ``x`` as level indices (0-based,
    floats holding integers).
    """

    x: np.ndarray
    kinds: tuple[ColumnKind, ...]
    time: np.ndarray
    event: np.ndarray
    names: tuple[str, ...]
    n_dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        if x.ndim != 2:
            raise DataError("x must be a 2-d array")
        time = np.asarray(self.time, dtype=float).ravel()
        event = np.asarray(self.event).ravel().astype(np.int64)
        n, p = x.shape
        kinds = tuple(self.kinds)
        names = tuple(str(s) for s in self.names)
        if len(kinds) != p or len(names) != p:
            raise DataError(f"kinds/names must have length p={p}")
        if time.shape[0] != n or event.shape[0] != n:
            raise DataError(f"time/event must have length n={n}")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(time)):
            raise DataError("missing or non-finite values after validation")
        if np.any(time <= 0):
            raise DataError("observed times must be strictly positive")
        if not np.all((event == 0) | (event == 1)):
            raise DataError("event indicators must be 0 or 1")
        for j, kind in enumerate(kinds):
            if kind.is_categorical:
                col = x[:, j]
                if np.any(col != np.round(col)) or np.any(col < 0) or np.any(col >= kind.n_levels):
                    raise DataError(f"column {names[j]!r} holds invalid level indices")
        for arr in (x, time, event):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def to_json(self) -> str:
        """Deterministic JSON rendering, meant for debugging and diffing."""
        doc = {
            "names": list(self.names),
            "kinds": [k.to_json() for k in self.kinds],
            "x": self.x.tolist(),
            "time": self.time.tolist(),
            "event": self.event.tolist(),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True, eq=False)
class ModelMatrix:
    values: np.ndarray
    column_map: tuple[int, ...]
    column_names: tuple[str, ...] = ()

    @property
    def q(self) -> int:
        return self.values.shape[1]

    def groups(self, n_features: int | None = None) -> list[list[int]]:
        """Model-column indices belonging to each source feature."""
        p = n_features if n_features is not None else (max(self.column_map) + 1 if self.column_map else 0)
        out: list[list[int]] = [[] for _ in range(p)]
        for col, src in enumerate(self.column_map):
            out[src].append(col)
        return out


def encode_columns(x: np.ndarray, kinds: Sequence[ColumnKind]) -> tuple[np.ndarray, list[int]]:
    """Reference-code categorical columns; returns values and source map."""
    n = x.shape[0]
    blocks = []
    column_map: list[int] = []
    for j, kind in enumerate(kinds):
        col = x[:, j]
        if kind.is_categorical:
            levels = np.arange(1, kind.n_levels)
            blocks.append((col[:, None] == levels[None, :]).astype(float))
            column_map.extend([j] * (kind.n_levels - 1))
        else:
            blocks.append(col[:, None])
            column_map.append(j)
    values = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return np.ascontiguousarray(values, dtype=float), column_map


def to_model_matrix(d: Dataset) -> ModelMatrix:
    values, column_map = encode_columns(d.x, d.kinds)
    names = []
    for j, kind in enumerate(d.kinds):
        if kind.is_categorical:
            if kind.n_levels == 2:
                names.append(d.names[j])
            else:
                names.extend(f"{d.names[j]}[{lvl}]" for lvl in kind.levels[1:])
        else:
            names.append(d.names[j])
    return ModelMatrix(values, tuple(column_map), tuple(names))


@dataclass(frozen=True)
class Schema:
    """Which CSV columns to read and how.

    ``columns`` maps a header name to ``"continuous"``, ``"categorical"``
    (levels inferred, sorted) or an explicit list of level labels.
    """

    time: str
    event: str
    columns: Mapping[str, object]

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Schema":
        try:
            return cls(time=doc["time"], event=doc["event"], columns=dict(doc["columns"]))
        except KeyError as exc:
            raise SchemaError(f"schema is missing the {exc.args[0]!r} entry") from None


def _is_missing(cell: str) -> bool:
    return cell.strip() in ("", "NA", "NaN", "nan", "null")


def _parse_float(cell: str, row: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"row {row}, column {column!r}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}, column {column!r}: non-finite value {cell!r}")
    return value


def _level_label(cell: str) -> str:
    # "1.0" and "1" denote the same level
    s = cell.strip()
    try:
        f = float(s)
    except ValueError:
        return s
    return str(int(f)) if f.is_integer() else repr(f)


def load_csv_dataset(path: str | Path, schema: Schema | Mapping) -> Dataset:
    """Read a header-row CSV into a validated :class:`Dataset`.

    Rows with a missing value in any used column are dropped; the count is
    logged and stored on ``Dataset.n_dropped``.
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_dict(schema)
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataError(f"{path} is empty") from None
        rows = list(reader)

    used = [schema.time, schema.event, *schema.columns]
    missing = [c for c in used if c not in header]
    if missing:
        raise SchemaError(f"columns not found in header: {missing}")
    pos = {name: header.index(name) for name in used}

    kept = []
    dropped = 0
    for r, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"row {r}: expected {len(header)} fields, found {len(row)}")
        if any(_is_missing(row[pos[c]]) for c in used):
            dropped += 1
            continue
        kept.append((r, row))
    if dropped:
        logger.info("dropped %d rows with missing values in used columns", dropped)
    if not kept:
        raise EmptyDataError(f"{path}: no usable rows")

    names = list(schema.columns)
    kinds: list[ColumnKind] = []
    for name in names:
        spec = schema.columns[name]
        if spec == "continuous":
            kinds.append(CONTINUOUS)
        elif spec == "categorical":
            labels = sorted({_level_label(row[pos[name]]) for _, row in kept})
            if len(labels) < 2:
                raise SchemaError(f"categorical column {name!r} has fewer than 2 observed levels")
            kinds.append(ColumnKind.categorical(labels))
        elif isinstance(spec, (list, tuple)):
            kinds.append(ColumnKind.categorical([_level_label(str(s)) for s in spec]))
        else:
            raise SchemaError(f"unknown column kind {spec!r} for {name!r}")

    n, p = len(kept), len(names)
    x = np.empty((n, p))
    time = np.empty(n)
    event = np.empty(n, dtype=np.int64)
    for i, (r, row) in enumerate(kept):
        time[i] = _parse_float(row[pos[schema.time]], r, schema.time)
        ev = _parse_float(row[pos[schema.event]], r, schema.event)
        if ev not in (0.0, 1.0):
            raise ParseError(f"row {r}, column {schema.event!r}: event must be 0 or 1, got {ev}")
        event[i] = int(ev)
        for j, (name, kind) in enumerate(zip(names, kinds)):
            cell = row[pos[name]]
            if kind.is_categorical:
                label = _level_label(cell)
                try:
                    x[i, j] = kind.levels.index(label)
                except ValueError:
                    raise SchemaError(f"row {r}, column {name!r}: unknown level {label!r}") from None
            else:
                x[i, j] = _parse_float(cell, r, name)
    if np.any(time <= 0):
        bad = int(np.argmax(time <= 0))
        raise ParseError(f"row {kept[bad][0]}, column {schema.time!r}: times must be positive")
    return Dataset(x, tuple(kinds), time, event, tuple(names), n_dropped=dropped)
