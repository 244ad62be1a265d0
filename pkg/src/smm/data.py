"""Schemas, datasets, weighted datasets and CSV ingestion.

Cases are stored column-wise in a single float64 matrix. Discrete variables
hold their state index (an integer-valued float), continuous variables hold
the raw value. Datasets are treated as immutable; the backing arrays are
marked read-only on construction.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

_NAME_RE = re.compile(r"^[^\s,:()=#]+$")


class DataError(ValueError):
    """Raised for malformed schemas, CSV files or cases."""


@dataclass(frozen=True)
class Variable:
    name: str
    states: tuple[str, ...] | None = None

    @property
    def is_discrete(self) -> bool:
        return self.states is not None

    @property
    def n_states(self) -> int:
        return len(self.states) if self.states is not None else 0


@dataclass(frozen=True)
class Schema:
    """Ordered variables plus an optional (discrete) target."""

    variables: tuple[Variable, ...]
    target: str | None = None
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        names = [v.name for v in self.variables]
        if not names:
            raise DataError("schema has no variables")
        for v in self.variables:
            if not v.name or not _NAME_RE.match(v.name):
                raise DataError(f"invalid variable name {v.name!r}")
            if v.is_discrete:
                if len(v.states) < 2:
                    raise DataError(f"discrete variable {v.name!r} needs at least 2 states")
                if len(set(v.states)) != len(v.states):
                    raise DataError(f"duplicate state names in {v.name!r}")
                for s in v.states:
                    if not s or not _NAME_RE.match(s):
                        raise DataError(f"invalid state name {s!r} in {v.name!r}")
        if len(set(names)) != len(names):
            raise DataError("variable names must be unique")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})
        if self.target is not None:
            if self.target not in self._index:
                raise DataError(f"target {self.target!r} is not a schema variable")
            if not self.variables[self._index[self.target]].is_discrete:
                raise DataError(f"target {self.target!r} must be discrete")

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    @property
    def arity(self) -> int:
        return len(self.variables)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DataError(f"unknown variable {name!r}") from None

    @property
    def target_index(self) -> int | None:
        return None if self.target is None else self._index[self.target]

    def __getitem__(self, i: int) -> Variable:
        return self.variables[i]

    def to_text(self) -> str:
        lines = []
        for v in self.variables:
            if v.is_discrete:
                lines.append(f"{v.name} : discrete({','.join(v.states)})")
            else:
                lines.append(f"{v.name} : continuous")
        if self.target is not None:
            lines.append(f"target: {self.target}")
        return "\n".join(lines) + "\n"


def parse_schema_lines(lines: Iterable[str], source: str = "<schema>") -> Schema:
    """Parse the schema grammar.

    One variable per line, ``name : discrete(s1,s2,...)`` or
    ``name : continuous``, and optionally ``target: name``. Blank lines and
    lines starting with ``#`` are ignored.
    """
    variables = []
    target = None
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise DataError(f"{source}:{lineno}: expected 'name : kind'")
        name, kind = (part.strip() for part in line.split(":", 1))
        if name == "target":
            target = kind
            continue
        if target is not None:
            raise DataError(f"{source}:{lineno}: 'target' must be the final line")
        if kind == "continuous":
            variables.append(Variable(name))
            continue
        m = re.fullmatch(r"discrete\((.*)\)", kind)
        if m is None:
            raise DataError(f"{source}:{lineno}: unknown variable kind {kind!r}")
        states = tuple(s.strip() for s in m.group(1).split(","))
        variables.append(Variable(name, states))
    try:
        return Schema(tuple(variables), target)
    except DataError as exc:
        raise DataError(f"{source}: {exc}") from None


def load_schema(path: str | Path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return parse_schema_lines(fh, str(path))


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class Dataset:
    """A complete (no missing values) data set over a schema."""

    __slots__ = ("schema", "values")

    def __init__(self, schema: Schema, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != schema.arity:
            raise DataError(
                f"expected an (N, {schema.arity}) array, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DataError("values must be finite")
        for j, v in enumerate(schema.variables):
            if v.is_discrete:
                col = values[:, j]
                if np.any(col != np.floor(col)) or np.any(col < 0) or np.any(col >= v.n_states):
                    raise DataError(f"state index out of range for {v.name!r}")
        self.schema = schema
        self.values = _freeze(values)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dataset)
            and self.schema == other.schema
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return f"Dataset(N={len(self)}, variables={self.schema.names})"

    def codes(self, j: int) -> np.ndarray:
        return self.values[:, j].astype(np.intp)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.schema, self.values[np.asarray(idx)])


class WeightedDataset:
    """A dataset whose cases carry a real-valued weight in [0, 1]."""

    __slots__ = ("data", "weights")

    def __init__(self, data: Dataset, weights):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(data),):
            raise DataError(f"expected {len(data)} weights, got shape {weights.shape}")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0) or np.any(weights > 1):
            raise DataError("weights must lie in [0, 1]")
        self.data = data
        self.weights = _freeze(weights)

    @property
    def schema(self) -> Schema:
        return self.data.schema

    @property
    def values(self) -> np.ndarray:
        return self.data.values

    def __len__(self) -> int:
        return len(self.data)

    @property
    def fractional_count(self) -> float:
        return math.fsum(self.weights)


def uniform_weights(d: Dataset) -> WeightedDataset:
    return WeightedDataset(d, np.ones(len(d)))


def make_dataset(schema: Schema, rows: Sequence[Sequence]) -> Dataset:
    """Build a dataset from rows holding state names or indices for discrete
    variables and numbers for continuous ones."""
    out = np.empty((len(rows), schema.arity))
    for i, row in enumerate(rows):
        if len(row) != schema.arity:
            raise DataError(f"row {i}: expected {schema.arity} values, got {len(row)}")
        for j, (v, x) in enumerate(zip(schema.variables, row)):
            if v.is_discrete and isinstance(x, str):
                try:
                    x = v.states.index(x)
                except ValueError:
                    raise DataError(f"row {i}: unknown state {x!r} for {v.name!r}") from None
            out[i, j] = x
    return Dataset(schema, out)


def load_csv(csv_path: str | Path, schema: Schema | str | Path) -> Dataset:
    """Read a CSV file with a header row into a Dataset.

    Columns may appear in any order but must match the schema's variable
    names exactly. Errors name the (1-based, header = row 1) row and column.
    """
    if not isinstance(schema, Schema):
        schema = load_schema(schema)
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{csv_path}: empty file") from None
        for h in header:
            if h not in schema._index:
                raise DataError(f"{csv_path}: row 1: unknown column {h!r}")
        if len(set(header)) != len(header):
            raise DataError(f"{csv_path}: row 1: duplicate column")
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise DataError(f"{csv_path}: row 1: missing column(s) {missing}")
        cols = [schema.index(h) for h in header]
        lookup = [
            {s: k for k, s in enumerate(schema[j].states)} if schema[j].is_discrete else None
            for j in cols
        ]
        rows = []
        for rowno, rec in enumerate(reader, 2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(
                    f"{csv_path}: row {rowno}: expected {len(header)} fields, got {len(rec)}"
                )
            out = [0.0] * schema.arity
            for field_, j, table, col in zip(rec, cols, lookup, header):
                field_ = field_.strip()
                if field_ == "":
                    raise DataError(f"{csv_path}: row {rowno}, column {col!r}: missing value")
                if table is not None:
                    try:
                        out[j] = table[field_]
                    except KeyError:
                        raise DataError(
                            f"{csv_path}: row {rowno}, column {col!r}: unknown state {field_!r}"
                        ) from None
                else:
                    try:
                        x = float(field_)
                    except ValueError:
                        raise DataError(
                            f"{csv_path}: row {rowno}, column {col!r}: cannot parse {field_!r}"
                        ) from None
                    if not math.isfinite(x):
                        raise DataError(
                            f"{csv_path}: row {rowno}, column {col!r}: non-finite value"
                        )
                    out[j] = x
            rows.append(out)
    if not rows:
        raise DataError(f"{csv_path}: no data rows")
    return Dataset(schema, np.array(rows, dtype=np.float64))


def write_csv(d: Dataset, csv_path: str | Path) -> None:
    """Write a dataset as CSV with state names and round-trip float precision."""
    schema = d.schema
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.names)
        for row in d.values:
            w.writerow(
                [
                    v.states[int(x)] if v.is_discrete else repr(float(x))
                    for v, x in zip(schema.variables, row)
                ]
            )


def holdout_split(d: Dataset, fraction: float = 0.7, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Shuffle with numpy's PCG64 generator and cut at round-half-up(fraction*N).

    The permutation comes from ``np.random.default_rng(seed).permutation``,
    which is stable across platforms for a given numpy major version.
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(d)
    n_train = int(math.floor(fraction * n + 0.5))
    if n_train < 1 or n - n_train < 1:
        raise DataError(f"N={n} is too small for a {fraction} split")
    perm = np.random.default_rng(seed).permutation(n)
    return d.subset(np.sort(perm[:n_train])), d.subset(np.sort(perm[n_train:]))
