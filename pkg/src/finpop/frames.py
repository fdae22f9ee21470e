"""Typed in-memory population/sample data and CSV ingestion.

Discrete covariates are label-encoded at load time; the per-column level
dictionaries are kept on the frame so dumps decode back to the original
labels. Row order is the canonical unit index: every downstream per-unit
vector is positional. Frames are immutable after construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, LinkageError, ParseError, SchemaError


@dataclass(frozen=True)
class CovariateSchema:
    """Column roles for population/sample CSV files."""

    discrete_names: tuple[str, ...] = ()
    continuous_names: tuple[str, ...] = ()
    outcome_name: str | None = None
    id_name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "discrete_names", tuple(self.discrete_names))
        object.__setattr__(self, "continuous_names", tuple(self.continuous_names))
        names = list(self.discrete_names) + list(self.continuous_names)
        if self.outcome_name is not None:
            names.append(self.outcome_name)
        if self.id_name is not None:
            names.append(self.id_name)
        if len(set(names)) != len(names):
            raise SchemaError("schema column roles overlap: %r" % (names,))
        if not self.discrete_names and not self.continuous_names:
            raise SchemaError("schema declares no covariate columns")

    @property
    def p(self) -> int:
        return len(self.discrete_names)

    @property
    def r(self) -> int:
        return len(self.continuous_names)

    def covariates_only(self) -> "CovariateSchema":
        return CovariateSchema(self.discrete_names, self.continuous_names)


@dataclass(frozen=True)
class PopulationFrame:
    """All N population units: integer-coded discrete Z, real-valued X."""

    schema: CovariateSchema
    Z: np.ndarray  # (N, p) int64 category codes
    X: np.ndarray  # (N, r) float64
    levels: tuple[tuple[str, ...], ...] = ()  # per discrete column, code -> label
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        Z = np.ascontiguousarray(np.asarray(self.Z, dtype=np.int64))
        X = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        if Z.ndim != 2 or X.ndim != 2:
            raise SchemaError("Z and X must be 2-d arrays")
        if Z.shape[0] != X.shape[0]:
            raise SchemaError("Z and X row counts differ")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "X", X)
        if not self.levels:
            # Synthetic frames: levels inferred from the observed codes.
            lv = tuple(
                tuple(str(k) for k in range(int(Z[:, j].max()) + 1 if Z.shape[0] else 0))
                for j in range(Z.shape[1])
            )
            object.__setattr__(self, "levels", lv)
        if Z.shape[1] != self.schema.p or X.shape[1] != self.schema.r:
            raise SchemaError("frame shape disagrees with schema")
        if self.N < 1:
            raise SchemaError("population must contain at least one unit")
        if not np.isfinite(X).all():
            raise ParseError("population has non-finite continuous cells")
        for j, lv in enumerate(self.levels):
            if Z.shape[0] and (Z[:, j].min() < 0 or Z[:, j].max() >= len(lv)):
                raise SchemaError("discrete code out of range in column %r"
                                  % (self.schema.discrete_names[j],))
        Z.setflags(write=False)
        X.setflags(write=False)

    @property
    def N(self) -> int:
        return self.Z.shape[0]

    @property
    def category_levels(self) -> tuple[int, ...]:
        return tuple(len(lv) for lv in self.levels)


@dataclass(frozen=True)
class SampleFrame:
    """The n sampled units with observed outcomes y."""

    schema: CovariateSchema
    Z: np.ndarray
    X: np.ndarray
    y: np.ndarray
    link: np.ndarray | None = None  # indices into the population frame
    levels: tuple[tuple[str, ...], ...] = ()
    ids: tuple[str, ...] | None = None
    y_transform: str = "none"

    def __post_init__(self):
        Z = np.ascontiguousarray(np.asarray(self.Z, dtype=np.int64))
        X = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64))
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if not self.levels:
            lv = tuple(
                tuple(str(k) for k in range(int(Z[:, j].max()) + 1 if Z.shape[0] else 0))
                for j in range(Z.shape[1])
            )
            object.__setattr__(self, "levels", lv)
        if y.shape != (Z.shape[0],):
            raise SchemaError("outcome length disagrees with covariate rows")
        if not np.isfinite(y).all():
            raise ParseError("sample outcome has non-finite values")
        if not np.isfinite(X).all():
            raise ParseError("sample has non-finite continuous cells")
        if self.link is not None:
            link = np.ascontiguousarray(np.asarray(self.link, dtype=np.int64))
            if len(np.unique(link)) != len(link):
                raise LinkageError("link indices are not distinct")
            object.__setattr__(self, "link", link)
            link.setflags(write=False)
        for a in (Z, X, y):
            a.setflags(write=False)

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def linked(self) -> bool:
        return self.link is not None


@dataclass(frozen=True)
class InclusionVector:
    """Length-N binary sample-inclusion indicator, derived from a linked sample."""

    I: np.ndarray

    def __post_init__(self):
        I = np.ascontiguousarray(np.asarray(self.I, dtype=np.int64))
        if not np.isin(I, (0, 1)).all():
            raise SchemaError("inclusion indicator must be binary")
        object.__setattr__(self, "I", I)
        I.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.I.sum())


def _read_rows(path, required):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file: %s" % path) from None
        rows = list(reader)
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError("missing column(s) %r in %s" % (missing, path))
    col = {c: header.index(c) for c in required}
    for k, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError("row %d has %d cells, expected %d" % (k + 2, len(row), len(header)))
    return col, rows


def _parse_columns(schema, col, rows, path, level_maps=None):
    """Returns (Z, X, y, ids, levels). level_maps fixes the discrete encoding."""
    n = len(rows)
    Z = np.zeros((n, schema.p), dtype=np.int64)
    X = np.zeros((n, schema.r), dtype=np.float64)
    maps = [dict() for _ in schema.discrete_names] if level_maps is None \
        else [dict((s, k) for k, s in enumerate(lv)) for lv in level_maps]
    for j, name in enumerate(schema.discrete_names):
        c = col[name]
        m = maps[j]
        for i, row in enumerate(rows):
            cell = row[c]
            if cell == "":
                raise ParseError("missing cell in column %r, row %d of %s" % (name, i + 2, path))
            if cell not in m:
                if level_maps is not None:
                    raise SchemaError("level %r of column %r absent from population" % (cell, name))
                m[cell] = len(m)
            Z[i, j] = m[cell]
    for j, name in enumerate(schema.continuous_names):
        c = col[name]
        for i, row in enumerate(rows):
            cell = row[c]
            try:
                X[i, j] = float(cell)
            except ValueError:
                raise ParseError("non-numeric cell %r in column %r, row %d of %s"
                                 % (cell, name, i + 2, path)) from None
            if cell == "" or math.isnan(X[i, j]):
                raise ParseError("missing cell in column %r, row %d of %s" % (name, i + 2, path))
    y = None
    if schema.outcome_name is not None:
        c = col[schema.outcome_name]
        y = np.zeros(n)
        for i, row in enumerate(rows):
            try:
                y[i] = float(row[c])
            except ValueError:
                raise ParseError("non-numeric outcome %r in row %d of %s"
                                 % (row[c], i + 2, path)) from None
    ids = None
    if schema.id_name is not None:
        c = col[schema.id_name]
        ids = tuple(row[c] for row in rows)
    levels = tuple(tuple(sorted(m, key=m.get)) for m in maps)
    return Z, X, y, ids, levels


def load_population(path, schema: CovariateSchema) -> PopulationFrame:
    """Parse a population CSV against the declared schema."""
    required = list(schema.discrete_names) + list(schema.continuous_names)
    if schema.id_name is not None:
        required.append(schema.id_name)
    col, rows = _read_rows(path, required)
    if not rows:
        raise ParseError("no data rows in %s" % path)
    pop_schema = CovariateSchema(schema.discrete_names, schema.continuous_names,
                                 id_name=schema.id_name)
    Z, X, _, ids, levels = _parse_columns(pop_schema, col, rows, path)
    return PopulationFrame(schema=pop_schema, Z=Z, X=X, levels=levels, ids=ids)


def load_sample(path, schema: CovariateSchema, population: PopulationFrame) -> SampleFrame:
    """Parse a sample CSV; link to the population by id when both declare ids."""
    if schema.outcome_name is None:
        raise SchemaError("sample schema must declare an outcome column")
    required = list(schema.discrete_names) + list(schema.continuous_names) + [schema.outcome_name]
    link_by_id = schema.id_name is not None and population.ids is not None
    if schema.id_name is not None:
        required.append(schema.id_name)
    col, rows = _read_rows(path, required)
    if not rows:
        raise ParseError("no data rows in %s" % path)
    Z, X, y, ids, levels = _parse_columns(schema, col, rows, path,
                                          level_maps=population.levels)
    link = None
    if link_by_id:
        if len(set(ids)) != len(ids):
            raise LinkageError("duplicate ids in sample file %s" % path)
        pop_index = {u: i for i, u in enumerate(population.ids)}
        try:
            link = np.array([pop_index[u] for u in ids], dtype=np.int64)
        except KeyError as e:
            raise LinkageError("sample id %s absent from population" % e) from None
        if not (np.array_equal(Z, population.Z[link]) and np.array_equal(X, population.X[link])):
            raise LinkageError("linked sample covariates disagree with population rows")
    return SampleFrame(schema=schema, Z=Z, X=X, y=y, link=link, levels=levels, ids=ids)


def make_linked_sample(population: PopulationFrame, link, y,
                       outcome_name: str = "y") -> SampleFrame:
    """Build a linked sample directly from population rows (no CSV)."""
    link = np.asarray(link, dtype=np.int64)
    schema = CovariateSchema(population.schema.discrete_names,
                             population.schema.continuous_names,
                             outcome_name=outcome_name,
                             id_name=population.schema.id_name)
    ids = tuple(population.ids[i] for i in link) if population.ids is not None else None
    return SampleFrame(schema=schema, Z=population.Z[link], X=population.X[link],
                       y=np.asarray(y, dtype=np.float64), link=link,
                       levels=population.levels, ids=ids)


def inclusion_vector(population: PopulationFrame, sample: SampleFrame) -> InclusionVector:
    """I_i = 1 iff population unit i belongs to the (linked) sample."""
    if not sample.linked:
        raise LinkageError("inclusion vector requires a linked sample")
    if sample.link.max(initial=-1) >= population.N:
        raise LinkageError("link index out of population range")
    I = np.zeros(population.N, dtype=np.int64)
    I[sample.link] = 1
    return InclusionVector(I=I)


def transform_outcome(sample: SampleFrame, kind: str) -> SampleFrame:
    """Return a new sample with transformed y; 'log1p' or 'none'."""
    if kind == "none":
        return sample
    if kind != "log1p":
        raise DomainError("unknown outcome transform %r" % kind)
    if (sample.y <= -1).any():
        raise DomainError("log1p transform requires all y > -1")
    return replace(sample, y=np.log1p(sample.y), y_transform="log1p")


def dump_population(population: PopulationFrame, path) -> None:
    """Write a population frame back to CSV (inverse of load_population)."""
    sch = population.schema
    header = ([sch.id_name] if sch.id_name else []) \
        + list(sch.discrete_names) + list(sch.continuous_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(population.N):
            row = []
            if sch.id_name:
                row.append(population.ids[i])
            row += [population.levels[j][population.Z[i, j]] for j in range(sch.p)]
            row += [repr(float(population.X[i, j])) for j in range(sch.r)]
            w.writerow(row)


def dump_sample(sample: SampleFrame, path) -> None:
    sch = sample.schema
    header = ([sch.id_name] if sch.id_name else []) \
        + list(sch.discrete_names) + list(sch.continuous_names) + [sch.outcome_name]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(sample.n):
            row = []
            if sch.id_name:
                row.append(sample.ids[i])
            row += [sample.levels[j][sample.Z[i, j]] for j in range(sch.p)]
            row += [repr(float(sample.X[i, j])) for j in range(sch.r)]
            row.append(repr(float(sample.y[i])))
            w.writerow(row)
