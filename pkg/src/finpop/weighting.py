"""Classical weighting baselines: post-stratification, raking, and
regression-and-post-stratification with pluggable mean models.

Discretization cut points are always population quantiles (type-7 linear
interpolation): the population covariates are fully observed, so sample
quantiles would only add noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateCutsError, EmptyCellError, SchemaError
from .frames import CovariateSchema, PopulationFrame, SampleFrame

_RULE_PROBS = {
    "tertile": (1 / 3, 2 / 3),
    "quintile": (0.2, 0.4, 0.6, 0.8),
}


@dataclass(frozen=True)
class Discretizer:
    """Quantile binning rule for continuous columns."""

    rule: str = "tertile"  # tertile | quintile | custom
    cuts: dict | None = None  # column name -> strictly increasing cut points

    def cut_points(self, name: str, values: np.ndarray) -> np.ndarray:
        if self.rule == "custom":
            if not self.cuts or name not in self.cuts:
                raise SchemaError("custom discretizer lacks cuts for %r" % name)
            c = np.asarray(self.cuts[name], dtype=np.float64)
        else:
            try:
                probs = _RULE_PROBS[self.rule]
            except KeyError:
                raise SchemaError("unknown discretization rule %r" % self.rule) from None
            c = np.quantile(values, probs)  # numpy default = type-7 interpolation
        if (np.diff(c) <= 0).any():
            raise DegenerateCutsError(
                "degenerate quantile cuts for %r: %r (reduce bin count)" % (name, c.tolist()))
        return c


@dataclass(frozen=True)
class Stratification:
    """Cross-classification cells shared by a population and a sample."""

    J: int
    assign_pop: np.ndarray  # length N stratum index
    assign_samp: np.ndarray  # length n stratum index
    N_j: np.ndarray
    n_j: np.ndarray
    labels: tuple = ()  # one covariate-code tuple per stratum


@dataclass(frozen=True)
class Weights:
    """Per-sample-unit weights plus the population total they calibrate to."""

    w: np.ndarray
    kind: str  # post_stratification | raking
    N: int

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if (w < 0).any():
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "w", w)


def discretize(population: PopulationFrame, sample: SampleFrame,
               rule: Discretizer, columns=None):
    """Replace continuous columns by population-quantile bin indices.

    Returns new (population, sample) frames whose targeted X columns have
    become discrete columns (appended after the existing discrete block).
    Sample values outside the population range clamp into the end bins.
    """
    sch = population.schema
    columns = tuple(columns) if columns is not None else sch.continuous_names
    keep = tuple(c for c in sch.continuous_names if c not in columns)
    new_discrete = sch.discrete_names + columns
    cuts = {}
    nbins = {}
    for name in columns:
        j = sch.continuous_names.index(name)
        c = rule.cut_points(name, population.X[:, j])
        cuts[name] = c
        nbins[name] = len(c) + 1

    def binned(frame):
        cols = []
        for name in columns:
            j = frame.schema.continuous_names.index(name)
            cols.append(np.searchsorted(cuts[name], frame.X[:, j], side="left"))
        Z = np.column_stack([frame.Z] + cols) if cols else frame.Z
        kept = [frame.schema.continuous_names.index(c) for c in keep]
        X = frame.X[:, kept] if kept else np.zeros((Z.shape[0], 0))
        levels = tuple(frame.levels) + tuple(
            tuple("bin%d" % b for b in range(nbins[name])) for name in columns)
        return Z, X, levels

    pz, px, plv = binned(population)
    pop_schema = CovariateSchema(new_discrete, keep, id_name=sch.id_name)
    new_pop = PopulationFrame(schema=pop_schema, Z=pz, X=px, levels=plv, ids=population.ids)
    sz, sx, slv = binned(sample)
    samp_schema = CovariateSchema(new_discrete, keep,
                                  outcome_name=sample.schema.outcome_name,
                                  id_name=sample.schema.id_name)
    new_samp = SampleFrame(schema=samp_schema, Z=sz, X=sx, y=sample.y, link=sample.link,
                           levels=slv, ids=sample.ids, y_transform=sample.y_transform)
    return new_pop, new_samp


def _cells(population, sample, by):
    sch = population.schema
    idx = []
    for name in by:
        if name not in sch.discrete_names:
            raise SchemaError("stratification column %r is not discrete" % name)
        idx.append(sch.discrete_names.index(name))
    if idx:
        pop_keys = population.Z[:, idx]
        samp_keys = sample.Z[:, idx]
    else:  # single-cell stratification
        pop_keys = np.zeros((population.N, 1), dtype=np.int64)
        samp_keys = np.zeros((sample.n, 1), dtype=np.int64)
    cells, assign_pop = np.unique(pop_keys, axis=0, return_inverse=True)
    cell_index = {tuple(c): j for j, c in enumerate(cells)}
    assign_samp = np.empty(sample.n, dtype=np.int64)
    extra = {}
    for i, key in enumerate(map(tuple, samp_keys)):
        if key in cell_index:
            assign_samp[i] = cell_index[key]
        else:  # sample-only cell: gets N_j = 0 and weight 0
            assign_samp[i] = extra.setdefault(key, len(cell_index) + len(extra))
    J = len(cell_index) + len(extra)
    N_j = np.bincount(assign_pop, minlength=J)
    n_j = np.bincount(assign_samp, minlength=J)
    labels = tuple(map(tuple, cells)) + tuple(extra)
    return Stratification(J=J, assign_pop=assign_pop.astype(np.int64),
                          assign_samp=assign_samp, N_j=N_j, n_j=n_j, labels=labels)


def post_stratify(population: PopulationFrame, sample: SampleFrame, by=()):
    """Post-stratification weights w_i = N_j / n_j on the cross-classification of `by`."""
    strat = _cells(population, sample, by)
    empty = np.flatnonzero((strat.N_j > 0) & (strat.n_j == 0))
    if empty.size:
        raise EmptyCellError("post-stratum %r has %d population units but no sample units"
                             % (strat.labels[empty[0]], int(strat.N_j[empty[0]])))
    with np.errstate(divide="ignore", invalid="ignore"):
        cell_w = np.where(strat.n_j > 0, strat.N_j / np.maximum(strat.n_j, 1), 0.0)
    w = cell_w[strat.assign_samp]
    return strat, Weights(w=w, kind="post_stratification", N=population.N)


def rake(population: PopulationFrame, sample: SampleFrame, margins,
         tol: float = 1e-8, max_iter: int = 1000) -> Weights:
    """Iterative proportional fitting to the population margins of `margins`.

    Weights start at N/n and are cyclically rescaled within each margin level
    until every declared margin matches its population total within `tol`
    (absolute, per level).
    """
    sch = population.schema
    cols = []
    for name in margins:
        if name not in sch.discrete_names:
            raise SchemaError("raking margin %r is not discrete" % name)
        cols.append(sch.discrete_names.index(name))
    if not cols:
        raise SchemaError("raking requires at least one margin")
    N, n = population.N, sample.n
    pop_tot = []
    samp_lvl = []
    for j in cols:
        L = max(int(population.Z[:, j].max()), int(sample.Z[:, j].max())) + 1
        tot = np.bincount(population.Z[:, j], minlength=L).astype(np.float64)
        cnt = np.bincount(sample.Z[:, j], minlength=L)
        short = np.flatnonzero((tot > 0) & (cnt == 0))
        if short.size:
            raise EmptyCellError(
                "margin %r level %d has population mass but no sample units"
                % (sch.discrete_names[j], int(short[0])))
        pop_tot.append(tot)
        samp_lvl.append(sample.Z[:, j])
    w = np.full(n, N / n)
    disc = np.inf
    for _ in range(max_iter):
        for tot, lvl in zip(pop_tot, samp_lvl):
            cur = np.bincount(lvl, weights=w, minlength=len(tot))
            ratio = np.where(cur > 0, tot / np.maximum(cur, 1e-300), 1.0)
            w = w * ratio[lvl]
        disc = max(
            np.abs(np.bincount(lvl, weights=w, minlength=len(tot)) - tot).max()
            for tot, lvl in zip(pop_tot, samp_lvl))
        if disc <= tol:
            return Weights(w=w, kind="raking", N=N)
    raise ConvergenceError("raking failed to converge after %d cycles "
                           "(max margin discrepancy %.3g)" % (max_iter, disc),
                           discrepancy=disc)


def weighted_mean(sample: SampleFrame, weights: Weights) -> float:
    """(1/N) sum_i w_i y_i."""
    if len(weights.w) != sample.n:
        raise SchemaError("weight vector length %d != sample size %d"
                          % (len(weights.w), sample.n))
    return float(weights.w @ sample.y / weights.N)


class SaturatedCellMeans:
    """Saturated model on the discrete covariates, i.e. per-cell sample means.

    Numerically equivalent to a saturated least-squares regression with all
    interactions, and it makes the RP = PS identity exact.
    """

    def __init__(self, by=None):
        self.by = by

    def fit_predict(self, population, sample):
        by = self.by if self.by is not None else population.schema.discrete_names
        strat = _cells(population, sample, by)
        empty = np.flatnonzero((strat.N_j > 0) & (strat.n_j == 0))
        if empty.size:
            raise EmptyCellError("saturated model: cell %r has no sample units"
                                 % (strat.labels[empty[0]],))
        sums = np.bincount(strat.assign_samp, weights=sample.y, minlength=strat.J)
        means = np.where(strat.n_j > 0, sums / np.maximum(strat.n_j, 1), 0.0)
        return means[strat.assign_pop]


class ConstantMean:
    """Predicts the sample mean everywhere."""

    def fit_predict(self, population, sample):
        return np.full(population.N, sample.y.mean())


class LinearModel:
    """Ordinary least squares on [1, Z codes, X]."""

    def fit_predict(self, population, sample):
        def design(Z, X):
            return np.column_stack([np.ones(Z.shape[0]), Z.astype(np.float64), X])

        beta, *_ = np.linalg.lstsq(design(sample.Z, sample.X), sample.y, rcond=None)
        return design(population.Z, population.X) @ beta


def rp_estimate(population: PopulationFrame, sample: SampleFrame, model) -> float:
    """Regression-and-post-stratification: population mean of model predictions."""
    pred = model.fit_predict(population, sample)
    return float(np.mean(pred))
