"""Finite-population and subpopulation estimators built on posterior draws,
plus the orchestration of the classical baselines and two-step propensity
variants.

Point estimates are posterior medians; intervals are equal-tailed quantile
intervals (80% and 95%). Baseline methods (raw/PS/raking) return points only:
their dispersion is evaluated across simulation replicates, not model-based.
"""

from __future__ import annotations

import json
import operator
from dataclasses import dataclass, field, replace

import numpy as np

from . import weighting
from .errors import EstimationError, LinkageError, SchemaError
from .frames import PopulationFrame, SampleFrame, inclusion_vector
from .samplers import (FitResult, SamplerConfig, append_propensity, derive_seed,
                       fit_bart, fit_probit_bart, fit_sbart)

BAYES_METHODS = ("bart", "bart-p", "sbart", "sbart-p")
BASELINE_METHODS = ("raw", "ps", "raking")
ALL_METHODS = BASELINE_METHODS + BAYES_METHODS

_OPS = {
    "<=": operator.le, ">=": operator.ge, "<": operator.lt,
    ">": operator.gt, "==": operator.eq, "!=": operator.ne,
}


@dataclass(frozen=True)
class SubpopulationFilter:
    """Predicate (column, comparator, constant) selecting Omega within U."""

    column: str
    op: str
    value: float

    def __post_init__(self):
        if self.op not in _OPS:
            raise SchemaError("unknown comparator %r" % self.op)

    def mask(self, frame) -> np.ndarray:
        sch = frame.schema
        if self.column in sch.discrete_names:
            col = frame.Z[:, sch.discrete_names.index(self.column)]
        elif self.column in sch.continuous_names:
            col = frame.X[:, sch.continuous_names.index(self.column)]
        else:
            raise SchemaError("unknown filter column %r" % self.column)
        return _OPS[self.op](col, self.value)

    @classmethod
    def parse(cls, text: str) -> "SubpopulationFilter":
        for op in ("<=", ">=", "==", "!=", "<", ">"):
            if op in text:
                col, val = text.split(op, 1)
                return cls(column=col.strip(), op=op, value=float(val))
        raise SchemaError("cannot parse subpopulation filter %r" % text)


@dataclass(frozen=True)
class PosteriorDraws:
    """Per-iteration population-mean draws with the matching sigma draws."""

    Q: np.ndarray
    sigma: np.ndarray
    method: str
    estimand: str = "population_mean"

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=np.float64)
        s = np.asarray(self.sigma, dtype=np.float64)
        if Q.size == 0 or Q.shape != s.shape:
            raise EstimationError("draw sequences must be nonempty and equal length")
        if not (np.isfinite(Q).all() and np.isfinite(s).all()):
            raise EstimationError("non-finite draws")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "sigma", s)


@dataclass(frozen=True)
class EstimateSummary:
    method: str
    estimand: str
    point: float
    ci80: tuple | None
    ci95: tuple | None
    n_draws: int
    seed: int | None = None
    config_digest: str | None = None

    def to_dict(self):
        return {
            "method": self.method,
            "estimand": self.estimand,
            "point": self.point,
            "ci80": list(self.ci80) if self.ci80 else None,
            "ci95": list(self.ci95) if self.ci95 else None,
            "n_draws": self.n_draws,
            "seed": self.seed,
            "config_digest": self.config_digest,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def population_mean_draw(theta: np.ndarray, sample: SampleFrame, N: int) -> float:
    """(1/N)[sum_U theta_i + (sum_s y_i - sum_s theta_i)] for one iteration."""
    theta = np.asarray(theta)
    if theta.shape != (N,):
        raise EstimationError("theta must have one value per population unit")
    if not sample.linked:
        raise LinkageError("population mean draw requires a linked sample")
    return float((theta.sum() + sample.y.sum() - theta[sample.link].sum()) / N)


def subpopulation_mean_draw(theta: np.ndarray, sample: SampleFrame,
                            omega_mask: np.ndarray) -> float:
    """Same correction restricted to Omega and s intersect Omega."""
    omega_mask = np.asarray(omega_mask, dtype=bool)
    n_omega = int(omega_mask.sum())
    if n_omega == 0:
        raise EstimationError("empty subpopulation")
    if not sample.linked:
        raise LinkageError("subpopulation mean draw requires a linked sample")
    in_omega = omega_mask[sample.link]
    total = theta[omega_mask].sum() + sample.y[in_omega].sum() - theta[sample.link][in_omega].sum()
    return float(total / n_omega)


def mean_draws(fit: FitResult, sample: SampleFrame,
               subpop: SubpopulationFilter | None = None,
               population: PopulationFrame | None = None) -> PosteriorDraws:
    """Per-iteration (sub)population mean draws from a fit's draw stream."""
    if not sample.linked:
        raise LinkageError("prediction estimator requires a linked sample")
    N = fit.theta_pop.shape[1]
    if subpop is None:
        mask = np.ones(N, dtype=bool)
        estimand = "population_mean"
    else:
        mask = subpop.mask(population)
        if not mask.any():
            raise EstimationError("subpopulation filter selects no population units")
        estimand = "subpopulation_mean[%s%s%g]" % (subpop.column, subpop.op, subpop.value)
    in_omega = mask[sample.link]
    n_omega = mask.sum()
    tot = (fit.theta_pop[:, mask].sum(axis=1)
           + sample.y[in_omega].sum()
           - fit.theta_pop[:, sample.link[in_omega]].sum(axis=1))
    return PosteriorDraws(Q=tot / n_omega, sigma=fit.sigma,
                          method=fit.method, estimand=estimand)


def summarize(draws: PosteriorDraws, seed=None, config_digest=None) -> EstimateSummary:
    """Posterior median with equal-tailed 80% and 95% quantile intervals."""
    if draws.Q.size < 2:
        raise EstimationError("need at least 2 draws to summarize")
    q = draws.Q
    lo80, hi80 = np.quantile(q, [0.10, 0.90])
    lo95, hi95 = np.quantile(q, [0.025, 0.975])
    return EstimateSummary(method=draws.method, estimand=draws.estimand,
                           point=float(np.median(q)),
                           ci80=(float(lo80), float(hi80)),
                           ci95=(float(lo95), float(hi95)),
                           n_draws=int(q.size), seed=seed, config_digest=config_digest)


def _baseline_point(method, population, sample):
    if method == "raw":
        return float(sample.y.mean())
    rule = weighting.Discretizer(rule="tertile" if method == "ps" else "quintile")
    pop_d, samp_d = (weighting.discretize(population, sample, rule)
                     if population.schema.r else (population, sample))
    if method == "ps":
        _, w = weighting.post_stratify(pop_d, samp_d, by=pop_d.schema.discrete_names)
    else:
        w = weighting.rake(pop_d, samp_d, margins=pop_d.schema.discrete_names)
    return weighting.weighted_mean(samp_d, w)


def posterior_draws(method: str, population: PopulationFrame, sample: SampleFrame,
                    cfg: SamplerConfig | None = None,
                    subpop: SubpopulationFilter | None = None) -> PosteriorDraws:
    """Per-iteration mean draws for one of the posterior methods.

    The -p variants run the probit propensity model first and feed its
    posterior-mean score in as an extra covariate.
    """
    method = method.lower()
    if method not in BAYES_METHODS:
        raise SchemaError("method %r has no posterior draws" % method)
    cfg = cfg if cfg is not None else SamplerConfig()
    pop, samp = population, sample
    if method.endswith("-p"):
        if not sample.linked:
            raise LinkageError("%s requires a sample linked to the population" % method)
        I = inclusion_vector(population, sample)
        probit_cfg = replace(cfg, seed=derive_seed(cfg.seed, 101))
        scores = fit_probit_bart(population, I, probit_cfg)
        pop, samp = append_propensity(population, sample, scores)
    fitter = fit_sbart if method.startswith("sbart") else fit_bart
    fit = fitter(pop, samp, cfg)
    draws = mean_draws(fit, samp, subpop=subpop, population=pop)
    return PosteriorDraws(Q=draws.Q, sigma=draws.sigma, method=method,
                          estimand=draws.estimand)


def estimate(method: str, population: PopulationFrame, sample: SampleFrame,
             cfg: SamplerConfig | None = None,
             subpop: SubpopulationFilter | None = None) -> EstimateSummary:
    """One-stop estimator dispatch.

    Tree methods return full posterior summaries; 'raw', 'ps' and 'raking'
    return interval-free points.
    """
    method = method.lower()
    if method not in ALL_METHODS:
        raise SchemaError("unknown method %r" % method)
    if method in BASELINE_METHODS:
        if subpop is not None:
            raise EstimationError("subpopulation estimands need a prediction method")
        point = _baseline_point(method, population, sample)
        return EstimateSummary(method=method, estimand="population_mean",
                               point=point, ci80=None, ci95=None, n_draws=0)
    cfg = cfg if cfg is not None else SamplerConfig()
    draws = posterior_draws(method, population, sample, cfg=cfg, subpop=subpop)
    return summarize(draws, seed=cfg.seed, config_digest=cfg.digest())
