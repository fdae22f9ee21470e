"""MCMC front end: config, outcome scaling, and the BART/SBART/probit fits.

The jitted kernel in ``_kernels`` does the work; this module prepares design
matrices (continuous covariates min-max scaled to [0, 1] by population range,
discrete codes passed through), calibrates the variance prior, and maps the
draws back to the original outcome scale.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.stats import chi2

from . import _kernels
from .errors import EstimationError, LinkageError, SchemaError
from .frames import (CovariateSchema, InclusionVector, PopulationFrame,
                     SampleFrame)

MAX_SPLIT_LEVELS = 30  # discrete left-sets are stored as int64 bitmasks


@dataclass(frozen=True)
class SamplerConfig:
    """Chain and prior settings; defaults follow standard BART/SBART practice."""

    M: int = 50
    n_burn: int = 1000
    n_keep: int = 1000
    thin: int = 1
    k: float = 2.0  # leaf prior scale: sigma_mu = 0.5 / (k sqrt(M))
    nu: float = 3.0  # sigma^2 prior dof
    q: float = 0.90  # sigma^2 prior calibration quantile
    alpha: float = 0.95
    beta: float = 2.0
    move_probs: tuple = (0.25, 0.25, 0.40, 0.10)  # grow, prune, change, swap
    n_cuts: int = 100
    max_depth: int = 12
    max_leaves: int = 64
    tau_init: float = 0.1
    tau_rate: float = 10.0  # exponential prior rate on the scaled covariate range
    tau_step: float = 0.2  # log random-walk step, no adaptation
    tau_fixed: float | None = None  # pin the bandwidth (limit tests)
    sparsity: bool = True  # Dirichlet split-variable prior (soft mode only)
    seed: int = 0

    def __post_init__(self):
        if min(self.M, self.n_burn + 1, self.n_keep, self.thin) < 1:
            raise SchemaError("all chain counts must be >= 1")
        if not (0.0 < self.q < 1.0) or self.nu <= 0:
            raise SchemaError("require 0 < q < 1 and nu > 0")
        object.__setattr__(self, "move_probs", tuple(float(p) for p in self.move_probs))

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class OutcomeScaler:
    """Affine map sending observed y into [-0.5, 0.5]."""

    center: float
    scale: float

    @classmethod
    def fit(cls, y) -> "OutcomeScaler":
        lo, hi = float(np.min(y)), float(np.max(y))
        scale = hi - lo
        if scale <= 0.0:
            scale = 1.0
        return cls(center=(lo + hi) / 2.0, scale=scale)

    def forward(self, y):
        return (np.asarray(y) - self.center) / self.scale

    def inverse(self, v):
        return np.asarray(v) * self.scale + self.center


@dataclass(frozen=True)
class FitResult:
    """Retained posterior draws on the original outcome scale."""

    theta_pop: np.ndarray  # (n_keep, N) G(t) at every population unit
    theta_samp: np.ndarray  # (n_keep, n) G(t) at the sample rows
    sigma: np.ndarray  # (n_keep,)
    method: str
    config: SamplerConfig
    split_prob_mean: np.ndarray | None = None

    def __post_init__(self):
        if not (np.isfinite(self.theta_pop).all() and np.isfinite(self.sigma).all()):
            raise EstimationError("non-finite posterior draws")
        if (self.sigma <= 0).any():
            raise EstimationError("non-positive sigma draw")


@dataclass(frozen=True)
class PropensityScores:
    """Posterior-mean inclusion probability per population unit."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=np.float64)
        if ((pi <= 0) | (pi >= 1)).any():
            raise EstimationError("propensity scores must lie strictly in (0, 1)")
        object.__setattr__(self, "pi", pi)


def _check_schemas(population: PopulationFrame, sample: SampleFrame):
    ps, ss = population.schema, sample.schema
    if ps.discrete_names != ss.discrete_names or ps.continuous_names != ss.continuous_names:
        raise SchemaError("population and sample covariate schemas differ")


def build_design(population: PopulationFrame, sample: SampleFrame | None, n_cuts: int):
    """Covariate matrices for the kernel: discrete codes then scaled continuous.

    Returns (Xs, Xp, iscat, ncat, grid). Cutpoint grids are n_cuts equally
    spaced quantiles of each (scaled) continuous population column, strictly
    inside the observed range.
    """
    p, r = population.schema.p, population.schema.r
    D = p + r
    for j, L in enumerate(population.category_levels):
        if L > MAX_SPLIT_LEVELS:
            raise SchemaError("discrete column %r has %d levels (max %d)"
                              % (population.schema.discrete_names[j], L, MAX_SPLIT_LEVELS))
        if L < 1:
            raise SchemaError("discrete column with no levels")
    iscat = np.zeros(D, dtype=np.bool_)
    iscat[:p] = True
    ncat = np.zeros(D, dtype=np.int64)
    ncat[:p] = population.category_levels
    lo = population.X.min(axis=0) if r else np.zeros(0)
    hi = population.X.max(axis=0) if r else np.zeros(0)
    span = np.where(hi > lo, hi - lo, 1.0)

    def matrix(frame):
        out = np.empty((frame.Z.shape[0], D))
        out[:, :p] = frame.Z
        if r:
            out[:, p:] = (frame.X - lo) / span
        return np.ascontiguousarray(out)

    Xp = matrix(population)
    Xs = matrix(sample) if sample is not None else Xp
    grid = np.zeros((D, n_cuts))
    probs = np.arange(1, n_cuts + 1) / (n_cuts + 1)
    for j in range(r):
        grid[p + j] = np.quantile(Xp[:, p + j], probs)
    return Xs, Xp, iscat, ncat, grid


def _sigma_prior_scale(y_scaled, nu, q):
    """lambda such that Pr(sigma < sd(y_scaled)) = q under scaled-inv-chi2(nu, lambda)."""
    shat2 = float(np.var(y_scaled, ddof=1)) if len(y_scaled) > 1 else 1.0
    if shat2 <= 0:
        shat2 = 1e-6
    return shat2 * chi2.ppf(1.0 - q, nu) / nu


_A_GRID = np.logspace(-2, 4, 100)


def _run(population, sample, cfg: SamplerConfig, soft: bool) -> FitResult:
    _check_schemas(population, sample)
    Xs, Xp, iscat, ncat, grid = build_design(population, sample, cfg.n_cuts)
    scaler = OutcomeScaler.fit(sample.y)
    ys = np.ascontiguousarray(scaler.forward(sample.y))
    smu = 0.5 / (cfg.k * np.sqrt(cfg.M))
    lam = _sigma_prior_scale(ys, cfg.nu, cfg.q)
    n_keep = cfg.n_keep
    theta_s = np.empty((n_keep, sample.n))
    theta_p = np.empty((n_keep, population.N))
    sigma = np.empty(n_keep)
    s_mean = np.zeros(Xs.shape[1])
    rng = np.random.default_rng(cfg.seed)
    tau_update = soft and cfg.tau_fixed is None
    tau_init = cfg.tau_init if cfg.tau_fixed is None else cfg.tau_fixed
    _kernels.run_chain(
        rng, Xs, ys, Xp, iscat, ncat, grid,
        cfg.M, cfg.n_burn, n_keep, cfg.thin,
        smu * smu, cfg.nu, lam,
        cfg.alpha, cfg.beta, np.asarray(cfg.move_probs),
        cfg.max_depth, cfg.max_leaves,
        soft, tau_init, tau_update, cfg.tau_rate, cfg.tau_step,
        soft and cfg.sparsity, _A_GRID,
        False, 0.0,
        theta_s, theta_p, sigma, s_mean)
    return FitResult(theta_pop=scaler.inverse(theta_p),
                     theta_samp=scaler.inverse(theta_s),
                     sigma=sigma * scaler.scale,
                     method="sbart" if soft else "bart",
                     config=cfg,
                     split_prob_mean=s_mean if soft and cfg.sparsity else None)


def fit_bart(population: PopulationFrame, sample: SampleFrame,
             cfg: SamplerConfig) -> FitResult:
    """Hard-tree sum-of-trees regression fit; draws on the original y scale."""
    return _run(population, sample, cfg, soft=False)


def fit_sbart(population: PopulationFrame, sample: SampleFrame,
              cfg: SamplerConfig) -> FitResult:
    """Soft-tree fit with per-tree bandwidths and sparse split-variable prior."""
    return _run(population, sample, cfg, soft=True)


def fit_probit_bart(population: PopulationFrame, I: InclusionVector,
                    cfg: SamplerConfig) -> PropensityScores:
    """Probit hard-BART for the inclusion indicator via latent augmentation.

    Trees are centered at ndtri(n/N); sigma is pinned at 1. The returned
    score is the posterior-mean normal CDF of the latent mean, clipped away
    from {0, 1}.
    """
    if I.I.shape[0] != population.N:
        raise SchemaError("inclusion vector length differs from population size")
    n1 = int(I.I.sum())
    if n1 == 0 or n1 == population.N:
        raise EstimationError("degenerate inclusion indicator (all zeros or all ones)")
    Xs, Xp, iscat, ncat, grid = build_design(population, None, cfg.n_cuts)
    ys = np.ascontiguousarray(I.I.astype(np.float64))
    offset = float(_kernels.ndtri(n1 / population.N))
    smu = 3.0 / (cfg.k * np.sqrt(cfg.M))  # latent probit scale: G spans about +-3
    n_keep = cfg.n_keep
    theta_s = np.empty((n_keep, population.N))
    theta_p = np.empty((n_keep, 0))
    sigma = np.empty(n_keep)
    s_mean = np.zeros(Xs.shape[1])
    rng = np.random.default_rng(cfg.seed)
    _kernels.run_chain(
        rng, Xs, ys, np.empty((0, Xs.shape[1])), iscat, ncat, grid,
        cfg.M, cfg.n_burn, n_keep, cfg.thin,
        smu * smu, cfg.nu, 1.0,
        cfg.alpha, cfg.beta, np.asarray(cfg.move_probs),
        cfg.max_depth, cfg.max_leaves,
        False, cfg.tau_init, False, cfg.tau_rate, cfg.tau_step,
        False, _A_GRID,
        True, offset,
        theta_s, theta_p, sigma, s_mean)
    from scipy.special import ndtr as ndtr_vec
    pi = ndtr_vec(theta_s).mean(axis=0)
    return PropensityScores(pi=np.clip(pi, 1e-6, 1.0 - 1e-6))


PROPENSITY_COLUMN = "pi_hat"


def append_propensity(population: PopulationFrame, sample: SampleFrame,
                      scores: PropensityScores):
    """Add the estimated propensity as one extra continuous covariate."""
    if scores.pi.shape[0] != population.N:
        raise SchemaError("propensity vector length differs from population size")
    if not sample.linked:
        raise LinkageError("appending propensity requires a linked sample")
    if PROPENSITY_COLUMN in population.schema.continuous_names:
        raise SchemaError("column %r already present" % PROPENSITY_COLUMN)
    psch = population.schema
    new_pop = PopulationFrame(
        schema=CovariateSchema(psch.discrete_names,
                               psch.continuous_names + (PROPENSITY_COLUMN,),
                               id_name=psch.id_name),
        Z=population.Z,
        X=np.column_stack([population.X, scores.pi]),
        levels=population.levels, ids=population.ids)
    ssch = sample.schema
    new_samp = SampleFrame(
        schema=CovariateSchema(ssch.discrete_names,
                               ssch.continuous_names + (PROPENSITY_COLUMN,),
                               outcome_name=ssch.outcome_name, id_name=ssch.id_name),
        Z=sample.Z,
        X=np.column_stack([sample.X, scores.pi[sample.link]]),
        y=sample.y, link=sample.link, levels=sample.levels, ids=sample.ids,
        y_transform=sample.y_transform)
    return new_pop, new_samp


def derive_seed(seed: int, *key) -> int:
    """Deterministic child seed via the splittable SeedSequence scheme."""
    return int(np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(1)[0])
