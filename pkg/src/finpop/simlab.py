"""Simulation lab: artificial populations with informative selection, the
four study scenarios S1-S4, and the multi-replicate study harness computing
empirical bias, RMSE, coverage, and interval width per method.

Determinism contract: every random quantity is drawn from a stream derived
from the master seed by a fixed key, so (a) results are bit-identical across
runs and job counts, (b) adding a method never perturbs another method's
estimates, and (c) scenarios that share an outcome model (S1-S3) produce
identical y vectors from the same population seed.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .errors import DomainError, FinpopError, SchemaError
from .estimators import ALL_METHODS, estimate
from .frames import (CovariateSchema, PopulationFrame, SampleFrame,
                     make_linked_sample)
from .samplers import SamplerConfig, derive_seed


@dataclass(frozen=True)
class LinearTerms:
    """intercept + sum z_lin + sum z_int (pairwise) + quadratic-in-X terms.

    Quadratic terms are coef * (X_j - 0.75)^2, optionally gated by a binary
    Z_k (zx_quad). This shape covers every scenario's outcome and
    inclusion-logit formula.
    """

    intercept: float
    z_lin: tuple = ()  # (z_index, coef)
    z_int: tuple = ()  # (z_index, z_index, coef)
    x_quad: tuple = ()  # (x_index, coef)
    zx_quad: tuple = ()  # (z_index, x_index, coef)

    def __call__(self, Z, X):
        out = np.full(Z.shape[0], self.intercept)
        for j, c in self.z_lin:
            out += c * Z[:, j]
        for j, k, c in self.z_int:
            out += c * Z[:, j] * Z[:, k]
        for j, c in self.x_quad:
            out += c * (X[:, j] - 0.75) ** 2
        for j, k, c in self.zx_quad:
            out += c * Z[:, j] * (X[:, k] - 0.75) ** 2
        return out


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    p: int
    r: int
    outcome: LinearTerms
    inclusion_logit: LinearTerms
    N: int = 3000
    n: int = 600
    noise_sd: float = 3.0

    def __post_init__(self):
        if self.p < 1 or self.r < 0 or not (0 < self.n <= self.N):
            raise SchemaError("invalid scenario dimensions")


_Y_ADDITIVE = LinearTerms(
    intercept=26.81,
    z_lin=((0, -1.0), (1, -2.0), (2, -3.5)),
    x_quad=((0, -25.0),))
_PI_S1 = LinearTerms(
    intercept=-13.66,
    z_lin=((0, 0.5), (1, 1.0), (2, 1.75)),
    x_quad=((0, 12.5),))
_PI_S3 = LinearTerms(
    intercept=4.01,
    z_lin=((0, -0.5), (1, -1.0), (2, -1.75)),
    x_quad=((0, -12.5),))
_Y_S4 = LinearTerms(
    intercept=36.81,
    z_lin=((0, -1.0), (1, -2.0), (2, -3.5)),
    z_int=((0, 1, -10.0),),
    x_quad=((0, -9.0),),
    zx_quad=((2, 0, -16.0),))
_PI_S4 = LinearTerms(
    intercept=3.27,
    z_lin=((0, -0.5), (1, -1.0), (2, -1.75)),
    z_int=((0, 1, -2.0),),
    x_quad=((2, -4.0), (4, -1.0)),
    zx_quad=((2, 2, -3.0),))

SCENARIOS = {
    "s1": ScenarioSpec(id="s1", p=3, r=1, outcome=_Y_ADDITIVE, inclusion_logit=_PI_S1),
    "s2": ScenarioSpec(id="s2", p=30, r=10, outcome=_Y_ADDITIVE, inclusion_logit=_PI_S1),
    "s3": ScenarioSpec(id="s3", p=30, r=10, outcome=_Y_ADDITIVE, inclusion_logit=_PI_S3),
    "s4": ScenarioSpec(id="s4", p=30, r=10, outcome=_Y_S4, inclusion_logit=_PI_S4),
}


@dataclass(frozen=True)
class GeneratedPopulation:
    spec: ScenarioSpec
    frame: PopulationFrame
    y: np.ndarray
    true_pi: np.ndarray
    Q: float
    seed: int
    warnings: tuple = ()


def _normalize_pi(raw, n):
    """Scale raw propensities to sum exactly n, clipping any that would
    reach 1 and renormalizing the rest (repeatedly, until stable)."""
    pi = np.asarray(raw, dtype=np.float64).copy()
    cap = 1.0 - 1e-9
    clipped = np.zeros(pi.shape[0], dtype=bool)
    warned = False
    for _ in range(pi.shape[0]):
        free = ~clipped
        remaining = n - cap * clipped.sum()
        if remaining <= 0 or not free.any():
            raise DomainError("cannot normalize inclusion probabilities to sum %d" % n)
        pi[free] *= remaining / pi[free].sum()
        over = free & (pi >= 1.0)
        if not over.any():
            break
        warned = True
        pi[over] = cap
        clipped |= over
    return pi, warned


def generate_population(spec: ScenarioSpec, seed: int) -> GeneratedPopulation:
    """Simulate one artificial population.

    Component streams (W, U, X, noise) are derived separately from the seed
    and the W/U/X matrices are filled column by column, so scenarios with the
    same outcome model but different dimensionality share their leading
    columns (and hence their y values) bit-exactly.
    """
    N, p, r = spec.N, spec.p, spec.r
    rng_w = np.random.default_rng(derive_seed(seed, 0))
    rng_u = np.random.default_rng(derive_seed(seed, 1))
    rng_x = np.random.default_rng(derive_seed(seed, 2))
    rng_e = np.random.default_rng(derive_seed(seed, 3))
    W = np.column_stack([rng_w.standard_normal(N) for _ in range(p)])
    U = rng_u.uniform(-0.4, 0.4, size=p)
    Z = (W < U).astype(np.int64)
    X = (np.column_stack([rng_x.uniform(0.0, 1.0, N) for _ in range(r)])
         if r else np.zeros((N, 0)))
    eps = rng_e.normal(0.0, spec.noise_sd, N)
    y = spec.outcome(Z, X) + eps
    pi, warned = _normalize_pi(expit(spec.inclusion_logit(Z, X)), spec.n)
    schema = CovariateSchema(
        tuple("Z%d" % (l + 1) for l in range(p)),
        tuple("X%d" % (l + 1) for l in range(r)))
    levels = tuple(("0", "1") for _ in range(p))
    frame = PopulationFrame(schema=schema, Z=Z, X=X, levels=levels, ids=None)
    warnings = ("inclusion probabilities clipped below 1 and renormalized",) if warned else ()
    return GeneratedPopulation(spec=spec, frame=frame, y=y, true_pi=pi,
                               Q=float(y.mean()), seed=seed, warnings=warnings)


def draw_sample(pop: GeneratedPopulation, seed: int) -> SampleFrame:
    """Fixed-size PPS draw: systematic pass over a random permutation with
    per-unit probability pop.true_pi (which sums to n)."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(pop.spec.N)
    cum = np.cumsum(pop.true_pi[perm])
    cum[-1] = pop.spec.n  # exact total, guard cumulative rounding
    points = rng.random() + np.arange(pop.spec.n)
    chosen = np.sort(perm[np.searchsorted(cum, points, side="left")])
    if np.unique(chosen).size != pop.spec.n:
        raise DomainError("systematic PPS selected a unit twice (pi too concentrated)")
    return make_linked_sample(pop.frame, chosen, pop.y[chosen])


@dataclass(frozen=True)
class MethodMetrics:
    method: str
    bias: float
    rmse: float
    coverage80: float | None
    coverage95: float | None
    width80: float | None
    width95: float | None
    n_ok: int
    n_failed: int

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class ReplicateMetrics:
    scenario: str
    Q: float
    master_seed: int
    replicates: int
    methods: tuple
    aggregates: dict  # method -> MethodMetrics
    rows: tuple  # (rep, method, point|None, ci80, ci95, error|None)

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "Q": self.Q,
            "master_seed": self.master_seed,
            "replicates": self.replicates,
            "methods": list(self.methods),
            "aggregates": {m: a.to_dict() for m, a in self.aggregates.items()},
            "rows": [list(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "method", "point",
                        "ci80_lo", "ci80_hi", "ci95_lo", "ci95_hi", "error"])
            for rep, method, point, ci80, ci95, err in self.rows:
                lo80, hi80 = ci80 if ci80 else ("", "")
                lo95, hi95 = ci95 if ci95 else ("", "")
                w.writerow([rep, method, "" if point is None else repr(point),
                            lo80, hi80, lo95, hi95, err or ""])


_Z80 = 1.2815515655446004
_Z95 = 1.959963984540054


def compute_metrics(method, points, ci80s, ci95s, Q, n_failed=0) -> MethodMetrics:
    """Aggregate one method's replicate results against the true mean Q.

    Interval-free methods (the weighting baselines) get normal dispersion
    intervals, point +- z * sd(points across replicates), so their coverage
    reflects the usual variance-only uncertainty statement that ignores bias.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise DomainError("no successful replicates for method %r" % method)
    err = points - Q
    bias = float(err.mean())
    rmse = float(np.sqrt((err ** 2).mean()))
    if ci80s is None:
        sd = float(points.std(ddof=1)) if points.size > 1 else 0.0
        ci80s = [(p - _Z80 * sd, p + _Z80 * sd) for p in points]
        ci95s = [(p - _Z95 * sd, p + _Z95 * sd) for p in points]
    lo80, hi80 = np.array(ci80s).T
    lo95, hi95 = np.array(ci95s).T
    return MethodMetrics(
        method=method, bias=bias, rmse=rmse,
        coverage80=float(((lo80 <= Q) & (Q <= hi80)).mean()),
        coverage95=float(((lo95 <= Q) & (Q <= hi95)).mean()),
        width80=float((hi80 - lo80).mean()),
        width95=float((hi95 - lo95).mean()),
        n_ok=int(points.size), n_failed=int(n_failed))


def _method_id(method):
    try:
        return ALL_METHODS.index(method)
    except ValueError:
        raise SchemaError("unknown method %r" % method) from None


def _run_replicate(spec, pop, methods, rep, master_seed, cfg):
    sample = draw_sample(pop, derive_seed(master_seed, 1, rep))
    out = []
    for method in methods:
        mcfg = replace(cfg, seed=derive_seed(master_seed, 2, _method_id(method), rep))
        try:
            s = estimate(method, pop.frame, sample, cfg=mcfg)
            out.append((rep, method, s.point, s.ci80, s.ci95, None))
        except FinpopError as exc:
            out.append((rep, method, None, None, None,
                        "%s: %s" % (type(exc).__name__, exc)))
    return out


def run_study(spec: ScenarioSpec, methods, replicates: int, master_seed: int,
              cfg: SamplerConfig | None = None, jobs: int = 1,
              regenerate_population: bool = False) -> ReplicateMetrics:
    """Run `replicates` independent samples of one scenario through `methods`.

    One population is generated per study (fixed across replicates) unless
    regenerate_population is set. Failed replicates are recorded per method
    and excluded from that method's aggregates.
    """
    if replicates < 1:
        raise SchemaError("need at least one replicate")
    methods = tuple(methods)
    for m in methods:
        _method_id(m)
    cfg = cfg if cfg is not None else SamplerConfig()
    pop = generate_population(spec, derive_seed(master_seed, 0))
    if regenerate_population:
        pops = [generate_population(spec, derive_seed(master_seed, 0, rep))
                for rep in range(replicates)]
    else:
        pops = [pop] * replicates
    args = [(spec, pops[rep], methods, rep, master_seed, cfg)
            for rep in range(replicates)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(_run_replicate_star, args))
    else:
        chunks = [_run_replicate(*a) for a in args]
    rows = tuple(row for chunk in chunks for row in chunk)

    Q = pop.Q if not regenerate_population else float(np.mean([p.Q for p in pops]))
    aggregates = {}
    for method in methods:
        ok = [r for r in rows if r[1] == method and r[5] is None]
        n_failed = sum(1 for r in rows if r[1] == method and r[5] is not None)
        points = [r[2] for r in ok]
        has_ci = bool(ok) and ok[0][3] is not None
        if not ok:
            # a method that failed on every replicate still gets a row so
            # the failure count is visible in the aggregate report
            aggregates[method] = MethodMetrics(
                method=method, bias=float("nan"), rmse=float("nan"),
                coverage80=None, coverage95=None, width80=None, width95=None,
                n_ok=0, n_failed=n_failed)
            continue
        aggregates[method] = compute_metrics(
            method, points,
            [r[3] for r in ok] if has_ci else None,
            [r[4] for r in ok] if has_ci else None,
            Q, n_failed=n_failed)
    return ReplicateMetrics(scenario=spec.id, Q=Q, master_seed=master_seed,
                            replicates=replicates, methods=methods,
                            aggregates=aggregates, rows=rows)


def _run_replicate_star(a):
    return _run_replicate(*a)


def feasible_methods(spec: ScenarioSpec):
    """PS and raking need low-dimensional cells; only s1 supports them."""
    if spec.p <= 5:
        return ALL_METHODS
    return tuple(m for m in ALL_METHODS if m not in ("ps", "raking"))
