"""Posterior predictive checks: realized vs predictive test quantities and
Bayesian p-values.

For each retained draw t the predictive data are ytilde_i ~ N(theta_i^(t),
sigma_(t)^2). Three test quantities are tracked: T1 the mean, T2 the sample
variance (n-1 divisor), and T3 the mean standardized squared residual with
respect to the draw's own (theta, sigma). A p-value near 0.5 indicates that
the observed data look like the model's own replicates; ties count one half.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError
from .frames import SampleFrame
from .samplers import FitResult

QUANTITIES = ("T1", "T2", "T3")


@dataclass(frozen=True)
class PpcResult:
    """Per-quantity (realized, predictive) pair sequences and p-values."""

    realized: dict  # quantity -> (n_draws,) array
    predictive: dict  # quantity -> (n_draws,) array
    n_draws: int

    def __post_init__(self):
        for q in QUANTITIES:
            if self.realized[q].shape != (self.n_draws,) \
                    or self.predictive[q].shape != (self.n_draws,):
                raise EstimationError("ragged PPC pair sequences")

    def pvalues(self) -> dict:
        return {q: pvalue(list(zip(self.predictive[q], self.realized[q])))
                for q in QUANTITIES}

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "quantity", "realized", "predictive"])
            for q in QUANTITIES:
                for t in range(self.n_draws):
                    w.writerow([t, q, repr(float(self.realized[q][t])),
                                repr(float(self.predictive[q][t]))])

    def summary_json(self) -> str:
        p = self.pvalues()
        return json.dumps({"n_draws": self.n_draws, "pvalues": p}, sort_keys=True)


def pvalue(pairs) -> float:
    """Fraction of (predictive, realized) pairs with predictive greater;
    exact ties count 0.5."""
    pairs = list(pairs)
    if not pairs:
        raise EstimationError("empty pair sequence")
    score = 0.0
    for pred, real in pairs:
        if pred > real:
            score += 1.0
        elif pred == real:
            score += 0.5
    return score / len(pairs)


def _t3(y, theta, sigma):
    return float(np.mean(((y - theta) / sigma) ** 2))


def ppc(sample: SampleFrame, fit: FitResult, rng) -> PpcResult:
    """Posterior predictive check of a fit against its training sample."""
    y = sample.y
    n = sample.n
    T = fit.theta_samp.shape[0]
    if T < 1:
        raise EstimationError("empty draw stream")
    if fit.theta_samp.shape[1] != n:
        raise EstimationError("fit and sample sizes disagree")
    if n < 2:
        raise EstimationError("PPC needs at least two sample units")
    r1 = np.full(T, float(y.mean()))
    r2 = np.full(T, float(y.var(ddof=1)))
    r3 = np.empty(T)
    p1 = np.empty(T)
    p2 = np.empty(T)
    p3 = np.empty(T)
    for t in range(T):
        theta = fit.theta_samp[t]
        sigma = fit.sigma[t]
        ytil = theta + sigma * rng.standard_normal(n)
        r3[t] = _t3(y, theta, sigma)
        p1[t] = ytil.mean()
        p2[t] = ytil.var(ddof=1)
        p3[t] = _t3(ytil, theta, sigma)
    return PpcResult(realized={"T1": r1, "T2": r2, "T3": r3},
                     predictive={"T1": p1, "T2": p2, "T3": p3},
                     n_draws=T)
