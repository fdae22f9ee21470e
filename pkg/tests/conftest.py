import numpy as np
import pytest

from finpop.frames import CovariateSchema, PopulationFrame, make_linked_sample
from finpop.samplers import SamplerConfig


def make_population(N=40, p=2, r=1, seed=0, ids=False):
    rng = np.random.default_rng(seed)
    schema = CovariateSchema(
        tuple("z%d" % j for j in range(p)),
        tuple("x%d" % j for j in range(r)),
        id_name="uid" if ids else None)
    Z = rng.integers(0, 2, size=(N, p))
    X = rng.uniform(0, 1, size=(N, r))
    return PopulationFrame(schema=schema, Z=Z, X=X,
                           levels=tuple(("0", "1") for _ in range(p)),
                           ids=tuple("u%d" % i for i in range(N)) if ids else None)


def make_pair(N=40, n=15, p=2, r=1, seed=0, fn=None, noise=0.0):
    """Population + linked sample with y = fn(Z, X) + noise."""
    rng = np.random.default_rng(seed + 1)
    pop = make_population(N=N, p=p, r=r, seed=seed)
    link = np.sort(rng.choice(N, size=n, replace=False))
    if fn is None:
        fn = lambda Z, X: 2.0 + Z[:, 0] + 3 * X[:, 0]
    y_all = fn(pop.Z.astype(float), pop.X) + noise * rng.standard_normal(N)
    return pop, make_linked_sample(pop, link, y_all[link])


@pytest.fixture
def tiny_cfg():
    return SamplerConfig(M=5, n_burn=30, n_keep=30, seed=1)
