import numpy as np
import pytest

from finpop.errors import (ConvergenceError, DegenerateCutsError,
                           EmptyCellError, SchemaError)
from finpop.frames import CovariateSchema, PopulationFrame, make_linked_sample
from finpop.weighting import (ConstantMean, Discretizer, LinearModel,
                              SaturatedCellMeans, discretize, post_stratify,
                              rake, rp_estimate, weighted_mean)

from conftest import make_pair, make_population


def frame_from_Z(Zp, Zs, ys, Xp=None, Xs=None):
    p = Zp.shape[1]
    r = 0 if Xp is None else Xp.shape[1]
    schema = CovariateSchema(tuple("z%d" % j for j in range(p)),
                             tuple("x%d" % j for j in range(r)))
    pop = PopulationFrame(schema=schema, Z=Zp,
                          X=Xp if Xp is not None else np.zeros((len(Zp), 0)))
    sschema = CovariateSchema(schema.discrete_names, schema.continuous_names,
                              outcome_name="y")
    from finpop.frames import SampleFrame
    samp = SampleFrame(schema=sschema, Z=Zs,
                       X=Xs if Xs is not None else np.zeros((len(Zs), 0)),
                       y=ys, levels=pop.levels)
    return pop, samp


class TestDiscretizer:
    def test_tertile_uniform_grid(self):
        vals = np.arange(1.0, 10.0)
        cuts = Discretizer(rule="tertile").cut_points("x", vals)
        assert np.allclose(cuts, np.quantile(vals, [1 / 3, 2 / 3]))
        binned = np.searchsorted(cuts, vals, side="left")
        assert np.bincount(binned).tolist() == [3, 3, 3]

    def test_constant_column_degenerate(self):
        with pytest.raises(DegenerateCutsError):
            Discretizer(rule="tertile").cut_points("x", np.full(10, 2.0))

    def test_s1_population_tertiles_near_thirds(self):
        from finpop.simlab import SCENARIOS, generate_population
        pop = generate_population(SCENARIOS["s1"], 3).frame
        cuts = Discretizer(rule="tertile").cut_points("X1", pop.X[:, 0])
        assert np.allclose(cuts, [1 / 3, 2 / 3], atol=0.03)

    def test_unknown_rule(self):
        with pytest.raises(SchemaError):
            Discretizer(rule="octile").cut_points("x", np.arange(9.0))

    def test_custom_cuts(self):
        d = Discretizer(rule="custom", cuts={"x": [0.5]})
        assert d.cut_points("x", np.arange(9.0)).tolist() == [0.5]
        with pytest.raises(SchemaError):
            d.cut_points("other", np.arange(9.0))

    def test_out_of_range_sample_clamps_to_end_bins(self):
        pop, samp = make_pair(N=30, n=5)
        samp2 = make_linked_sample(pop, samp.link, samp.y)
        pop_d, samp_d = discretize(pop, samp2, Discretizer(rule="tertile"))
        assert pop_d.schema.r == 0
        assert pop_d.schema.discrete_names[-1] == "x0"
        nb = len(pop_d.levels[-1])
        assert samp_d.Z[:, -1].max() < nb


class TestPostStratify:
    def test_single_cell_uniform_weights(self):
        pop, samp = make_pair(N=20, n=5)
        strat, w = post_stratify(pop, samp, by=())
        assert strat.J == 1
        assert np.allclose(w.w, 20 / 5)
        assert np.isclose(weighted_mean(samp, w), samp.y.mean())

    def test_hand_example(self):
        # N_j = (6, 4); sample stratum means (3, 5) -> (6*3 + 4*5) / 10 = 3.8
        Zp = np.array([[0]] * 6 + [[1]] * 4)
        Zs = np.array([[0], [0], [1], [1]])
        ys = np.array([2.0, 4.0, 4.0, 6.0])  # means 3 and 5
        pop, samp = frame_from_Z(Zp, Zs, ys)
        _, w = post_stratify(pop, samp, by=("z0",))
        assert np.isclose(weighted_mean(samp, w), 3.8)

    def test_weights_sum_to_N(self):
        pop, samp = make_pair(N=40, n=12, seed=3)
        _, w = post_stratify(pop, samp, by=pop.schema.discrete_names)
        assert np.isclose(w.w.sum(), pop.N)

    def test_empty_cell_error_names_cell(self):
        Zp = np.array([[0]] * 5 + [[1]] * 5)
        Zs = np.array([[0], [0]])
        pop, samp = frame_from_Z(Zp, Zs, np.array([1.0, 2.0]))
        with pytest.raises(EmptyCellError):
            post_stratify(pop, samp, by=("z0",))

    def test_non_discrete_column_rejected(self):
        pop, samp = make_pair()
        with pytest.raises(SchemaError):
            post_stratify(pop, samp, by=("x0",))


def hand_ipf(pop_margins, cells, iters=200):
    """Independent 2x2 IPF oracle on cell weights (row-major cells)."""
    w = np.ones((2, 2)) * cells  # weight mass per cell starts at counts
    rows, cols = pop_margins
    for _ in range(iters):
        w *= (np.asarray(rows) / w.sum(axis=1))[:, None]
        w *= np.asarray(cols) / w.sum(axis=0)
    return w


class TestRake:
    def test_proportional_sample_fixed_point(self):
        Zp = np.array([[0, 0]] * 4 + [[0, 1]] * 4 + [[1, 0]] * 4 + [[1, 1]] * 4)
        Zs = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
        pop, samp = frame_from_Z(Zp, Zs, np.arange(4.0))
        w = rake(pop, samp, margins=("z0", "z1"))
        assert np.allclose(w.w, 16 / 4)

    def test_2x2_against_hand_ipf_oracle(self):
        # population margins rows (60, 40), cols (70, 30)
        Zp = np.vstack([np.repeat([[0, 0]], 42, 0), np.repeat([[0, 1]], 18, 0),
                        np.repeat([[1, 0]], 28, 0), np.repeat([[1, 1]], 12, 0)])
        counts = np.array([[20, 20], [10, 10]])
        Zs = np.vstack([np.repeat([[i, j]], counts[i, j], 0)
                        for i in range(2) for j in range(2)])
        pop, samp = frame_from_Z(Zp, Zs, np.zeros(60))
        w = rake(pop, samp, margins=("z0", "z1"), tol=1e-10)
        oracle = hand_ipf(([60, 40], [70, 30]), counts)
        got = np.array([[w.w[(Zs[:, 0] == i) & (Zs[:, 1] == j)].sum()
                         for j in range(2)] for i in range(2)])
        assert np.allclose(got, oracle, atol=1e-8)
        for j, tot in ((0, [60, 40]), (1, [70, 30])):
            weighted = np.bincount(Zs[:, j], weights=w.w)
            assert np.abs(weighted - tot).max() <= 1e-8

    def test_margin_order_invariance_at_fixed_point(self):
        pop, samp = make_pair(N=60, n=20, seed=5)
        w1 = rake(pop, samp, margins=("z0", "z1"))
        w2 = rake(pop, samp, margins=("z1", "z0"))
        for w in (w1, w2):
            for name in ("z0", "z1"):
                j = pop.schema.discrete_names.index(name)
                got = np.bincount(samp.Z[:, j], weights=w.w,
                                  minlength=2)
                want = np.bincount(pop.Z[:, j], minlength=2)
                assert np.abs(got - want).max() <= 1e-8

    def test_empty_margin_level(self):
        Zp = np.array([[0]] * 5 + [[1]] * 5)
        Zs = np.array([[0], [0]])
        pop, samp = frame_from_Z(Zp, Zs, np.array([1.0, 2.0]))
        with pytest.raises(EmptyCellError):
            rake(pop, samp, margins=("z0",))

    def test_non_convergence_reported(self):
        pop, samp = make_pair(N=60, n=20, seed=5)
        with pytest.raises(ConvergenceError) as exc:
            rake(pop, samp, margins=("z0", "z1"), tol=0.0, max_iter=2)
        assert exc.value.discrepancy is not None


class TestWeightedMean:
    def test_uniform_weights_give_sample_mean(self):
        pop, samp = make_pair(N=20, n=4)
        _, w = post_stratify(pop, samp, by=())
        assert np.isclose(weighted_mean(samp, w), samp.y.mean())

    def test_degenerate_mass(self):
        from finpop.weighting import Weights
        pop, samp = make_pair(N=20, n=4)
        wv = np.zeros(4)
        wv[2] = 7.0
        w = Weights(w=wv, kind="post_stratification", N=20)
        assert np.isclose(weighted_mean(samp, w), samp.y[2] * 7.0 / 20)

    def test_length_mismatch(self):
        from finpop.weighting import Weights
        pop, samp = make_pair(N=20, n=4)
        with pytest.raises(SchemaError):
            weighted_mean(samp, Weights(w=np.ones(3), kind="raking", N=20))

    def test_linearity_in_y(self):
        pop, samp = make_pair(N=40, n=10, seed=2)
        _, w = post_stratify(pop, samp, by=("z0",))
        base = weighted_mean(samp, w)
        samp_ab = make_linked_sample(pop, samp.link, 3.0 * samp.y + 2.0)
        assert np.isclose(weighted_mean(samp_ab, w),
                          3.0 * base + 2.0 * w.w.sum() / pop.N)


class TestRP:
    def test_saturated_equals_ps(self):
        pop, samp = make_pair(N=300, n=150, seed=7, noise=1.0)
        pop_d, samp_d = discretize(pop, samp, Discretizer(rule="tertile"))
        _, w = post_stratify(pop_d, samp_d, by=pop_d.schema.discrete_names)
        q_ps = weighted_mean(samp_d, w)
        q_rp = rp_estimate(pop_d, samp_d, SaturatedCellMeans())
        assert abs(q_rp - q_ps) <= 1e-10

    def test_constant_model(self):
        pop, samp = make_pair(N=30, n=6)
        assert np.isclose(rp_estimate(pop, samp, ConstantMean()), samp.y.mean())

    def test_linear_model_exact_on_noiseless_linear_population(self):
        schema = CovariateSchema((), ("x0",))
        X = np.linspace(0, 1, 10)[:, None]
        pop = PopulationFrame(schema=schema, Z=np.zeros((10, 0), dtype=np.int64), X=X)
        y_all = 1.5 + 4.0 * X[:, 0]
        samp = make_linked_sample(pop, [0, 3, 9], y_all[[0, 3, 9]])
        assert np.isclose(rp_estimate(pop, samp, LinearModel()), y_all.mean())

    def test_saturated_empty_cell_error(self):
        Zp = np.array([[0]] * 5 + [[1]] * 5)
        Zs = np.array([[0], [0]])
        pop, samp = frame_from_Z(Zp, Zs, np.array([1.0, 2.0]))
        with pytest.raises(EmptyCellError):
            rp_estimate(pop, samp, SaturatedCellMeans())
