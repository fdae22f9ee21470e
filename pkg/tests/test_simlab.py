import numpy as np
import pytest
from scipy.special import expit

from finpop.errors import DomainError, SchemaError
from finpop.simlab import (SCENARIOS, GeneratedPopulation, LinearTerms,
                           ScenarioSpec, compute_metrics, draw_sample,
                           feasible_methods, generate_population, run_study)
from finpop.samplers import SamplerConfig


class TestLinearTerms:
    def test_additive_outcome_at_reference_point(self):
        # Z = 0, X = 0.75: every non-intercept term vanishes
        Z = np.zeros((1, 3), dtype=np.int64)
        X = np.full((1, 1), 0.75)
        assert SCENARIOS["s1"].outcome(Z, X)[0] == 26.81

    def test_additive_outcome_hand_value(self):
        # Z = (1,1,1), X1 = 0.25: 26.81 - 1 - 2 - 3.5 - 25 * 0.25 = 14.06
        Z = np.ones((1, 3), dtype=np.int64)
        X = np.full((1, 1), 0.25)
        assert np.isclose(SCENARIOS["s1"].outcome(Z, X)[0], 14.06)

    def test_s1_logit_hand_value(self):
        # Z = 0, X1 = 0.25: -13.66 + 12.5 * 0.25 = -10.535
        Z = np.zeros((1, 3), dtype=np.int64)
        X = np.full((1, 1), 0.25)
        assert np.isclose(SCENARIOS["s1"].inclusion_logit(Z, X)[0], -10.535)

    def test_s3_logit_is_shifted_negation_of_s1(self):
        # S3 coefficients are the negation of S1's with a different intercept,
        # so logit_s1 + logit_s3 is constant = -13.66 + 4.01
        rng = np.random.default_rng(0)
        Z = rng.integers(0, 2, (50, 30))
        X = rng.uniform(0, 1, (50, 10))
        s = SCENARIOS["s1"].inclusion_logit(Z, X) + SCENARIOS["s3"].inclusion_logit(Z, X)
        assert np.allclose(s, -13.66 + 4.01)

    def test_s4_outcome_hand_value(self):
        # Z1=Z2=1, Z3=0, X1=0.75: 36.81 - 1 - 2 - 10 = 23.81
        Z = np.zeros((1, 30), dtype=np.int64)
        Z[0, 0] = Z[0, 1] = 1
        X = np.full((1, 10), 0.75)
        assert np.isclose(SCENARIOS["s4"].outcome(Z, X)[0], 23.81)

    def test_s4_logit_hand_value(self):
        # all Z = 0, all X = 0.25: 3.27 - 4*(0.25-0.75)^2 - 1*(0.25-0.75)^2
        Z = np.zeros((1, 30), dtype=np.int64)
        X = np.full((1, 10), 0.25)
        assert np.isclose(SCENARIOS["s4"].inclusion_logit(Z, X)[0],
                          3.27 - 4 * 0.25 - 1 * 0.25)


class TestScenarios:
    def test_registry(self):
        assert set(SCENARIOS) == {"s1", "s2", "s3", "s4"}
        assert SCENARIOS["s1"].p == 3 and SCENARIOS["s1"].r == 1
        for sc in ("s2", "s3", "s4"):
            assert SCENARIOS[sc].p == 30 and SCENARIOS[sc].r == 10
        for sc in SCENARIOS.values():
            assert (sc.N, sc.n, sc.noise_sd) == (3000, 600, 3.0)

    def test_invalid_spec(self):
        with pytest.raises(SchemaError):
            ScenarioSpec(id="bad", p=0, r=1, outcome=SCENARIOS["s1"].outcome,
                         inclusion_logit=SCENARIOS["s1"].inclusion_logit)


class TestGeneratePopulation:
    def test_shapes_and_determinism(self):
        pop = generate_population(SCENARIOS["s1"], 5)
        assert pop.frame.Z.shape == (3000, 3)
        assert pop.frame.X.shape == (3000, 1)
        assert pop.y.shape == (3000,)
        again = generate_population(SCENARIOS["s1"], 5)
        assert np.array_equal(pop.y, again.y)
        assert np.array_equal(pop.true_pi, again.true_pi)
        other = generate_population(SCENARIOS["s1"], 6)
        assert not np.array_equal(pop.y, other.y)

    def test_binary_marginals_in_range(self):
        # Z_j = 1{W_j < U_j}, U_j ~ Uniform(-0.4, 0.4), so the success
        # probability lies in (Phi(-0.4), Phi(0.4)) = (0.345, 0.655)
        pop = generate_population(SCENARIOS["s2"], 11)
        rates = pop.frame.Z.mean(axis=0)
        assert (rates > 0.28).all() and (rates < 0.72).all()

    def test_pi_sums_to_n_and_in_range(self):
        for sc in ("s1", "s3", "s4"):
            pop = generate_population(SCENARIOS[sc], 7)
            assert np.isclose(pop.true_pi.sum(), 600)
            assert (pop.true_pi > 0).all() and (pop.true_pi < 1).all()

    def test_q_is_mean_outcome(self):
        pop = generate_population(SCENARIOS["s1"], 8)
        assert pop.Q == pop.y.mean()

    def test_s1_s2_s3_share_outcomes(self):
        y1 = generate_population(SCENARIOS["s1"], 47).y
        y2 = generate_population(SCENARIOS["s2"], 47).y
        y3 = generate_population(SCENARIOS["s3"], 47).y
        assert np.array_equal(y1, y2)
        assert np.array_equal(y2, y3)

    def test_acceptance_seed_population_means(self):
        # the shared additive outcome and the s4 outcome at the study seed
        from finpop.samplers import derive_seed
        pop_seed = derive_seed(47, 0)
        q13 = generate_population(SCENARIOS["s1"], pop_seed).Q
        q4 = generate_population(SCENARIOS["s4"], pop_seed).Q
        assert abs(q13 - 19.88) <= 0.3
        assert abs(q4 - 27.74) <= 0.3

    def test_pi_proportional_where_unclipped(self):
        pop = generate_population(SCENARIOS["s3"], 9)
        raw = expit(SCENARIOS["s3"].inclusion_logit(pop.frame.Z, pop.frame.X))
        free = pop.true_pi < 1.0 - 1e-9
        ratio = pop.true_pi[free] / raw[free]
        assert ratio.std() / ratio.mean() < 1e-9


class TestDrawSample:
    def test_fixed_size_and_no_duplicates(self):
        pop = generate_population(SCENARIOS["s1"], 10)
        samp = draw_sample(pop, 3)
        assert samp.n == 600
        assert np.unique(samp.link).size == 600
        assert (np.diff(samp.link) > 0).all()
        assert np.array_equal(samp.y, pop.y[samp.link])

    def test_determinism(self):
        pop = generate_population(SCENARIOS["s1"], 10)
        a = draw_sample(pop, 3)
        b = draw_sample(pop, 3)
        assert np.array_equal(a.link, b.link)
        c = draw_sample(pop, 4)
        assert not np.array_equal(a.link, c.link)

    def test_inclusion_rates_match_pi(self):
        # uniform logit=0 scenario: every unit has pi = n/N, a plain SRS;
        # Monte Carlo inclusion rates must match to 3 MC standard errors
        flat = ScenarioSpec(id="flat", p=1, r=0,
                            outcome=LinearTerms(intercept=1.0),
                            inclusion_logit=LinearTerms(intercept=0.0),
                            N=300, n=60, noise_sd=1.0)
        pop = generate_population(flat, 12)
        assert np.allclose(pop.true_pi, 0.2)
        reps = 400
        counts = np.zeros(300)
        for k in range(reps):
            counts[draw_sample(pop, k).link] += 1
        rate = counts / reps
        se = np.sqrt(0.2 * 0.8 / reps)
        assert (np.abs(rate - 0.2) < 4 * se).all()
        assert abs(rate.mean() - 0.2) < 1e-12  # fixed size: exact on average

    def test_weighted_inclusion_rates(self):
        # nonuniform pi: empirical inclusion rate tracks true_pi unit by unit
        pop = generate_population(SCENARIOS["s3"], 13)
        reps = 200
        counts = np.zeros(3000)
        for k in range(reps):
            counts[draw_sample(pop, 1000 + k).link] += 1
        rate = counts / reps
        se = np.sqrt(pop.true_pi * (1 - pop.true_pi) / reps)
        cover = np.abs(rate - pop.true_pi) < 4 * se + 1e-12
        assert cover.mean() > 0.99

    def test_selection_direction_s1_vs_s3(self):
        # S1 over-selects low-y units (negative raw bias), S3 the reverse
        pop1 = generate_population(SCENARIOS["s1"], 14)
        pop3 = generate_population(SCENARIOS["s3"], 14)
        m1 = np.mean([draw_sample(pop1, k).y.mean() for k in range(20)])
        m3 = np.mean([draw_sample(pop3, k).y.mean() for k in range(20)])
        assert m1 < pop1.Q - 1.0
        assert m3 > pop3.Q + 1.0


class TestComputeMetrics:
    def test_hand_values_symmetric(self):
        m = compute_metrics("raw", [1.0, 3.0], None, None, Q=2.0)
        assert m.bias == 0.0
        assert m.rmse == 1.0

    def test_hand_values_biased(self):
        m = compute_metrics("raw", [2.0, 2.0, 5.0], None, None, Q=2.0)
        assert np.isclose(m.bias, 1.0)
        assert np.isclose(m.rmse, np.sqrt(3.0))

    def test_oracle_method(self):
        m = compute_metrics("bart", [2.0, 2.0], [(1.0, 3.0)] * 2,
                            [(0.5, 3.5)] * 2, Q=2.0)
        assert m.bias == 0.0 and m.rmse == 0.0
        assert m.coverage80 == 1.0 and m.coverage95 == 1.0
        assert m.width80 == 2.0 and m.width95 == 3.0

    def test_interval_coverage_counting(self):
        ci = [(0.0, 1.0), (3.0, 4.0), (1.5, 2.5), (2.0, 9.0)]
        m = compute_metrics("bart", [0.5, 3.5, 2.0, 5.0], ci, ci, Q=2.0)
        assert m.coverage95 == 0.5  # intervals 3 and 4 contain Q=2

    def test_rmse_dominates_abs_bias(self):
        rng = np.random.default_rng(15)
        pts = rng.normal(3.0, 1.0, 50)
        m = compute_metrics("raw", pts, None, None, Q=2.5)
        assert m.rmse >= abs(m.bias)

    def test_dispersion_intervals(self):
        # baseline points {1, 3}: sd = sqrt(2), intervals p +- z * sd
        m = compute_metrics("raw", [1.0, 3.0], None, None, Q=2.0)
        sd = np.std([1.0, 3.0], ddof=1)
        assert np.isclose(m.width95, 2 * 1.959963984540054 * sd)
        assert np.isclose(m.width80, 2 * 1.2815515655446004 * sd)
        assert m.coverage95 == 1.0  # both intervals reach Q = 2

    def test_empty_points(self):
        with pytest.raises(DomainError):
            compute_metrics("raw", [], None, None, Q=0.0, n_failed=3)

    def test_failure_count_recorded(self):
        m = compute_metrics("ps", [1.0, 2.0], None, None, Q=1.5, n_failed=4)
        assert m.n_ok == 2 and m.n_failed == 4


class TestFeasibleMethods:
    def test_s1_allows_everything(self):
        assert "ps" in feasible_methods(SCENARIOS["s1"])
        assert "raking" in feasible_methods(SCENARIOS["s1"])

    def test_high_dim_drops_cell_methods(self):
        for sc in ("s2", "s3", "s4"):
            fm = feasible_methods(SCENARIOS[sc])
            assert "ps" not in fm and "raking" not in fm
            assert "bart" in fm and "sbart-p" in fm


def _toy_spec():
    return ScenarioSpec(id="toy", p=2, r=1,
                        outcome=LinearTerms(intercept=5.0, z_lin=((0, 1.0),),
                                            x_quad=((0, -4.0),)),
                        inclusion_logit=LinearTerms(intercept=0.0, z_lin=((0, 0.5),)),
                        N=400, n=80, noise_sd=1.0)


class TestRunStudy:
    def test_raw_study_aggregates(self):
        m = run_study(_toy_spec(), ("raw",), replicates=30, master_seed=21)
        agg = m.aggregates["raw"]
        assert agg.n_ok == 30 and agg.n_failed == 0
        assert abs(agg.bias) < 1.0
        assert m.scenario == "toy" and m.replicates == 30
        assert len(m.rows) == 30

    def test_determinism_and_jobs_invariance(self, tiny_cfg):
        spec = _toy_spec()
        a = run_study(spec, ("raw", "bart"), 4, 22, cfg=tiny_cfg, jobs=1)
        b = run_study(spec, ("raw", "bart"), 4, 22, cfg=tiny_cfg, jobs=2)
        assert a.to_json() == b.to_json()

    def test_method_subset_invariance(self, tiny_cfg):
        # dropping a method must not perturb the others' results
        spec = _toy_spec()
        full = run_study(spec, ("raw", "bart", "sbart"), 3, 23, cfg=tiny_cfg)
        sub = run_study(spec, ("bart",), 3, 23, cfg=tiny_cfg)
        full_rows = [r for r in full.rows if r[1] == "bart"]
        assert full_rows == list(sub.rows)

    def test_unknown_method(self):
        with pytest.raises(SchemaError):
            run_study(_toy_spec(), ("magic",), 2, 24)

    def test_replicates_validated(self):
        with pytest.raises(SchemaError):
            run_study(_toy_spec(), ("raw",), 0, 25)

    def test_bayes_rows_have_intervals(self, tiny_cfg):
        m = run_study(_toy_spec(), ("bart",), 2, 26, cfg=tiny_cfg)
        for rep, method, point, ci80, ci95, err in m.rows:
            assert err is None
            assert ci80[0] <= point <= ci80[1]
            assert ci95[0] <= ci80[0] and ci80[1] <= ci95[1]

    def test_failures_recorded_not_raised(self):
        # PS on a scenario whose cells can go empty: failed replicates are
        # recorded per row and excluded from the aggregates
        spec = ScenarioSpec(id="sparse", p=3, r=0,
                            outcome=LinearTerms(intercept=1.0),
                            inclusion_logit=LinearTerms(intercept=-2.0,
                                                        z_lin=((0, 4.0),)),
                            N=300, n=25, noise_sd=1.0)
        m = run_study(spec, ("raw", "ps"), 10, 27)
        assert m.aggregates["raw"].n_failed == 0
        ps = m.aggregates["ps"]
        assert ps.n_ok == 3 and ps.n_failed == 7
        for r in m.rows:
            if r[1] == "ps" and r[5] is not None:
                assert "EmptyCellError" in r[5]

    def test_all_failed_method_gets_nan_aggregate(self):
        spec = ScenarioSpec(id="sparse", p=4, r=1,
                            outcome=LinearTerms(intercept=1.0),
                            inclusion_logit=LinearTerms(intercept=-2.0,
                                                        z_lin=((0, 4.0),)),
                            N=300, n=30, noise_sd=1.0)
        m = run_study(spec, ("raw", "ps"), 5, 30)
        ps = m.aggregates["ps"]
        assert ps.n_ok == 0 and ps.n_failed == 5
        assert np.isnan(ps.bias) and np.isnan(ps.rmse)
        assert ps.coverage95 is None
        # the other method's aggregate is unaffected
        assert m.aggregates["raw"].n_ok == 5

    def test_regenerate_population(self):
        spec = _toy_spec()
        fixed = run_study(spec, ("raw",), 5, 28)
        varied = run_study(spec, ("raw",), 5, 28, regenerate_population=True)
        assert fixed.Q != varied.Q

    def test_csv_dump(self, tmp_path, tiny_cfg):
        m = run_study(_toy_spec(), ("raw", "bart"), 2, 29, cfg=tiny_cfg)
        out = tmp_path / "rows.csv"
        m.dump_csv(out)
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("replicate,method,point")
        assert len(lines) == 1 + 4
