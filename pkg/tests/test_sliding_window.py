import numpy as np
import pytest

from cgfb import (
    AggregateObservations,
    CgfbConfig,
    InvalidWindow,
    fit_aggregate,
    kf_filter,
    run_cgfb,
    simulate,
    sw_filter,
    sw_init,
    sw_step,
    sw_step_naive,
)
from oracles import rel_dev


class TestInit:
    def test_rejects_zero_window(self, bench):
        with pytest.raises(InvalidWindow):
            sw_init(bench, 0)

    def test_prior_is_initial_density(self, bench):
        state = sw_init(bench, 20)
        np.testing.assert_allclose(state.prior.info_matrix, np.linalg.inv(bench.Pi),
                                   rtol=1e-12)
        np.testing.assert_allclose(state.prior.info_vector,
                                   np.linalg.solve(bench.Pi, bench.pi), rtol=1e-12)
        assert state.buffer == () and state.current_index == 0

    def test_buffer_capacity(self, bench):
        bundle = simulate(bench, 10, 5, seed=0)
        agg = fit_aggregate(bundle)
        state = sw_init(bench, 1)
        for t in range(5):
            state, _ = sw_step(bench, state, agg.entry(t))
            assert len(state.buffer) == 1


class TestExactnessBeforeSaturation:
    def test_matches_full_history_filtering(self, bench):
        horizon, window = 6, 8
        bundle = simulate(bench, 30, horizon, seed=3)
        agg = fit_aggregate(bundle)
        tight = CgfbConfig(max_iters=200, conv_tol=1e-13)
        state = sw_init(bench, window)
        for t in range(horizon):
            state, filtered = sw_step(bench, state, agg.entry(t), tight)
            prefix = AggregateObservations(agg.mu_hat[:t + 1], agg.P_hat[:t + 1],
                                           agg.num_agents)
            full = run_cgfb(bench, prefix, tight)
            np.testing.assert_allclose(filtered.mean, full.marginals.means[t], atol=1e-10)
            np.testing.assert_allclose(filtered.cov, full.marginals.covs[t], atol=1e-10)


class TestKalmanEquivalence:
    def test_unit_window_single_agent(self, bench):
        bundle = simulate(bench, 1, 100, seed=11)
        agg = fit_aggregate(bundle, bench)
        means, covs, _ = sw_filter(bench, agg, 1)
        filt_means, filt_covs, _, _, _ = kf_filter(bench, bundle.observations[0])
        for t in range(100):
            assert rel_dev(means[t], filt_means[t]) <= 1e-10
            assert rel_dev(covs[t], filt_covs[t]) <= 1e-10


class TestNaiveVariant:
    def test_identical_before_eviction(self, bench):
        bundle = simulate(bench, 20, 4, seed=5)
        agg = fit_aggregate(bundle)
        sp = sw_init(bench, 6)
        sn = sw_init(bench, 6)
        for t in range(4):
            sp, gp = sw_step(bench, sp, agg.entry(t))
            sn, gn = sw_step_naive(bench, sn, agg.entry(t))
            np.testing.assert_array_equal(gp.mean, gn.mean)
            np.testing.assert_array_equal(gp.cov, gn.cov)

    def test_flat_prior_after_eviction(self, bench):
        bundle = simulate(bench, 20, 5, seed=5)
        agg = fit_aggregate(bundle)
        state = sw_init(bench, 3)
        for t in range(5):
            state, _ = sw_step_naive(bench, state, agg.entry(t))
        np.testing.assert_array_equal(state.prior.info_matrix, np.zeros((2, 2)))
        np.testing.assert_array_equal(state.prior.info_vector, np.zeros(2))

    def test_full_window_matches_with_prior(self, bench):
        # A window spanning the whole stream never evicts, so both variants
        # remain the same computation.
        horizon = 12
        bundle = simulate(bench, 25, horizon, seed=6)
        agg = fit_aggregate(bundle)
        mp, cp, _ = sw_filter(bench, agg, horizon)
        mn, cn, _ = sw_filter(bench, agg, horizon, naive=True)
        np.testing.assert_array_equal(mp, mn)
        np.testing.assert_array_equal(cp, cn)

    def test_variants_converge_as_window_grows(self, bench):
        horizon = 40
        bundle = simulate(bench, 40, horizon, seed=7)
        agg = fit_aggregate(bundle)
        gaps = []
        for window in (10, 25, 40):
            mp, _, _ = sw_filter(bench, agg, window)
            mn, _, _ = sw_filter(bench, agg, window, naive=True)
            gaps.append(np.abs(mp - mn).max())
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] == 0.0


class TestErrorTagging:
    def test_absolute_time_in_errors(self, bench):
        from cgfb import DegenerateAggregate
        from cgfb.model import AggregateEntry

        bundle = simulate(bench, 10, 8, seed=8)
        agg = fit_aggregate(bundle)
        state = sw_init(bench, 3)
        for t in range(6):
            state, _ = sw_step(bench, state, agg.entry(t))
        # An irreparable summary arriving at absolute time 6 (window slot 2).
        bad = AggregateEntry(mu_hat=np.array([0.0]), P_hat=np.array([[-1.0]]),
                             num_agents=10)
        with pytest.raises(DegenerateAggregate) as exc:
            sw_step(bench, state, bad)
        assert exc.value.timestep == 6

    def test_non_finite_summaries_rejected(self):
        with pytest.raises(ValueError):
            AggregateObservations(mu_hat=np.array([[np.nan]]),
                                  P_hat=np.array([[[1.0]]]), num_agents=10)


class TestAgentConsistency:
    def test_mixed_agent_counts_rejected(self, bench):
        bundle = simulate(bench, 10, 3, seed=9)
        agg = fit_aggregate(bundle)
        state = sw_init(bench, 4)
        state, _ = sw_step(bench, state, agg.entry(0))
        single = simulate(bench, 1, 3, seed=9)
        bad_entry = fit_aggregate(single, bench).entry(1)
        with pytest.raises(ValueError):
            sw_step(bench, state, bad_entry)


class TestSweepBudget:
    def test_budget_exhaustion_keeps_best(self, bench):
        # One sweep per step cannot converge, but the stream must still
        # produce usable filtered densities.
        bundle = simulate(bench, 15, 10, seed=10)
        agg = fit_aggregate(bundle)
        tight_budget = CgfbConfig(max_iters=1, conv_tol=1e-15)
        means, covs, sweeps = sw_filter(bench, agg, 4, tight_budget)
        assert np.all(np.isfinite(means)) and np.all(np.isfinite(covs))
        assert set(sweeps.tolist()) == {1}
