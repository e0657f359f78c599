import numpy as np
import pytest

from cgfb import (
    DimensionCapExceeded,
    GhmmParams,
    KalmanState,
    MessageSet,
    SingularInnovation,
    fit_aggregate,
    joint_oracle,
    kf_aggregate,
    kf_correct,
    kf_filter,
    kf_predict,
    mixture_moments,
    rts_smooth,
    run_cgfb,
    simulate,
    to_moment,
    update_forward,
)
from conftest import random_model, random_spd
from oracles import rel_dev


def info_form_correct(params, mean_pred, cov_pred, obs):
    """Information-form correction: the independent algebraic route."""
    p_inv = np.linalg.inv(cov_pred)
    r_inv = np.linalg.inv(params.R)
    cov = np.linalg.inv(p_inv + params.C.T @ r_inv @ params.C)
    mean = cov @ (p_inv @ mean_pred + params.C.T @ r_inv @ obs)
    return mean, cov


class TestPredict:
    def test_identity_near_noiseless(self):
        eps = 1e-14
        params = GhmmParams(A=np.eye(2), Q=eps * np.eye(2), C=np.eye(2),
                            R=np.eye(2), pi=np.zeros(2), Pi=np.eye(2))
        state = KalmanState(mean=np.array([1.0, 2.0]), cov=np.eye(2),
                            gain=np.zeros((2, 2)))
        mean, cov = kf_predict(params, state)
        np.testing.assert_array_equal(mean, state.mean)
        np.testing.assert_allclose(cov, np.eye(2), atol=1e-12)

    def test_benchmark_first_step(self, bench):
        state = KalmanState(mean=bench.pi, cov=bench.Pi, gain=np.zeros((2, 1)))
        mean, cov = kf_predict(bench, state)
        np.testing.assert_allclose(mean, [1.0, -0.05], atol=1e-12)
        np.testing.assert_allclose(cov, 0.005 * np.eye(2) + bench.A @ bench.Pi @ bench.A.T,
                                   atol=1e-12)

    def test_matches_forward_message_moments(self, bench):
        # With a flat upward message the forward information update is exactly
        # the moment prediction.
        msgs = MessageSet.initial(bench, 2)
        g = to_moment(update_forward(bench, msgs, 1))
        state = KalmanState(mean=bench.pi, cov=bench.Pi, gain=np.zeros((2, 1)))
        mean, cov = kf_predict(bench, state)
        np.testing.assert_allclose(g.mean, mean, rtol=1e-10)
        np.testing.assert_allclose(g.cov, cov, rtol=1e-10)


class TestCorrect:
    def test_uninformative_observation(self, rng):
        params = GhmmParams(A=np.eye(2), Q=np.eye(2), C=np.zeros((1, 2)),
                            R=np.eye(1), pi=np.zeros(2), Pi=np.eye(2))
        cov_pred = random_spd(rng, 2)
        mean_pred = rng.normal(size=2)
        state = kf_correct(params, mean_pred, cov_pred, np.array([3.0]))
        np.testing.assert_array_equal(state.gain, np.zeros((2, 1)))
        np.testing.assert_allclose(state.mean, mean_pred)
        np.testing.assert_allclose(state.cov, cov_pred, rtol=1e-12)

    def test_scalar_hand_case(self):
        params = GhmmParams(A=[[1.0]], Q=[[1.0]], C=[[1.0]], R=[[1.0]],
                            pi=[0.0], Pi=[[1.0]])
        state = kf_correct(params, np.array([0.0]), np.array([[1.0]]), np.array([2.0]))
        np.testing.assert_allclose(state.gain, [[0.5]])
        np.testing.assert_allclose(state.mean, [1.0])
        np.testing.assert_allclose(state.cov, [[0.5]])

    def test_information_form_identity(self, rng):
        for _ in range(200):
            params = random_model(rng)
            cov_pred = random_spd(rng, params.d_x)
            mean_pred = rng.normal(size=params.d_x)
            obs = rng.normal(size=params.d_o)
            state = kf_correct(params, mean_pred, cov_pred, obs)
            mean, cov = info_form_correct(params, mean_pred, cov_pred, obs)
            assert rel_dev(state.mean, mean) <= 1e-10
            assert rel_dev(state.cov, cov) <= 1e-10

    def test_joseph_equals_plain_form(self, rng):
        for _ in range(100):
            params = random_model(rng)
            cov_pred = random_spd(rng, params.d_x)
            obs = rng.normal(size=params.d_o)
            state = kf_correct(params, rng.normal(size=params.d_x), cov_pred, obs)
            plain = (np.eye(params.d_x) - state.gain @ params.C) @ cov_pred
            assert rel_dev(state.cov, 0.5 * (plain + plain.T)) <= 1e-10

    def test_singular_innovation(self):
        params = GhmmParams(A=[[1.0]], Q=[[1.0]], C=[[1.0]], R=[[1.0]],
                            pi=[0.0], Pi=[[1.0]])
        bad = GhmmParams(A=params.A, Q=params.Q, C=params.C, R=[[-2.0]],
                         pi=params.pi, Pi=params.Pi)
        with pytest.raises(SingularInnovation):
            kf_correct(bad, np.array([0.0]), np.array([[1.0]]), np.array([1.0]))


class TestRtsSmooth:
    def test_single_step_equals_filter(self, bench):
        bundle = simulate(bench, 1, 1, seed=1)
        smoothed = rts_smooth(bench, bundle.observations[0])
        filt_means, filt_covs, _, _, _ = kf_filter(bench, bundle.observations[0])
        np.testing.assert_allclose(smoothed.means, filt_means)
        np.testing.assert_allclose(smoothed.covs, filt_covs)

    def test_matches_joint_oracle(self, rng):
        for _ in range(25):
            params = random_model(rng)
            horizon = int(rng.integers(2, 9))
            bundle = simulate(params, 1, horizon, seed=int(rng.integers(0, 1000)))
            smoothed = rts_smooth(params, bundle.observations[0])
            oracle = joint_oracle(params, bundle.observations[0])
            assert rel_dev(smoothed.means, oracle.means) <= 1e-9
            assert rel_dev(smoothed.covs, oracle.covs) <= 1e-9

    def test_matches_converged_messages(self, bench):
        bundle = simulate(bench, 1, 10, seed=5)
        agg = fit_aggregate(bundle, bench)
        result = run_cgfb(bench, agg)
        smoothed = rts_smooth(bench, bundle.observations[0])
        assert rel_dev(result.marginals.means, smoothed.means) <= 1e-6
        assert rel_dev(result.marginals.covs, smoothed.covs) <= 1e-6


class TestJointOracle:
    def test_single_step_is_correction(self, bench, rng):
        obs = rng.normal(size=(1, 1))
        oracle = joint_oracle(bench, obs)
        state = kf_correct(bench, bench.pi, bench.Pi, obs[0])
        np.testing.assert_allclose(oracle.means[0], state.mean, rtol=1e-10)
        np.testing.assert_allclose(oracle.covs[0], state.cov, rtol=1e-10)

    def test_noiseless_limit_least_squares(self, rng):
        # With vanishing observation noise the posterior mean approaches the
        # hard-constrained reconstruction x = mu + S G'(G S G')^-1 (o - G mu).
        eps = 1e-10
        base = random_model(rng, d_x=2, d_o=1)
        params = GhmmParams(A=base.A, Q=base.Q, C=base.C, R=eps * np.eye(1),
                            pi=base.pi, Pi=base.Pi)
        horizon = 4
        bundle = simulate(params, 1, horizon, seed=3)
        obs = bundle.observations[0]
        oracle = joint_oracle(params, obs)

        mean_x = np.empty((horizon, 2))
        mean_x[0] = params.pi
        cov = np.zeros((horizon, horizon, 2, 2))
        cov[0, 0] = params.Pi
        for t in range(1, horizon):
            mean_x[t] = params.A @ mean_x[t - 1]
            cov[t, t] = params.A @ cov[t - 1, t - 1] @ params.A.T + params.Q
        for s in range(horizon):
            for t in range(s + 1, horizon):
                cov[s, t] = cov[s, t - 1] @ params.A.T
                cov[t, s] = cov[s, t].T
        big = cov.transpose(0, 2, 1, 3).reshape(2 * horizon, 2 * horizon)
        G = np.kron(np.eye(horizon), params.C)
        constrained = mean_x.reshape(-1) + big @ G.T @ np.linalg.solve(
            G @ big @ G.T, obs.reshape(-1) - G @ mean_x.reshape(-1))
        assert rel_dev(oracle.means, constrained.reshape(horizon, 2)) <= 1e-5

    def test_dimension_cap(self, bench):
        with pytest.raises(DimensionCapExceeded):
            joint_oracle(bench, np.zeros((200, 1)))


class TestKfAggregate:
    def test_single_agent_equals_filter(self, bench):
        bundle = simulate(bench, 1, 12, seed=7)
        traj = kf_aggregate(bench, bundle)
        filt_means, filt_covs, _, _, _ = kf_filter(bench, bundle.observations[0])
        np.testing.assert_allclose(traj.means, filt_means, rtol=1e-12)
        np.testing.assert_allclose(traj.covs, filt_covs, rtol=1e-12)

    def test_identical_observations_zero_spread(self, bench):
        bundle = simulate(bench, 3, 6, seed=8)
        obs = np.repeat(bundle.observations[:1], 3, axis=0)
        fake = type(bundle)(states=bundle.states, observations=obs, seed=8)
        traj = kf_aggregate(bench, fake)
        filt_means, filt_covs, _, _, _ = kf_filter(bench, obs[0])
        np.testing.assert_allclose(traj.means, filt_means, rtol=1e-12)
        np.testing.assert_allclose(traj.covs, filt_covs, rtol=1e-10)

    def test_mixture_hand_case(self):
        mean, cov = mixture_moments(np.array([[0.0], [2.0]]),
                                    np.array([[[1.0]], [[1.0]]]))
        np.testing.assert_allclose(mean, [1.0])
        np.testing.assert_allclose(cov, [[2.0]])

    def test_final_summary(self, bench):
        bundle = simulate(bench, 5, 4, seed=9)
        traj = kf_aggregate(bench, bundle)
        assert len(traj) == 4
        summary = traj.final
        np.testing.assert_array_equal(summary.mean, traj.means[-1])
        np.testing.assert_array_equal(summary.cov, traj.covs[-1])
