"""Classical Kalman filtering, RTS smoothing, and exact ground-truth engines.

These are the single-agent references: the aggregate message-passing
routines must reduce to them when the population has one member. The
``joint_oracle`` builds the dense joint Gaussian over all states and
observations and conditions it directly, providing a brute-force cross-check
for both the filter/smoother and the message-passing code paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussians import (
    MarginalTrajectory,
    NotPositiveDefinite,
    _chol_solve,
    _freeze,
    psd_clamp,
    symmetrize,
)
from .model import GhmmParams, TrajectoryBundle, validate

# Largest joint dimension T * (d_x + d_o) the dense oracle will build.
JOINT_ORACLE_CAP = 512


class SingularInnovation(RuntimeError):
    """The innovation covariance R + C P C' failed to factor."""

    def __init__(self, detail: str = ""):
        super().__init__(f"innovation covariance is not positive definite{': ' + detail if detail else ''}")


class DimensionCapExceeded(ValueError):
    """The requested dense joint Gaussian would exceed the tractability cap."""


@dataclass(frozen=True)
class KalmanState:
    """Filtered mean/covariance plus the gain used in the last correction."""

    mean: np.ndarray
    cov: np.ndarray
    gain: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _freeze(self.mean))
        object.__setattr__(self, "cov", _freeze(self.cov))
        object.__setattr__(self, "gain", _freeze(self.gain))


@dataclass(frozen=True)
class KfAggregateSummary:
    """Mixture mean and covariance of a bank of per-agent filters."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _freeze(self.mean))
        object.__setattr__(self, "cov", _freeze(self.cov))


@dataclass(frozen=True)
class KfAggregateTrajectory:
    """Per-timestep mixture summaries of M independent filters."""

    means: np.ndarray  # (T, d_x)
    covs: np.ndarray   # (T, d_x, d_x)

    def __post_init__(self):
        object.__setattr__(self, "means", _freeze(self.means))
        object.__setattr__(self, "covs", _freeze(self.covs))

    def __len__(self) -> int:
        return self.means.shape[0]

    def summary_at(self, t: int) -> KfAggregateSummary:
        return KfAggregateSummary(self.means[t], self.covs[t])

    @property
    def final(self) -> KfAggregateSummary:
        return self.summary_at(len(self) - 1)

    def as_marginals(self) -> MarginalTrajectory:
        return MarginalTrajectory(means=self.means, covs=self.covs)


def kf_predict(params: GhmmParams, state: KalmanState) -> tuple[np.ndarray, np.ndarray]:
    """Propagate a filtered state one step: (A mu, Q + A P A')."""
    mean_pred = params.A @ state.mean
    cov_pred = symmetrize(params.A @ state.cov @ params.A.T + params.Q)
    return mean_pred, cov_pred


def kf_correct(params: GhmmParams, mean_pred: np.ndarray, cov_pred: np.ndarray,
               obs: np.ndarray) -> KalmanState:
    """Condition a predicted state on one observation.

    The gain is K = P C' (R + C P C')^-1; the covariance is computed in
    Joseph form, which is algebraically (I - K C) P but keeps the result
    symmetric PSD under round-off.
    """
    obs = np.atleast_1d(np.asarray(obs, dtype=float))
    C = params.C
    innovation_cov = symmetrize(params.R + C @ cov_pred @ C.T)
    try:
        gain = _chol_solve(innovation_cov, C @ cov_pred).T
    except NotPositiveDefinite as exc:
        raise SingularInnovation(str(exc)) from exc
    mean = mean_pred + gain @ (obs - C @ mean_pred)
    i_kc = np.eye(params.d_x) - gain @ C
    cov = symmetrize(i_kc @ cov_pred @ i_kc.T + gain @ params.R @ gain.T)
    return KalmanState(mean=mean, cov=cov, gain=gain)


def kf_filter(params: GhmmParams, observations: np.ndarray):
    """Run the filter over a (T, d_o) observation sequence.

    Returns (filtered_means, filtered_covs, predicted_means, predicted_covs,
    gains). The first "prediction" is the initial density itself.
    """
    params = validate(params)
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    T = observations.shape[0]
    d_x = params.d_x
    filt_means = np.empty((T, d_x))
    filt_covs = np.empty((T, d_x, d_x))
    pred_means = np.empty((T, d_x))
    pred_covs = np.empty((T, d_x, d_x))
    gains = np.empty((T, d_x, params.d_o))

    mean_pred, cov_pred = params.pi, params.Pi
    for t in range(T):
        pred_means[t] = mean_pred
        pred_covs[t] = cov_pred
        state = kf_correct(params, mean_pred, cov_pred, observations[t])
        filt_means[t] = state.mean
        filt_covs[t] = state.cov
        gains[t] = state.gain
        if t < T - 1:
            mean_pred, cov_pred = kf_predict(params, state)
    return filt_means, filt_covs, pred_means, pred_covs, gains


def rts_smooth(params: GhmmParams, observations: np.ndarray) -> MarginalTrajectory:
    """Fixed-interval smoothing marginals p(x[t] | all observations).

    Backward recursion with gain G[t] = P[t|t] A' P[t+1|t]^-1 applied to the
    stored filter pass.
    """
    filt_means, filt_covs, _, _, _ = kf_filter(params, observations)
    T = filt_means.shape[0]
    means = filt_means.copy()
    covs = filt_covs.copy()
    for t in range(T - 2, -1, -1):
        mean_pred = params.A @ filt_means[t]
        cov_pred = symmetrize(params.A @ filt_covs[t] @ params.A.T + params.Q)
        gain = _chol_solve(cov_pred, params.A @ filt_covs[t]).T
        means[t] = filt_means[t] + gain @ (means[t + 1] - mean_pred)
        covs[t] = psd_clamp(symmetrize(
            filt_covs[t] + gain @ (covs[t + 1] - cov_pred) @ gain.T
        ))
    return MarginalTrajectory(means=means, covs=covs)


def joint_oracle(params: GhmmParams, observations: np.ndarray) -> MarginalTrajectory:
    """Exact smoothing marginals by dense joint-Gaussian conditioning.

    Assembles the full covariance of (x[0..T-1], o[0..T-1]) from the chain
    structure and conditions the state block on the observed block. Only
    meant for small instances; guarded by ``JOINT_ORACLE_CAP``.
    """
    params = validate(params)
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    T = observations.shape[0]
    d_x, d_o = params.d_x, params.d_o
    if T * (d_x + d_o) > JOINT_ORACLE_CAP:
        raise DimensionCapExceeded(
            f"joint dimension {T * (d_x + d_o)} exceeds cap {JOINT_ORACLE_CAP}"
        )

    mean_x = np.empty((T, d_x))
    mean_x[0] = params.pi
    for t in range(1, T):
        mean_x[t] = params.A @ mean_x[t - 1]

    # Blockwise state covariance: diagonal by the noise recursion, off-diagonal
    # by repeated right-multiplication with A'.
    cov_xx = np.zeros((T, T, d_x, d_x))
    cov_xx[0, 0] = params.Pi
    for t in range(1, T):
        cov_xx[t, t] = symmetrize(params.A @ cov_xx[t - 1, t - 1] @ params.A.T + params.Q)
    for s in range(T):
        for t in range(s + 1, T):
            cov_xx[s, t] = cov_xx[s, t - 1] @ params.A.T
            cov_xx[t, s] = cov_xx[s, t].T
    big_xx = cov_xx.transpose(0, 2, 1, 3).reshape(T * d_x, T * d_x)

    obs_map = np.kron(np.eye(T), params.C)
    big_oo = symmetrize(obs_map @ big_xx @ obs_map.T + np.kron(np.eye(T), params.R))
    big_xo = big_xx @ obs_map.T

    resid = observations.reshape(-1) - obs_map @ mean_x.reshape(-1)
    post_mean = mean_x.reshape(-1) + big_xo @ _chol_solve(big_oo, resid)
    post_cov = big_xx - big_xo @ _chol_solve(big_oo, big_xo.T)

    means = post_mean.reshape(T, d_x)
    covs = np.empty((T, d_x, d_x))
    for t in range(T):
        block = post_cov[t * d_x:(t + 1) * d_x, t * d_x:(t + 1) * d_x]
        covs[t] = psd_clamp(symmetrize(block))
    return MarginalTrajectory(means=means, covs=covs)


def mixture_moments(means: np.ndarray, covs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Moments of an equal-weight Gaussian mixture.

    mean = average of component means; covariance = average of component
    covariances plus the spread of the means.
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    mix_mean = means.mean(axis=0)
    dev = means - mix_mean
    mix_cov = covs.mean(axis=0) + np.einsum("mi,mj->ij", dev, dev) / means.shape[0]
    return mix_mean, symmetrize(mix_cov)


def kf_aggregate(params: GhmmParams, bundle: TrajectoryBundle) -> KfAggregateTrajectory:
    """Mixture of M independent filters run with known agent associations.

    Every agent's observation stream is filtered separately; the summaries
    are the per-timestep mixture moments of the M filter posteriors.
    """
    params = validate(params)
    M, T, _ = bundle.observations.shape
    all_means = np.empty((M, T, params.d_x))
    all_covs = np.empty((M, T, params.d_x, params.d_x))
    for m in range(M):
        filt_means, filt_covs, _, _, _ = kf_filter(params, bundle.observations[m])
        all_means[m] = filt_means
        all_covs[m] = filt_covs
    means = np.empty((T, params.d_x))
    covs = np.empty((T, params.d_x, params.d_x))
    for t in range(T):
        means[t], covs[t] = mixture_moments(all_means[:, t], all_covs[:, t])
    return KfAggregateTrajectory(means=means, covs=covs)
