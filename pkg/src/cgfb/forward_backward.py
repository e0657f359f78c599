"""Fixed-point message passing for aggregate inference in the linear-Gaussian HMM.

Four message families live on the chain, all in information form:

    forward  (over x[t]): belief propagated from the past,
    backward (over x[t]): belief propagated from the future,
    upward   (over x[t]): correction from the timestep's aggregate observation,
    downward (over o[t]): the chain's own prediction of the observation.

One sweep updates them in a forward pass (for t = 1..T-1: upward at t-1,
forward at t, downward at t) followed by a backward pass (for t = T-2..0:
upward at t+1, backward at t, downward at t), iterated to a fixed point.
Converged state marginals are recovered from the forward+backward+upward
information sums.

Upward messages are density ratios: whenever the observed aggregate spread
exceeds the chain's predicted spread, their information matrix acquires
small negative eigenvalues. That is expected behaviour at finite population
sizes, so upward (and consequently backward) matrices are kept symmetric
but are not forced PSD; forward and downward matrices and all marginal
covariances are PSD by construction and are clamped against round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .gaussians import (
    CanonicalGaussian,
    MarginalTrajectory,
    MomentGaussian,
    NotPositiveDefinite,
    _chol_solve,
    psd_clamp,
    spd_inverse,
    symmetrize,
)
from .model import AggregateObservations, GhmmParams, regularize_spd, validate


class SingularInnerMatrix(RuntimeError):
    """An inner system of a message update failed to factor (degenerate product)."""

    def __init__(self, timestep: int, stage: str, detail: str = ""):
        self.timestep = timestep
        self.stage = stage
        suffix = f": {detail}" if detail else ""
        super().__init__(f"singular inner matrix in {stage} update at t={timestep}{suffix}")


class IndefiniteDeficit(RuntimeError):
    """The aggregate observation is less informative than the chain's prediction
    to the point that the upward update cannot be evaluated."""

    def __init__(self, timestep: int, min_eigenvalue: float):
        self.timestep = timestep
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"indefinite observation deficit at t={timestep} "
            f"(min eigenvalue {min_eigenvalue:.3e})"
        )


class MaxItersExceeded(RuntimeError):
    """The sweep budget ran out before the fixed point was reached.

    Carries the best-so-far state in ``result``.
    """

    def __init__(self, result: "CgfbResult"):
        self.result = result
        report = result.report
        super().__init__(
            f"no convergence within {report.sweeps} sweeps "
            f"(final residual {report.final_residual:.3e})"
        )


@dataclass(frozen=True)
class CgfbConfig:
    """Iteration controls: sweep budget, stopping tolerance, damping factor."""

    max_iters: int = 200
    conv_tol: float = 1e-9
    damping: float = 0.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.conv_tol > 0:
            raise ValueError(f"conv_tol must be > 0, got {self.conv_tol}")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError(f"damping must lie in [0, 1), got {self.damping}")


@dataclass(frozen=True)
class ConvergenceReport:
    """Per-sweep sup-norm parameter changes and the stopping outcome."""

    residuals: tuple[float, ...]
    converged: bool

    @property
    def sweeps(self) -> int:
        return len(self.residuals)

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else math.inf


class MessageSet:
    """Stacked information-form message parameters for a chain of length T."""

    __slots__ = (
        "fwd_info", "fwd_vec", "bwd_info", "bwd_vec",
        "up_info", "up_vec", "down_info", "down_vec",
    )

    def __init__(self, num_steps: int, d_x: int, d_o: int):
        self.fwd_info = np.zeros((num_steps, d_x, d_x))
        self.fwd_vec = np.zeros((num_steps, d_x))
        self.bwd_info = np.zeros((num_steps, d_x, d_x))
        self.bwd_vec = np.zeros((num_steps, d_x))
        self.up_info = np.zeros((num_steps, d_x, d_x))
        self.up_vec = np.zeros((num_steps, d_x))
        self.down_info = np.zeros((num_steps, d_o, d_o))
        self.down_vec = np.zeros((num_steps, d_o))

    @property
    def num_steps(self) -> int:
        return self.fwd_info.shape[0]

    @property
    def d_x(self) -> int:
        return self.fwd_vec.shape[1]

    @property
    def d_o(self) -> int:
        return self.down_vec.shape[1]

    def fwd(self, t: int) -> CanonicalGaussian:
        return CanonicalGaussian(self.fwd_info[t], self.fwd_vec[t])

    def bwd(self, t: int) -> CanonicalGaussian:
        return CanonicalGaussian(self.bwd_info[t], self.bwd_vec[t])

    def up(self, t: int) -> CanonicalGaussian:
        return CanonicalGaussian(self.up_info[t], self.up_vec[t])

    def down(self, t: int) -> CanonicalGaussian:
        return CanonicalGaussian(self.down_info[t], self.down_vec[t])

    def _arrays(self) -> tuple[np.ndarray, ...]:
        return (
            self.fwd_info, self.fwd_vec, self.bwd_info, self.bwd_vec,
            self.up_info, self.up_vec, self.down_info, self.down_vec,
        )

    def copy(self) -> "MessageSet":
        out = MessageSet(self.num_steps, self.d_x, self.d_o)
        for dst, src in zip(out._arrays(), self._arrays()):
            dst[...] = src
        return out

    @classmethod
    def initial(cls, params: GhmmParams, num_steps: int,
                first_forward: CanonicalGaussian | None = None) -> "MessageSet":
        """Flat messages everywhere except the forward chain.

        The forward entries are seeded with the noiseless propagation of the
        boundary density, which makes the very first forward pass behave
        like a pure prediction sweep.
        """
        msgs = cls(num_steps, params.d_x, params.d_o)
        if first_forward is None:
            lam0 = spd_inverse(params.Pi)
            eta0 = _chol_solve(params.Pi, params.pi)
        else:
            lam0 = first_forward.info_matrix
            eta0 = first_forward.info_vector
        msgs.fwd_info[0] = lam0
        msgs.fwd_vec[0] = eta0
        try:
            mean = _chol_solve(lam0, eta0)
            cov = spd_inverse(lam0)
        except NotPositiveDefinite:
            return msgs  # improper boundary: leave the rest of the chain flat
        for t in range(1, num_steps):
            mean = params.A @ mean
            cov = symmetrize(params.A @ cov @ params.A.T + params.Q)
            msgs.fwd_info[t] = spd_inverse(cov)
            msgs.fwd_vec[t] = _chol_solve(cov, mean)
        return msgs


class CgfbResult(NamedTuple):
    messages: MessageSet
    marginals: MarginalTrajectory | None
    report: ConvergenceReport


def _solve_symmetric(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a symmetric system, tolerating indefiniteness.

    The Cholesky path covers every proper-message regime; the dense
    fallback is needed by deficient-boundary configurations (notably the
    naive sliding window), whose inner matrices legitimately pass through
    indefinite territory on the way to a proper fixed point.
    """
    try:
        return _chol_solve(m, rhs)
    except NotPositiveDefinite:
        pass
    try:
        x = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"inner system is singular: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise NotPositiveDefinite("inner system is numerically singular")
    return x


class _ModelOps:
    """Per-run precomputed solver context for the message recursions."""

    __slots__ = (
        "A", "C", "R", "Qinv", "Rinv", "AT_Qinv", "AT_Qinv_A",
        "CT_Rinv", "CT_Rinv_C", "Pi_inv", "Pi_inv_pi", "d_x", "d_o",
    )

    def __init__(self, params: GhmmParams):
        self.A = params.A
        self.C = params.C
        self.R = params.R
        self.Qinv = spd_inverse(params.Q)
        self.Rinv = spd_inverse(params.R)
        self.AT_Qinv = params.A.T @ self.Qinv
        self.AT_Qinv_A = symmetrize(self.AT_Qinv @ params.A)
        self.CT_Rinv = params.C.T @ self.Rinv
        self.CT_Rinv_C = symmetrize(self.CT_Rinv @ params.C)
        self.Pi_inv = spd_inverse(params.Pi)
        self.Pi_inv_pi = _chol_solve(params.Pi, params.pi)
        self.d_x = params.d_x
        self.d_o = params.d_o


def _forward_raw(ops: _ModelOps, lam_prev: np.ndarray, eta_prev: np.ndarray):
    """Propagate the product belief at t-1 through the transition."""
    G = ops.AT_Qinv_A + lam_prev
    rhs = np.concatenate([ops.AT_Qinv, eta_prev[:, None]], axis=1)
    Y = _solve_symmetric(G, rhs)
    lam = symmetrize(ops.Qinv - ops.AT_Qinv.T @ Y[:, : ops.d_x])
    eta = ops.AT_Qinv.T @ Y[:, ops.d_x]
    return lam, eta


def _backward_raw(ops: _ModelOps, lam_next: np.ndarray, eta_next: np.ndarray):
    """Marginalize the next timestep's product belief back through the transition."""
    G = ops.Qinv + lam_next
    rhs = np.concatenate([lam_next @ ops.A, eta_next[:, None]], axis=1)
    Y = _solve_symmetric(G, rhs)
    lam = symmetrize(ops.AT_Qinv @ Y[:, : ops.d_x])
    eta = ops.AT_Qinv @ Y[:, ops.d_x]
    return lam, eta


def _downward_raw(ops: _ModelOps, lam_fb: np.ndarray, eta_fb: np.ndarray):
    """Predict the observation from the forward-backward state belief."""
    G = ops.CT_Rinv_C + lam_fb
    rhs = np.concatenate([ops.CT_Rinv, eta_fb[:, None]], axis=1)
    Y = _solve_symmetric(G, rhs)
    lam = symmetrize(ops.Rinv - ops.CT_Rinv.T @ Y[:, : ops.d_o])
    eta = ops.CT_Rinv.T @ Y[:, ops.d_o]
    return lam, eta


def _upward_raw(ops: _ModelOps, pinv: np.ndarray, pinv_mu: np.ndarray,
                lam_d: np.ndarray, eta_d: np.ndarray, timestep: int):
    """Correction message from the aggregate observation at one timestep.

    Evaluated through the form whose inner matrix is
    R^-1 + P_hat^-1 - down_info, which stays PD whenever the downward
    precision is below R^-1 - true in every proper-message regime even when
    the raw deficit P_hat^-1 - down_info is indefinite (observed spread
    larger than predicted spread). Raises ``IndefiniteDeficit`` only when
    that system is singular beyond repair.
    """
    deficit = pinv - lam_d
    G = ops.Rinv + deficit
    rhs = np.concatenate([deficit @ ops.C, (pinv_mu - eta_d)[:, None]], axis=1)
    try:
        Y = _solve_symmetric(G, rhs)
    except NotPositiveDefinite:
        jitter = max(1e-9 * abs(float(np.trace(G))) / ops.d_o, 1e-12)
        try:
            Y = _solve_symmetric(G + jitter * np.eye(ops.d_o), rhs)
        except NotPositiveDefinite:
            min_eig = float(np.linalg.eigvalsh(symmetrize(deficit))[0])
            raise IndefiniteDeficit(timestep, min_eig) from None
    lam = symmetrize(ops.CT_Rinv @ Y[:, : ops.d_x])
    eta = ops.CT_Rinv @ Y[:, ops.d_x]
    return lam, eta


def _upward_exact(ops: _ModelOps, obs: np.ndarray):
    """Single-agent correction: the observation likelihood itself."""
    return ops.CT_Rinv_C.copy(), ops.CT_Rinv @ obs


# ---------------------------------------------------------------------------
# Public single-message updates


def update_forward(params: GhmmParams, msgs: MessageSet, t: int) -> CanonicalGaussian:
    """Recompute the forward message at node ``t`` (t >= 1) from node t-1."""
    if not 1 <= t < msgs.num_steps:
        raise IndexError(f"forward update needs 1 <= t < {msgs.num_steps}, got {t}")
    ops = _ModelOps(validate(params))
    try:
        lam, eta = _forward_raw(
            ops,
            msgs.fwd_info[t - 1] + msgs.up_info[t - 1],
            msgs.fwd_vec[t - 1] + msgs.up_vec[t - 1],
        )
    except NotPositiveDefinite as exc:
        raise SingularInnerMatrix(t, "forward", str(exc)) from exc
    return CanonicalGaussian(lam, eta)


def update_backward(params: GhmmParams, msgs: MessageSet, t: int) -> CanonicalGaussian:
    """Recompute the backward message at node ``t`` (t <= T-2) from node t+1."""
    if not 0 <= t < msgs.num_steps - 1:
        raise IndexError(f"backward update needs 0 <= t < {msgs.num_steps - 1}, got {t}")
    ops = _ModelOps(validate(params))
    try:
        lam, eta = _backward_raw(
            ops,
            msgs.bwd_info[t + 1] + msgs.up_info[t + 1],
            msgs.bwd_vec[t + 1] + msgs.up_vec[t + 1],
        )
    except NotPositiveDefinite as exc:
        raise SingularInnerMatrix(t, "backward", str(exc)) from exc
    return CanonicalGaussian(lam, eta)


def update_downward(params: GhmmParams, msgs: MessageSet, t: int) -> CanonicalGaussian:
    """Recompute the observation-prediction message at node ``t``."""
    if not 0 <= t < msgs.num_steps:
        raise IndexError(f"downward update needs 0 <= t < {msgs.num_steps}, got {t}")
    ops = _ModelOps(validate(params))
    try:
        lam, eta = _downward_raw(
            ops,
            msgs.fwd_info[t] + msgs.bwd_info[t],
            msgs.fwd_vec[t] + msgs.bwd_vec[t],
        )
    except NotPositiveDefinite as exc:
        raise SingularInnerMatrix(t, "downward", str(exc)) from exc
    return CanonicalGaussian(lam, eta)


def update_upward(params: GhmmParams, msgs: MessageSet, agg: AggregateObservations,
                  t: int) -> CanonicalGaussian:
    """Recompute the observation-correction message at node ``t``."""
    if not 0 <= t < msgs.num_steps:
        raise IndexError(f"upward update needs 0 <= t < {msgs.num_steps}, got {t}")
    ops = _ModelOps(validate(params))
    if agg.single_agent:
        lam, eta = _upward_exact(ops, agg.mu_hat[t])
    else:
        pinv = spd_inverse(agg.P_hat[t])
        lam, eta = _upward_raw(ops, pinv, pinv @ agg.mu_hat[t],
                               msgs.down_info[t], msgs.down_vec[t], t)
    return CanonicalGaussian(lam, eta)


def forward_message(params: GhmmParams, prev_fwd: CanonicalGaussian,
                    prev_up: CanonicalGaussian) -> CanonicalGaussian:
    """One forward propagation from explicit predecessor messages.

    This is the same map as ``update_forward`` but parameterized directly,
    which is what the sliding-window filter uses to advance its carried
    prior past an evicted node.
    """
    ops = _ModelOps(validate(params))
    lam, eta = _forward_raw(
        ops,
        prev_fwd.info_matrix + prev_up.info_matrix,
        prev_fwd.info_vector + prev_up.info_vector,
    )
    return CanonicalGaussian(lam, eta)


# ---------------------------------------------------------------------------
# Full fixed-point iteration


def _sweep(ops: _ModelOps, msgs: MessageSet, pinv: np.ndarray | None,
           pinv_mu: np.ndarray | None, mu_hat: np.ndarray, single_agent: bool,
           damping: float) -> None:
    """One full forward+backward pass, updating ``msgs`` in place."""
    T = msgs.num_steps
    lam_f, eta_f = msgs.fwd_info, msgs.fwd_vec
    lam_b, eta_b = msgs.bwd_info, msgs.bwd_vec
    lam_u, eta_u = msgs.up_info, msgs.up_vec
    lam_d, eta_d = msgs.down_info, msgs.down_vec

    def up(t: int):
        if single_agent:
            return _upward_exact(ops, mu_hat[t])
        return _upward_raw(ops, pinv[t], pinv_mu[t], lam_d[t], eta_d[t], t)

    def blend(target_m, target_v, t, lam, eta):
        if damping > 0.0:
            lam = damping * target_m[t] + (1.0 - damping) * lam
            eta = damping * target_v[t] + (1.0 - damping) * eta
        target_m[t] = lam
        target_v[t] = eta

    def wrap(stage: str, t: int, fn, *args):
        try:
            return fn(*args)
        except NotPositiveDefinite as exc:
            raise SingularInnerMatrix(t, stage, str(exc)) from exc

    if T == 1:
        # No transitions: the downward prediction depends only on the pinned
        # boundary, so one downward-then-upward refresh reaches the fixed point.
        blend(lam_d, eta_d, 0, *wrap("downward", 0, _downward_raw, ops,
                                     lam_f[0] + lam_b[0], eta_f[0] + eta_b[0]))
        blend(lam_u, eta_u, 0, *wrap("upward", 0, up, 0))
        return

    for t in range(1, T):
        blend(lam_u, eta_u, t - 1, *wrap("upward", t - 1, up, t - 1))
        blend(lam_f, eta_f, t, *wrap("forward", t, _forward_raw, ops,
                                     lam_f[t - 1] + lam_u[t - 1],
                                     eta_f[t - 1] + eta_u[t - 1]))
        blend(lam_d, eta_d, t, *wrap("downward", t, _downward_raw, ops,
                                     lam_f[t] + lam_b[t], eta_f[t] + eta_b[t]))
    for t in range(T - 2, -1, -1):
        blend(lam_u, eta_u, t + 1, *wrap("upward", t + 1, up, t + 1))
        blend(lam_b, eta_b, t, *wrap("backward", t, _backward_raw, ops,
                                     lam_b[t + 1] + lam_u[t + 1],
                                     eta_b[t + 1] + eta_u[t + 1]))
        blend(lam_d, eta_d, t, *wrap("downward", t, _downward_raw, ops,
                                     lam_f[t] + lam_b[t], eta_f[t] + eta_b[t]))


def iterate_messages(params: GhmmParams, agg: AggregateObservations,
                     config: CgfbConfig | None = None, *,
                     first_forward: CanonicalGaussian | None = None,
                     initial: MessageSet | None = None) -> tuple[MessageSet, ConvergenceReport]:
    """Run sweeps until the sup-norm parameter change drops below tolerance.

    ``first_forward`` overrides the pinned boundary of the forward chain
    (defaults to the model's initial density); ``initial`` warm-starts the
    messages. Returns the message set and a report; never raises on budget
    exhaustion - the caller decides whether that is an error.
    """
    config = config or CgfbConfig()
    params = validate(params)
    T = len(agg)
    if T < 1:
        raise ValueError("at least one aggregate observation is required")
    if agg.d_o != params.d_o:
        raise ValueError(
            f"aggregate observation dimension {agg.d_o} != model d_o {params.d_o}"
        )
    ops = _ModelOps(params)
    if first_forward is None:
        first_forward = CanonicalGaussian(ops.Pi_inv, ops.Pi_inv_pi)
    if first_forward.dim != params.d_x:
        raise ValueError(
            f"boundary forward message dimension {first_forward.dim} != d_x {params.d_x}"
        )

    if initial is None:
        msgs = MessageSet.initial(params, T, first_forward=first_forward)
    else:
        if initial.num_steps != T:
            raise ValueError(f"warm-start message set has {initial.num_steps} steps, expected {T}")
        msgs = initial.copy()
    msgs.fwd_info[0] = first_forward.info_matrix
    msgs.fwd_vec[0] = first_forward.info_vector
    msgs.bwd_info[T - 1] = 0.0
    msgs.bwd_vec[T - 1] = 0.0

    single_agent = agg.single_agent
    if single_agent:
        pinv = pinv_mu = None
    else:
        # Externally supplied summaries get the same SPD repair as fitted ones.
        pinv = np.stack([spd_inverse(regularize_spd(agg.P_hat[t], t)) for t in range(T)])
        pinv_mu = np.einsum("tij,tj->ti", pinv, agg.mu_hat)

    residuals: list[float] = []
    converged = False
    previous = msgs.copy()
    for _ in range(config.max_iters):
        # Divergence shows up as overflow before the residual check catches it.
        with np.errstate(over="ignore", invalid="ignore"):
            _sweep(ops, msgs, pinv, pinv_mu, agg.mu_hat, single_agent, config.damping)
            residual = max(
                float(np.abs(new - old).max()) if new.size else 0.0
                for new, old in zip(msgs._arrays(), previous._arrays())
            )
        residuals.append(residual)
        if residual <= config.conv_tol:
            converged = True
            break
        if not math.isfinite(residual):
            break  # diverged: no point sweeping NaN/inf parameters further
        previous = msgs.copy()
    return msgs, ConvergenceReport(residuals=tuple(residuals), converged=converged)


def marginal_at(msgs: MessageSet, t: int) -> MomentGaussian:
    """State marginal at node ``t`` from the forward+backward+upward sum."""
    lam = symmetrize(msgs.fwd_info[t] + msgs.bwd_info[t] + msgs.up_info[t])
    eta = msgs.fwd_vec[t] + msgs.bwd_vec[t] + msgs.up_vec[t]
    try:
        cov = spd_inverse(lam)
        mean = _chol_solve(lam, eta)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(f"marginal at t={t} is improper: {exc}") from exc
    return MomentGaussian(mean, psd_clamp(cov))


def extract_marginals(msgs: MessageSet) -> MarginalTrajectory:
    """State marginals for every node of the chain."""
    T = msgs.num_steps
    means = np.empty((T, msgs.d_x))
    covs = np.empty((T, msgs.d_x, msgs.d_x))
    for t in range(T):
        g = marginal_at(msgs, t)
        means[t] = g.mean
        covs[t] = g.cov
    return MarginalTrajectory(means=means, covs=covs)


def run_cgfb(params: GhmmParams, agg: AggregateObservations,
             config: CgfbConfig | None = None) -> CgfbResult:
    """Full aggregate inference: iterate messages, then extract marginals.

    Raises ``MaxItersExceeded`` (carrying the best-so-far result) when the
    sweep budget is exhausted before reaching the fixed point.
    """
    msgs, report = iterate_messages(params, agg, config)
    if not report.converged:
        try:
            marginals = extract_marginals(msgs)
        except NotPositiveDefinite:
            marginals = None
        raise MaxItersExceeded(CgfbResult(msgs, marginals, report))
    return CgfbResult(msgs, extract_marginals(msgs), report)
