"""Linear-Gaussian hidden Markov model: parameters, simulation, aggregation.

The model is

    x[t+1] = A x[t] + w,   w ~ N(0, Q)
    o[t]   = C x[t] + v,   v ~ N(0, R)
    x[1]   ~ N(pi, Pi)

shared by a population of independently evolving agents. Observations are
recorded per agent but consumed in aggregate: at each timestep the package
works with a Gaussian fit (mu_hat, P_hat) to the population's observations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussians import (
    MarginalTrajectory,
    NotPositiveDefinite,
    _freeze,
    max_asymmetry,
    spd_cholesky,
    symmetrize,
    TAU_SYM,
)


class InvalidModel(ValueError):
    """Model parameters violate an invariant; lists every violation."""

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = list(violations)
        msg = "; ".join(f"{field_}: {reason}" for field_, reason in self.violations)
        super().__init__(f"invalid model parameters: {msg}")


class DegenerateAggregate(ValueError):
    """A fitted observation covariance could not be repaired to SPD."""

    def __init__(self, timestep: int, detail: str = ""):
        self.timestep = timestep
        suffix = f" ({detail})" if detail else ""
        super().__init__(
            f"aggregate observation covariance at t={timestep} is not repairable to SPD{suffix}"
        )


@dataclass(frozen=True)
class GhmmParams:
    """Parameters (A, Q, C, R, pi, Pi) of a linear-Gaussian HMM."""

    A: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    R: np.ndarray
    pi: np.ndarray
    Pi: np.ndarray

    def __post_init__(self):
        for name in ("A", "Q", "C", "R", "Pi"):
            object.__setattr__(self, name, _freeze(np.atleast_2d(getattr(self, name))))
        object.__setattr__(self, "pi", _freeze(np.atleast_1d(np.asarray(self.pi, dtype=float))))

    @property
    def d_x(self) -> int:
        return self.pi.shape[0]

    @property
    def d_o(self) -> int:
        return self.C.shape[0]


def _check_spd(violations: list, name: str, m: np.ndarray, dim: int) -> None:
    if m.shape != (dim, dim):
        violations.append((name, f"expected shape {(dim, dim)}, got {m.shape}"))
        return
    if max_asymmetry(m) > TAU_SYM:
        violations.append((name, f"not symmetric (max asymmetry {max_asymmetry(m):.3e})"))
        return
    try:
        spd_cholesky(symmetrize(m))
    except NotPositiveDefinite:
        violations.append((name, "not positive definite"))


def validate(params: GhmmParams) -> GhmmParams:
    """Check all parameter invariants, raising ``InvalidModel`` on failure.

    Every violated invariant is reported, not just the first one found.
    """
    violations: list[tuple[str, str]] = []
    d_x = params.pi.shape[0]
    d_o = params.C.shape[0]
    if params.pi.ndim != 1 or d_x < 1:
        violations.append(("pi", f"expected a nonempty vector, got shape {params.pi.shape}"))
    if params.A.shape != (d_x, d_x):
        violations.append(("A", f"expected shape {(d_x, d_x)}, got {params.A.shape}"))
    if params.C.shape != (d_o, d_x):
        violations.append(("C", f"expected shape ({d_o}, {d_x}), got {params.C.shape}"))
    _check_spd(violations, "Q", params.Q, d_x)
    _check_spd(violations, "R", params.R, d_o)
    _check_spd(violations, "Pi", params.Pi, d_x)
    if violations:
        raise InvalidModel(violations)
    return params


def benchmark_model(delta_t: float = 0.05) -> GhmmParams:
    """Two-state damped rotation with a noisy scalar velocity observation.

    The standard benchmark configuration used throughout the tests and the
    experiment harness.
    """
    return GhmmParams(
        A=np.array([[1.0, delta_t], [-delta_t, 1.0 - 0.5 * delta_t]]),
        Q=delta_t * np.diag([0.1, 0.1]),
        C=np.array([[0.0, delta_t]]),
        R=delta_t * np.array([[0.7]]),
        pi=np.array([1.0, 0.0]),
        Pi=np.array([[1.0, 0.2], [0.2, 1.0]]),
    )


@dataclass(frozen=True)
class TrajectoryBundle:
    """Simulated hidden states and observations for a population of agents."""

    states: np.ndarray        # (M, T, d_x)
    observations: np.ndarray  # (M, T, d_o)
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "states", _freeze(self.states))
        object.__setattr__(self, "observations", _freeze(self.observations))

    @property
    def num_agents(self) -> int:
        return self.states.shape[0]

    @property
    def num_steps(self) -> int:
        return self.states.shape[1]


def simulate(params: GhmmParams, num_agents: int, num_steps: int, seed: int) -> TrajectoryBundle:
    """Draw ``num_agents`` independent trajectories of length ``num_steps``.

    Each agent gets its own spawned RNG stream, so the result is
    bit-reproducible for a given seed regardless of how the per-agent work
    is scheduled.
    """
    validate(params)
    if num_agents < 1 or num_steps < 1:
        raise ValueError(
            f"num_agents and num_steps must be >= 1, got {num_agents}, {num_steps}"
        )
    d_x, d_o = params.d_x, params.d_o
    L_Q = spd_cholesky(params.Q)
    L_R = spd_cholesky(params.R)
    L_Pi = spd_cholesky(params.Pi)

    z_init = np.empty((num_agents, d_x))
    z_proc = np.empty((num_agents, num_steps - 1, d_x))
    z_obs = np.empty((num_agents, num_steps, d_o))
    for m, child in enumerate(np.random.SeedSequence(seed).spawn(num_agents)):
        rng = np.random.default_rng(child)
        z_init[m] = rng.standard_normal(d_x)
        z_proc[m] = rng.standard_normal((num_steps - 1, d_x))
        z_obs[m] = rng.standard_normal((num_steps, d_o))

    states = np.empty((num_agents, num_steps, d_x))
    states[:, 0] = params.pi + z_init @ L_Pi.T
    for t in range(num_steps - 1):
        states[:, t + 1] = states[:, t] @ params.A.T + z_proc[:, t] @ L_Q.T
    observations = states @ params.C.T + z_obs @ L_R.T
    return TrajectoryBundle(states=states, observations=observations, seed=seed)


@dataclass(frozen=True)
class AggregateEntry:
    """Gaussian observation summary (mu_hat, P_hat) for one timestep."""

    mu_hat: np.ndarray
    P_hat: np.ndarray
    num_agents: int

    def __post_init__(self):
        object.__setattr__(self, "mu_hat", _freeze(np.atleast_1d(self.mu_hat)))
        object.__setattr__(self, "P_hat", _freeze(np.atleast_2d(self.P_hat)))


@dataclass(frozen=True)
class AggregateObservations:
    """Per-timestep fitted observation summaries for the whole horizon."""

    mu_hat: np.ndarray  # (T, d_o)
    P_hat: np.ndarray   # (T, d_o, d_o)
    num_agents: int

    def __post_init__(self):
        mu = np.asarray(self.mu_hat, dtype=float)
        P = np.asarray(self.P_hat, dtype=float)
        if mu.ndim != 2 or P.ndim != 3 or P.shape != (mu.shape[0], mu.shape[1], mu.shape[1]):
            raise ValueError(
                f"mu_hat must be (T, d_o) and P_hat (T, d_o, d_o); got {mu.shape}, {P.shape}"
            )
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(P))):
            raise ValueError("aggregate summaries must be finite")
        object.__setattr__(self, "mu_hat", _freeze(mu))
        object.__setattr__(self, "P_hat", _freeze(P))

    def __len__(self) -> int:
        return self.mu_hat.shape[0]

    @property
    def d_o(self) -> int:
        return self.mu_hat.shape[1]

    @property
    def single_agent(self) -> bool:
        return self.num_agents == 1

    def entry(self, t: int) -> AggregateEntry:
        return AggregateEntry(self.mu_hat[t], self.P_hat[t], self.num_agents)

    def entries(self) -> list[AggregateEntry]:
        return [self.entry(t) for t in range(len(self))]

    @classmethod
    def from_entries(cls, entries: "list[AggregateEntry] | tuple[AggregateEntry, ...]") -> "AggregateObservations":
        if not entries:
            raise ValueError("at least one aggregate entry required")
        num_agents = entries[0].num_agents
        for e in entries[1:]:
            if e.num_agents != num_agents:
                raise ValueError("aggregate entries disagree on the number of agents")
        return cls(
            mu_hat=np.stack([e.mu_hat for e in entries]),
            P_hat=np.stack([e.P_hat for e in entries]),
            num_agents=num_agents,
        )


def regularize_spd(m: np.ndarray, timestep: int | None = None) -> np.ndarray:
    """Return ``m`` if SPD, else add trace-scaled diagonal jitter once.

    Jitter is ``max(1e-9 * trace(m) / d, 1e-12)``. Raises
    ``DegenerateAggregate`` when the jittered matrix still fails to factor.
    """
    m = symmetrize(m)
    try:
        spd_cholesky(m)
        return m
    except NotPositiveDefinite:
        pass
    d = m.shape[0]
    jitter = max(1e-9 * float(np.trace(m)) / d, 1e-12)
    repaired = m + jitter * np.eye(d)
    try:
        spd_cholesky(repaired)
    except NotPositiveDefinite as exc:
        raise DegenerateAggregate(timestep if timestep is not None else -1, str(exc)) from exc
    return repaired


def fit_aggregate(bundle: TrajectoryBundle, params: GhmmParams | None = None) -> AggregateObservations:
    """Fit per-timestep Gaussian summaries to the recorded observations.

    For M >= 2 the summary is the sample mean and unbiased (M - 1 divisor)
    sample covariance, jitter-repaired to SPD when degenerate. For a single
    agent the stored covariance is the observation noise R (the summary is
    a point observation, and downstream inference treats it exactly), so
    ``params`` is required in that case.
    """
    M, T, d_o = bundle.observations.shape
    obs = bundle.observations
    if M == 1:
        if params is None:
            raise ValueError("fit_aggregate with a single agent requires model parameters for R")
        P_hat = np.repeat(symmetrize(np.asarray(params.R, dtype=float))[None], T, axis=0)
        return AggregateObservations(mu_hat=obs[0].copy(), P_hat=P_hat, num_agents=1)
    mu_hat = obs.mean(axis=0)
    P_hat = np.empty((T, d_o, d_o))
    centered = obs - mu_hat[None]
    for t in range(T):
        P_hat[t] = regularize_spd(centered[:, t].T @ centered[:, t] / (M - 1), timestep=t)
    return AggregateObservations(mu_hat=mu_hat, P_hat=P_hat, num_agents=M)


def prior_moments(params: GhmmParams, num_steps: int) -> MarginalTrajectory:
    """Unconditional per-timestep state moments under the model flow.

    mean[t+1] = A mean[t], cov[t+1] = A cov[t] A' + Q, from (pi, Pi).
    """
    d_x = params.d_x
    means = np.empty((num_steps, d_x))
    covs = np.empty((num_steps, d_x, d_x))
    means[0] = params.pi
    covs[0] = params.Pi
    for t in range(num_steps - 1):
        means[t + 1] = params.A @ means[t]
        covs[t + 1] = symmetrize(params.A @ covs[t] @ params.A.T + params.Q)
    return MarginalTrajectory(means=means, covs=covs)
