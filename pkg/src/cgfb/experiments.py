"""Benchmark harness: simulate, infer, score against ground truth, and time.

Ground truth for the aggregate estimates is, by default, the per-timestep
sample mean and (unbiased) sample covariance of the simulated hidden states
across the population - the quantity aggregate inference is trying to
recover. With a single agent that sample covariance does not exist, so the
exact single-agent smoother posterior is used instead. The analytic
alternative (the model's unconditional moment flow) is available via
``truth="analytic"``.

The error metric is the quadratic error averaged over timesteps: squared
Euclidean norm for means, squared Frobenius norm for covariances.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .forward_backward import CgfbConfig, run_cgfb
from .gaussians import MarginalTrajectory
from .kalman import kf_aggregate, rts_smooth
from .model import (
    AggregateObservations,
    GhmmParams,
    TrajectoryBundle,
    fit_aggregate,
    prior_moments,
    simulate,
    validate,
)
from .sliding_window import DEFAULT_SW_CONFIG, sw_filter, sw_init, sw_step, sw_step_naive

ALGORITHMS = ("cgfb", "sw_cgfb", "sw_naive", "kf_aggregate")
TRUTHS = ("sample", "analytic")
METRICS = ("mean_err", "cov_err", "runtime")


class LengthMismatch(ValueError):
    """Estimate and truth trajectories disagree on horizon length."""


class ExperimentFailure(RuntimeError):
    """A stage of an experiment run failed; carries seed and stage context.

    The underlying error is chained as ``__cause__``.
    """

    def __init__(self, seed: int, stage: str, cause: Exception):
        self.seed = seed
        self.stage = stage
        super().__init__(f"stage '{stage}' failed for seed {seed}: {cause}")


@dataclass(frozen=True)
class MetricRow:
    """One scored run (or timestep): quadratic errors plus wall time."""

    seed: int | None
    t: int | str
    mean_sq_err: float
    cov_sq_err: float
    wall_ms: float = float("nan")


@dataclass(frozen=True)
class TimingRow:
    t: int
    baseline_ms: float
    sw_ms: float


@dataclass(frozen=True)
class ExperimentSpec:
    """A reproducible experiment: model, population, horizon, algorithm."""

    model: GhmmParams | str | Path
    num_agents: int
    num_steps: int
    seeds: tuple[int, ...]
    algorithm: str
    window: int | None = None
    metrics: frozenset[str] = frozenset(METRICS)
    truth: str = "sample"
    config: CgfbConfig | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        sliding = self.algorithm in ("sw_cgfb", "sw_naive")
        if sliding and self.window is None:
            raise ValueError(f"algorithm {self.algorithm!r} requires a window length")
        if not sliding and self.window is not None:
            raise ValueError(f"algorithm {self.algorithm!r} does not take a window length")
        if self.truth not in TRUTHS:
            raise ValueError(f"unknown truth {self.truth!r}; choose from {TRUTHS}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.num_agents < 1 or self.num_steps < 1:
            raise ValueError("num_agents and num_steps must be >= 1")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}; choose from {METRICS}")


def resolve_model(model: GhmmParams | str | Path) -> GhmmParams:
    if isinstance(model, GhmmParams):
        return validate(model)
    from .formats import load_model  # deferred: formats imports model types

    return validate(load_model(model))


def compute_metrics(estimates: MarginalTrajectory, truth: MarginalTrajectory,
                    per_timestep: bool = False, seed: int | None = None):
    """Quadratic errors of an estimated trajectory against a reference.

    Returns the time-averaged ``MetricRow`` (``t="avg"``), or the per-t rows
    followed by the average when ``per_timestep`` is set.
    """
    if len(estimates) != len(truth):
        raise LengthMismatch(
            f"estimates have {len(estimates)} steps, truth has {len(truth)}"
        )
    mean_errs = np.sum((estimates.means - truth.means) ** 2, axis=1)
    cov_errs = np.sum((estimates.covs - truth.covs) ** 2, axis=(1, 2))
    avg = MetricRow(seed=seed, t="avg",
                    mean_sq_err=float(mean_errs.mean()),
                    cov_sq_err=float(cov_errs.mean()))
    if not per_timestep:
        return avg
    rows = [
        MetricRow(seed=seed, t=t + 1, mean_sq_err=float(mean_errs[t]),
                  cov_sq_err=float(cov_errs[t]))
        for t in range(len(estimates))
    ]
    return rows + [avg]


def sample_truth(bundle: TrajectoryBundle) -> MarginalTrajectory:
    """Sample mean and unbiased sample covariance of the hidden states."""
    M, T, d_x = bundle.states.shape
    if M < 2:
        raise ValueError("sample ground truth needs at least two agents")
    means = bundle.states.mean(axis=0)
    centered = bundle.states - means[None]
    covs = np.einsum("mti,mtj->tij", centered, centered) / (M - 1)
    return MarginalTrajectory(means=means, covs=covs)


def ground_truth(params: GhmmParams, bundle: TrajectoryBundle, truth: str) -> MarginalTrajectory:
    if truth == "analytic":
        return prior_moments(params, bundle.num_steps)
    if bundle.num_agents == 1:
        # No cross-agent spread to estimate: the exact smoother posterior is
        # the reference the single-agent reductions are judged against.
        return rts_smooth(params, bundle.observations[0])
    return sample_truth(bundle)


def _run_algorithm(params: GhmmParams, bundle: TrajectoryBundle,
                   spec: ExperimentSpec) -> tuple[MarginalTrajectory, object]:
    """Returns (estimated trajectory, auxiliary result) for one seed."""
    if spec.algorithm == "kf_aggregate":
        traj = kf_aggregate(params, bundle)
        return traj.as_marginals(), None
    agg = fit_aggregate(bundle, params)
    if spec.algorithm == "cgfb":
        result = run_cgfb(params, agg, spec.config)
        return result.marginals, result.report
    naive = spec.algorithm == "sw_naive"
    config = spec.config or DEFAULT_SW_CONFIG
    means, covs, sweeps = sw_filter(params, agg, spec.window, config, naive=naive)
    return MarginalTrajectory(means=means, covs=covs), sweeps


def run_experiment(spec: ExperimentSpec, collect_reports: dict | None = None) -> list[MetricRow]:
    """Score the spec's algorithm against ground truth for every seed.

    Rows are deterministic given the spec apart from the wall-time column.
    ``collect_reports`` (seed -> auxiliary result) receives convergence
    reports or sweep counts when provided.
    """
    params = resolve_model(spec.model)
    rows: list[MetricRow] = []
    for seed in spec.seeds:
        stage = "simulate"
        try:
            bundle = simulate(params, spec.num_agents, spec.num_steps, seed)
            stage = "ground_truth"
            truth = ground_truth(params, bundle, spec.truth)
            stage = spec.algorithm
            start = time.perf_counter()
            estimates, aux = _run_algorithm(params, bundle, spec)
            wall_ms = (time.perf_counter() - start) * 1e3
            stage = "score"
            scored = compute_metrics(estimates, truth, seed=seed)
        except Exception as exc:
            raise ExperimentFailure(seed, stage, exc) from exc
        if collect_reports is not None:
            collect_reports[seed] = aux
        rows.append(MetricRow(seed=seed, t="avg",
                              mean_sq_err=scored.mean_sq_err,
                              cov_sq_err=scored.cov_sq_err,
                              wall_ms=wall_ms))
    return rows


def compare_timing(spec_baseline: ExperimentSpec, spec_sw: ExperimentSpec,
                   baseline_times: tuple[int, ...] | None = None) -> list[TimingRow]:
    """Per-step cost of full-history re-inference vs the sliding window.

    At each measured step t the baseline runs inference on the whole prefix
    from scratch, while the window filter consumes just the new observation.
    ``baseline_times`` (1-based) restricts where the expensive baseline is
    measured; unmeasured steps report NaN. Both specs must agree on the
    model, population, horizon, and seed.
    """
    for attr in ("num_agents", "num_steps"):
        if getattr(spec_baseline, attr) != getattr(spec_sw, attr):
            raise ValueError(f"timing specs disagree on {attr}")
    if spec_baseline.seeds != spec_sw.seeds:
        raise ValueError("timing specs disagree on seeds")
    if spec_sw.window is None:
        raise ValueError("the sliding-window spec needs a window length")

    params = resolve_model(spec_baseline.model)
    other = resolve_model(spec_sw.model)
    if any(not np.array_equal(getattr(params, f), getattr(other, f))
           for f in ("A", "Q", "C", "R", "pi", "Pi")):
        raise ValueError("timing specs disagree on model")
    seed = spec_baseline.seeds[0]
    bundle = simulate(params, spec_baseline.num_agents, spec_baseline.num_steps, seed)
    agg = fit_aggregate(bundle, params)
    T = spec_baseline.num_steps
    measure = set(range(1, T + 1)) if baseline_times is None else set(baseline_times)

    baseline_ms = np.full(T, np.nan)
    config = spec_baseline.config or CgfbConfig()
    for t in sorted(measure):
        prefix = AggregateObservations(agg.mu_hat[:t], agg.P_hat[:t], agg.num_agents)
        start = time.perf_counter()
        run_cgfb(params, prefix, config)
        baseline_ms[t - 1] = (time.perf_counter() - start) * 1e3

    sw_ms = np.empty(T)
    state = sw_init(params, spec_sw.window)
    step = sw_step_naive if spec_sw.algorithm == "sw_naive" else sw_step
    sw_config = spec_sw.config or DEFAULT_SW_CONFIG
    for t in range(T):
        entry = agg.entry(t)
        start = time.perf_counter()
        state, _ = step(params, state, entry, sw_config)
        sw_ms[t] = (time.perf_counter() - start) * 1e3
    return [TimingRow(t=t + 1, baseline_ms=float(baseline_ms[t]), sw_ms=float(sw_ms[t]))
            for t in range(T)]
