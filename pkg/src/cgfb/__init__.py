"""Aggregate inference for populations evolving under a linear-Gaussian HMM.

Estimates per-timestep population state densities from Gaussian summaries
of indistinguishable observations, via fixed-point forward/backward message
passing in information form; includes a constant-cost sliding-window online
variant, the classical Kalman filter and RTS smoother it reduces to for a
single agent, and an experiment harness with CSV exports.
"""

from .gaussians import (
    TAU_PSD,
    TAU_RT,
    TAU_SOLVE,
    TAU_SYM,
    CanonicalGaussian,
    DimensionMismatch,
    MarginalTrajectory,
    MomentGaussian,
    NotPositiveDefinite,
    canonical_product,
    psd_clamp,
    spd_inverse,
    spd_solve,
    symmetrize,
    to_canonical,
    to_moment,
)
from .model import (
    AggregateEntry,
    AggregateObservations,
    DegenerateAggregate,
    GhmmParams,
    InvalidModel,
    TrajectoryBundle,
    benchmark_model,
    fit_aggregate,
    prior_moments,
    simulate,
    validate,
)
from .forward_backward import (
    CgfbConfig,
    CgfbResult,
    ConvergenceReport,
    IndefiniteDeficit,
    MaxItersExceeded,
    MessageSet,
    SingularInnerMatrix,
    extract_marginals,
    forward_message,
    iterate_messages,
    marginal_at,
    run_cgfb,
    update_backward,
    update_downward,
    update_forward,
    update_upward,
)
from .kalman import (
    DimensionCapExceeded,
    KalmanState,
    KfAggregateSummary,
    KfAggregateTrajectory,
    SingularInnovation,
    joint_oracle,
    kf_aggregate,
    kf_correct,
    kf_filter,
    kf_predict,
    mixture_moments,
    rts_smooth,
)
from .sliding_window import (
    DEFAULT_SW_CONFIG,
    InvalidWindow,
    WindowState,
    sw_filter,
    sw_init,
    sw_step,
    sw_step_naive,
)
from .experiments import (
    ALGORITHMS,
    ExperimentFailure,
    ExperimentSpec,
    LengthMismatch,
    MetricRow,
    TimingRow,
    compare_timing,
    compute_metrics,
    ground_truth,
    run_experiment,
    sample_truth,
)

__version__ = "0.1.0"
