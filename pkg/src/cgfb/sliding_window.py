"""Online aggregate filtering over a sliding window of recent observations.

Only the latest K aggregate observations are kept in the inference graph.
When an observation falls out of the window, the information it carried is
preserved by advancing the stored prior: the evicted node's converged
forward and upward messages are propagated one step and pinned as the
forward boundary of the shortened chain. The "naive" variant drops that
prior instead (flat left boundary), which is the baseline it is compared
against.

Each step re-converges the window's messages, warm-started from the
previous step's (shifted) fixed point, so the per-step cost stays constant
as the stream grows.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .forward_backward import (
    CgfbConfig,
    IndefiniteDeficit,
    MessageSet,
    SingularInnerMatrix,
    forward_message,
    iterate_messages,
    marginal_at,
)
from .gaussians import (
    CanonicalGaussian,
    MomentGaussian,
    NotPositiveDefinite,
    spd_inverse,
    _chol_solve,
)
from .model import (
    AggregateEntry,
    AggregateObservations,
    DegenerateAggregate,
    GhmmParams,
    validate,
)

# Per-step inner iteration budget; warm starts keep actual sweep counts low.
DEFAULT_SW_CONFIG = CgfbConfig(max_iters=50, conv_tol=1e-9)


class InvalidWindow(ValueError):
    """Window length must be a positive integer."""


@dataclass(frozen=True)
class WindowState:
    """Streaming filter state: carried prior, buffered observations, position.

    ``messages`` holds the converged message set of the last window run and
    feeds both the warm start of the next step and the prior advancement on
    eviction. ``sweeps`` records how many sweeps the last step needed.
    """

    window_len: int
    prior: CanonicalGaussian
    buffer: tuple[AggregateEntry, ...]
    current_index: int
    messages: MessageSet | None = None
    sweeps: int = 0


def sw_init(params: GhmmParams, window_len: int) -> WindowState:
    """Fresh window state whose prior is the model's initial density."""
    if window_len < 1:
        raise InvalidWindow(f"window length must be >= 1, got {window_len}")
    params = validate(params)
    prior = CanonicalGaussian(spd_inverse(params.Pi), _chol_solve(params.Pi, params.pi))
    return WindowState(window_len=window_len, prior=prior, buffer=(), current_index=0)


def _shifted_warm_start(prev: MessageSet, length: int, offset: int) -> MessageSet:
    """Map the previous window's messages onto the new window's nodes."""
    warm = MessageSet(length, prev.d_x, prev.d_o)
    for dst, src in zip(warm._arrays(), prev._arrays()):
        n = min(length, prev.num_steps - offset)
        dst[:n] = src[offset:offset + n]
    return warm


def _step(params: GhmmParams, state: WindowState, entry: AggregateEntry,
          config: CgfbConfig | None, naive: bool) -> tuple[WindowState, MomentGaussian]:
    config = config or DEFAULT_SW_CONFIG
    if state.buffer and state.buffer[0].num_agents != entry.num_agents:
        raise ValueError(
            f"aggregate entry reports {entry.num_agents} agents but the window "
            f"buffer holds entries for {state.buffer[0].num_agents}"
        )
    entries = state.buffer + (entry,)
    prior = state.prior
    prev = state.messages
    evicted = len(entries) > state.window_len
    if evicted:
        if naive:
            prior = CanonicalGaussian.flat(params.d_x)
        else:
            # prev.fwd(0) is the pinned prior of the previous run; together with
            # the evicted node's converged upward message it determines the
            # forward message into the new left edge.
            prior = forward_message(params, prev.fwd(0), prev.up(0))
        entries = entries[1:]

    window = AggregateObservations.from_entries(entries)
    warm = None
    if prev is not None:
        warm = _shifted_warm_start(prev, len(entries), offset=1 if evicted else 0)

    absolute_t = state.current_index  # 0-based time of the incoming observation
    offset = absolute_t - (len(entries) - 1)
    # The flat-boundary (naive) iteration is not a contraction on every
    # instance; when an undamped attempt oscillates past the budget or blows
    # up, retry the step with progressively heavier damping, which targets
    # the same fixed point.
    attempts = [config]
    attempts += [replace(config, damping=d) for d in (0.5, 0.8) if d > config.damping]
    last_error: Exception | None = None
    msgs = filtered = report = None
    for attempt in attempts:
        try:
            msgs, report = iterate_messages(params, window, attempt,
                                            first_forward=prior, initial=warm)
            filtered = marginal_at(msgs, len(entries) - 1)
            break
        except DegenerateAggregate as exc:
            raise DegenerateAggregate(exc.timestep + offset) from exc
        except (NotPositiveDefinite, SingularInnerMatrix, IndefiniteDeficit) as exc:
            last_error = exc
    if filtered is None:
        exc = last_error
        if isinstance(exc, SingularInnerMatrix):
            raise SingularInnerMatrix(exc.timestep + offset, exc.stage,
                                      "inside sliding window") from exc
        if isinstance(exc, IndefiniteDeficit):
            raise IndefiniteDeficit(exc.timestep + offset, exc.min_eigenvalue) from exc
        raise exc

    new_state = WindowState(
        window_len=state.window_len,
        prior=prior,
        buffer=entries,
        current_index=state.current_index + 1,
        messages=msgs,
        sweeps=report.sweeps,
    )
    return new_state, filtered


def sw_step(params: GhmmParams, state: WindowState, entry: AggregateEntry,
            config: CgfbConfig | None = None) -> tuple[WindowState, MomentGaussian]:
    """Consume one aggregate observation and return the filtered state density.

    The returned density is the rightmost marginal of the re-converged
    window chain, i.e. the estimate for the incoming observation's timestep
    given the window plus the carried prior.
    """
    return _step(params, state, entry, config, naive=False)


def sw_step_naive(params: GhmmParams, state: WindowState, entry: AggregateEntry,
                  config: CgfbConfig | None = None) -> tuple[WindowState, MomentGaussian]:
    """Baseline step that forgets evicted history instead of carrying a prior.

    Identical to ``sw_step`` until the first eviction; afterwards the window's
    left boundary is flat and inference uses the buffered observations alone.
    """
    return _step(params, state, entry, config, naive=True)


def sw_filter(params: GhmmParams, agg: AggregateObservations, window_len: int,
              config: CgfbConfig | None = None, naive: bool = False):
    """Stream a whole aggregate sequence through the window filter.

    Returns (means, covs, sweeps) arrays over the T steps.
    """
    state = sw_init(params, window_len)
    step = sw_step_naive if naive else sw_step
    T = len(agg)
    means = np.empty((T, params.d_x))
    covs = np.empty((T, params.d_x, params.d_x))
    sweeps = np.empty(T, dtype=int)
    for t in range(T):
        state, filtered = step(params, state, agg.entry(t), config)
        means[t] = filtered.mean
        covs[t] = filtered.cov
        sweeps[t] = state.sweeps
    return means, covs, sweeps
