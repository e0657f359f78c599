"""Command-line harness: simulate, infer, stream, benchmark, and time.

Exit codes: 0 on success, 2 for invalid configuration or unparseable
inputs, 3 for numerical failures (message names the stage and timestep).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import formats
from .experiments import (
    ExperimentFailure,
    ExperimentSpec,
    LengthMismatch,
    compare_timing,
    run_experiment,
)
from .forward_backward import (
    CgfbConfig,
    IndefiniteDeficit,
    MaxItersExceeded,
    SingularInnerMatrix,
    run_cgfb,
)
from .gaussians import DimensionMismatch, NotPositiveDefinite
from .kalman import DimensionCapExceeded, SingularInnovation, kf_aggregate
from .model import (
    DegenerateAggregate,
    GhmmParams,
    InvalidModel,
    benchmark_model,
    fit_aggregate,
    simulate,
    validate,
)
from .sliding_window import DEFAULT_SW_CONFIG, InvalidWindow, sw_init, sw_step, sw_step_naive

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_NUMERICAL_ERRORS = (
    SingularInnerMatrix,
    IndefiniteDeficit,
    MaxItersExceeded,
    SingularInnovation,
    NotPositiveDefinite,
    DegenerateAggregate,
    DimensionCapExceeded,
)
_CONFIG_ERRORS = (
    formats.ModelFileError,
    InvalidModel,
    InvalidWindow,
    LengthMismatch,
    DimensionMismatch,
    ValueError,
)


def _load_model_arg(value: str) -> GhmmParams:
    if value == "benchmark":
        return benchmark_model()
    return validate(formats.load_model(value))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_seeds(args) -> tuple[int, ...]:
    if getattr(args, "seeds", None):
        return tuple(int(s) for s in args.seeds.split(","))
    return (args.seed,)


def _config_from(args) -> CgfbConfig:
    return CgfbConfig(
        max_iters=args.max_iters,
        conv_tol=args.tol,
        damping=getattr(args, "damping", 0.0),
    )


def _add_common(parser: argparse.ArgumentParser, seeds: bool = False,
                agents_list: bool = False) -> None:
    parser.add_argument("--model", required=True,
                        help="model file path, or 'benchmark' for the built-in model")
    if agents_list:
        parser.add_argument("--agents", "-M", type=str, default="100",
                            help="population size, or comma list for a sweep")
    else:
        parser.add_argument("--agents", "-M", type=int, default=100, help="population size")
    parser.add_argument("--steps", "-T", type=int, default=100, help="horizon length")
    if seeds:
        parser.add_argument("--seed", type=int, default=0, help="single RNG seed")
        parser.add_argument("--seeds", type=str, default=None,
                            help="comma-separated RNG seeds (overrides --seed)")
    else:
        parser.add_argument("--seed", type=int, default=0, help="RNG seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--format", choices=["csv"], default="csv",
                        help="output format (CSV only)")


def _add_iteration_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tol", type=float, default=1e-9, help="convergence tolerance")
    parser.add_argument("--max-iters", type=int, default=200, help="sweep budget")
    parser.add_argument("--damping", type=float, default=0.0, help="update damping in [0, 1)")


def _maybe_plot_xy(args, xs, series: dict, path: Path, xlabel: str, ylabel: str,
                   logy: bool = False) -> None:
    if not getattr(args, "plot", False):
        return
    try:
        import matplotlib
    except ImportError:
        raise ValueError("--plot requires matplotlib (install the 'plots' extra)") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ys in series.items():
        ax.plot(xs, ys, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_simulate(args) -> int:
    params = _load_model_arg(args.model)
    out = _out_dir(args)
    bundle = simulate(params, args.agents, args.steps, args.seed)
    agg = fit_aggregate(bundle, params)
    formats.write_bundle_csv(bundle, out / "trajectories.csv")
    formats.write_aggregate_csv(agg, out / "aggregate.csv")
    print(f"wrote {out / 'trajectories.csv'} and {out / 'aggregate.csv'}", file=sys.stderr)
    return EXIT_OK


def cmd_infer(args) -> int:
    params = _load_model_arg(args.model)
    out = _out_dir(args)
    bundle = simulate(params, args.agents, args.steps, args.seed)
    agg = fit_aggregate(bundle, params)
    result = run_cgfb(params, agg, _config_from(args))
    formats.write_marginals_csv(result.marginals, out / "marginals.csv")
    formats.write_convergence_csv(result.report, out / "convergence.csv")
    _maybe_plot_xy(args, np.arange(1, result.report.sweeps + 1),
                   {"residual": list(result.report.residuals)},
                   out / "convergence.svg", "sweep", "sup-norm residual", logy=True)
    print(f"converged in {result.report.sweeps} sweeps "
          f"(final residual {result.report.final_residual:.3e})", file=sys.stderr)
    return EXIT_OK


def cmd_sw_infer(args) -> int:
    params = _load_model_arg(args.model)
    out = _out_dir(args)
    step = sw_step_naive if args.naive else sw_step
    config = CgfbConfig(max_iters=args.max_iters, conv_tol=args.tol)

    if args.input is not None:
        source = sys.stdin if args.input == "-" else open(args.input)
        try:
            records = list(formats.iter_stream_records(source, params.d_o, args.agents))
        finally:
            if source is not sys.stdin:
                source.close()
        entries = [entry for _, entry in records]
    else:
        bundle = simulate(params, args.agents, args.steps, args.seed)
        agg = fit_aggregate(bundle, params)
        entries = agg.entries()

    state = sw_init(params, args.window)
    marg_path = out / "marginals.csv"
    sweeps_path = out / "sweeps.csv"
    with open(marg_path, "w", newline="") as marg_fh, open(sweeps_path, "w", newline="") as sw_fh:
        marg_fh.write(",".join(formats.marginal_header(params.d_x)) + "\n")
        sw_fh.write("t,sweeps\n")
        for t, entry in enumerate(entries):
            state, filtered = step(params, state, entry, config)
            marg_fh.write(",".join(formats.format_marginal_row(t, filtered.mean, filtered.cov)) + "\n")
            sw_fh.write(f"{t + 1},{state.sweeps}\n")
    print(f"filtered {len(entries)} steps (window {args.window}"
          f"{', naive' if args.naive else ''}) -> {marg_path}", file=sys.stderr)
    return EXIT_OK


def cmd_kalman(args) -> int:
    params = _load_model_arg(args.model)
    out = _out_dir(args)
    bundle = simulate(params, args.agents, args.steps, args.seed)
    traj = kf_aggregate(params, bundle)
    formats.write_marginals_csv(traj.as_marginals(), out / "kalman.csv")
    print(f"wrote {out / 'kalman.csv'}", file=sys.stderr)
    return EXIT_OK


def cmd_experiment(args) -> int:
    params = _load_model_arg(args.model)
    out = _out_dir(args)
    seeds = _parse_seeds(args)
    agent_counts = [int(v) for v in str(args.agents).split(",")]
    config = _config_from(args)

    all_rows = []
    mean_by_m, cov_by_m = [], []
    for M in agent_counts:
        spec = ExperimentSpec(
            model=params, num_agents=M, num_steps=args.steps, seeds=seeds,
            algorithm=args.algorithm, window=args.window, truth=args.truth,
            config=config,
        )
        reports: dict = {}
        rows = run_experiment(spec, collect_reports=reports)
        all_rows.extend((M, row) for row in rows)
        mean_by_m.append(np.mean([r.mean_sq_err for r in rows]))
        cov_by_m.append(np.mean([r.cov_sq_err for r in rows]))
        if args.algorithm == "cgfb":
            for seed, report in reports.items():
                formats.write_convergence_csv(report, out / f"convergence_M{M}_seed{seed}.csv")

    with open(out / "metrics.csv", "w", newline="") as fh:
        fh.write("algorithm,M,window,seed,t,mean_sq_err,cov_sq_err,wall_ms\n")
        for M, row in all_rows:
            window = args.window if args.window is not None else ""
            fh.write(f"{args.algorithm},{M},{window},{row.seed},{row.t},"
                     f"{row.mean_sq_err!r},{row.cov_sq_err!r},{row.wall_ms!r}\n")
    if len(agent_counts) > 1:
        _maybe_plot_xy(args, agent_counts,
                       {"mean_sq_err": mean_by_m, "cov_sq_err": cov_by_m},
                       out / "errors.svg", "agents M", "quadratic error", logy=True)
    print(f"wrote {out / 'metrics.csv'} ({len(all_rows)} rows)", file=sys.stderr)
    return EXIT_OK


def cmd_timing(args) -> int:
    params = _load_model_arg(args.model)
    out = _out_dir(args)
    base_spec = ExperimentSpec(model=params, num_agents=args.agents, num_steps=args.steps,
                               seeds=(args.seed,), algorithm="cgfb")
    sw_spec = ExperimentSpec(model=params, num_agents=args.agents, num_steps=args.steps,
                             seeds=(args.seed,), algorithm="sw_cgfb", window=args.window)
    baseline_times = None
    if args.baseline_every > 1:
        baseline_times = tuple(sorted(set(range(args.baseline_every, args.steps + 1,
                                               args.baseline_every)) | {args.steps}))
    rows = compare_timing(base_spec, sw_spec, baseline_times=baseline_times)
    formats.write_timing_csv(rows, out / "timing.csv")
    measured = [r for r in rows if not np.isnan(r.baseline_ms)]
    _maybe_plot_xy(args, [r.t for r in rows],
                   {"baseline_ms": [r.baseline_ms for r in rows],
                    "sw_ms": [r.sw_ms for r in rows]},
                   out / "timing.svg", "t", "per-step ms")
    print(f"wrote {out / 'timing.csv'} ({len(measured)} baseline points)", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cgfb",
        description="Aggregate state inference for linear-Gaussian HMM populations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate trajectories and fitted aggregates")
    _add_common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("infer", help="full-history aggregate inference")
    _add_common(p)
    _add_iteration_flags(p)
    p.add_argument("--plot", action="store_true", help="also render SVG curves")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("sw-infer", help="sliding-window online inference")
    _add_common(p)
    p.add_argument("--window", type=int, required=True, help="window length K")
    p.add_argument("--naive", action="store_true", help="drop the carried prior")
    p.add_argument("--input", default=None,
                   help="stream records from a file ('-' for stdin) instead of simulating")
    p.add_argument("--tol", type=float, default=DEFAULT_SW_CONFIG.conv_tol)
    p.add_argument("--max-iters", type=int, default=DEFAULT_SW_CONFIG.max_iters)
    p.set_defaults(fn=cmd_sw_infer)

    p = sub.add_parser("kalman", help="per-agent Kalman filters with known associations")
    _add_common(p)
    p.set_defaults(fn=cmd_kalman)

    p = sub.add_parser("experiment", help="score an algorithm against ground truth")
    _add_common(p, seeds=True, agents_list=True)
    _add_iteration_flags(p)
    p.add_argument("--algorithm", choices=["cgfb", "sw_cgfb", "sw_naive", "kf_aggregate"],
                   default="cgfb")
    p.add_argument("--window", type=int, default=None, help="window length for sliding variants")
    p.add_argument("--truth", choices=["sample", "analytic"], default="sample")
    p.add_argument("--plot", action="store_true", help="also render SVG curves")
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("timing", help="per-step cost: full re-inference vs sliding window")
    _add_common(p)
    p.add_argument("--window", type=int, required=True, help="window length K")
    p.add_argument("--baseline-every", type=int, default=1,
                   help="measure the baseline only every N steps")
    p.add_argument("--plot", action="store_true", help="also render SVG curves")
    p.set_defaults(fn=cmd_timing)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ExperimentFailure as exc:
        numerical = isinstance(exc.__cause__, _NUMERICAL_ERRORS)
        kind = "numerical failure" if numerical else "invalid configuration"
        print(f"{kind}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if numerical else EXIT_CONFIG
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _CONFIG_ERRORS as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
