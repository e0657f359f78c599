"""File formats: model documents, CSV exports, and streaming records.

Model files are JSON documents with fields ``d_x``, ``d_o``, ``A``, ``C``,
``Q``, ``R``, ``pi``, ``Pi`` (matrices row-major, nested lists accepted) and
an optional ``delta_t`` kept only as provenance. All CSV timestamps and
component labels are 1-based to match the mathematical indexing used in the
documentation; matrix columns are row-major.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .forward_backward import ConvergenceReport
from .gaussians import MarginalTrajectory
from .model import AggregateEntry, AggregateObservations, GhmmParams, TrajectoryBundle


class ModelFileError(ValueError):
    """A model document is missing or malformed; names the offending field."""

    def __init__(self, field: str, reason: str):
        self.field = field
        super().__init__(f"model file field '{field}': {reason}")


_MODEL_FIELDS = ("A", "C", "Q", "R", "pi", "Pi")


def save_model(params: GhmmParams, path: str | Path, delta_t: float | None = None) -> None:
    """Write a model document; ``delta_t`` is stored as provenance only."""
    doc = {
        "d_x": params.d_x,
        "d_o": params.d_o,
        "A": params.A.tolist(),
        "C": params.C.tolist(),
        "Q": params.Q.tolist(),
        "R": params.R.tolist(),
        "pi": params.pi.tolist(),
        "Pi": params.Pi.tolist(),
    }
    if delta_t is not None:
        doc["delta_t"] = delta_t
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _field_array(doc: dict, field: str, shape: tuple[int, ...]) -> np.ndarray:
    if field not in doc:
        raise ModelFileError(field, "missing")
    try:
        arr = np.asarray(doc[field], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFileError(field, f"not numeric: {exc}") from exc
    flat_expected = int(np.prod(shape))
    if arr.shape != shape:
        # Row-major flat lists are accepted for matrices.
        if arr.ndim == 1 and arr.size == flat_expected:
            arr = arr.reshape(shape)
        else:
            raise ModelFileError(field, f"expected shape {shape}, got {arr.shape}")
    return arr


def load_model(path: str | Path) -> GhmmParams:
    """Parse a model document into ``GhmmParams`` (not yet validated)."""
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ModelFileError("(file)", f"not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ModelFileError("(document)", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFileError("(document)", "top level must be an object")
    for dim_field in ("d_x", "d_o"):
        if dim_field not in doc:
            raise ModelFileError(dim_field, "missing")
        if not isinstance(doc[dim_field], int) or doc[dim_field] < 1:
            raise ModelFileError(dim_field, f"must be a positive integer, got {doc[dim_field]!r}")
    d_x, d_o = doc["d_x"], doc["d_o"]
    return GhmmParams(
        A=_field_array(doc, "A", (d_x, d_x)),
        C=_field_array(doc, "C", (d_o, d_x)),
        Q=_field_array(doc, "Q", (d_x, d_x)),
        R=_field_array(doc, "R", (d_o, d_o)),
        pi=_field_array(doc, "pi", (d_x,)),
        Pi=_field_array(doc, "Pi", (d_x, d_x)),
    )


# ---------------------------------------------------------------------------
# CSV exports


def _open_out(path_or_file: str | Path | IO[str]):
    if hasattr(path_or_file, "write"):
        return path_or_file, False
    return open(path_or_file, "w", newline=""), True


def marginal_header(d_x: int) -> list[str]:
    cols = ["t"]
    cols += [f"mu_{i + 1}" for i in range(d_x)]
    cols += [f"P_{i + 1}{j + 1}" for i in range(d_x) for j in range(d_x)]
    return cols


def format_marginal_row(t: int, mean: np.ndarray, cov: np.ndarray) -> list[str]:
    row = [str(t + 1)]
    row += [repr(float(v)) for v in mean]
    row += [repr(float(v)) for v in np.asarray(cov).reshape(-1)]
    return row


def write_marginals_csv(traj: MarginalTrajectory, path_or_file: str | Path | IO[str]) -> None:
    out, close = _open_out(path_or_file)
    try:
        writer = csv.writer(out)
        writer.writerow(marginal_header(traj.dim))
        for t in range(len(traj)):
            writer.writerow(format_marginal_row(t, traj.means[t], traj.covs[t]))
    finally:
        if close:
            out.close()


def read_marginals_csv(path: str | Path) -> MarginalTrajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    d_x = sum(1 for c in header if c.startswith("mu_"))
    means = np.empty((len(data), d_x))
    covs = np.empty((len(data), d_x, d_x))
    for i, row in enumerate(data):
        vals = [float(v) for v in row[1:]]
        means[i] = vals[:d_x]
        covs[i] = np.asarray(vals[d_x:]).reshape(d_x, d_x)
    return MarginalTrajectory(means=means, covs=covs)


def write_convergence_csv(report: ConvergenceReport, path_or_file: str | Path | IO[str]) -> None:
    out, close = _open_out(path_or_file)
    try:
        writer = csv.writer(out)
        writer.writerow(["sweep", "residual"])
        for i, residual in enumerate(report.residuals):
            writer.writerow([i + 1, repr(float(residual))])
    finally:
        if close:
            out.close()


def write_bundle_csv(bundle: TrajectoryBundle, path_or_file: str | Path | IO[str]) -> None:
    """Long-format export: t,series,component,value with per-agent series."""
    out, close = _open_out(path_or_file)
    try:
        writer = csv.writer(out)
        writer.writerow(["t", "series", "component", "value"])
        M, T, d_x = bundle.states.shape
        d_o = bundle.observations.shape[2]
        for t in range(T):
            for m in range(M):
                for i in range(d_x):
                    writer.writerow([t + 1, f"state({m + 1})", i + 1,
                                     repr(float(bundle.states[m, t, i]))])
                for i in range(d_o):
                    writer.writerow([t + 1, f"obs({m + 1})", i + 1,
                                     repr(float(bundle.observations[m, t, i]))])
    finally:
        if close:
            out.close()


def write_aggregate_csv(agg: AggregateObservations, path_or_file: str | Path | IO[str]) -> None:
    """Long-format export of the fitted summaries: mu_hat and P_hat(i,j)."""
    out, close = _open_out(path_or_file)
    try:
        writer = csv.writer(out)
        writer.writerow(["t", "series", "component", "value"])
        T, d_o = agg.mu_hat.shape
        for t in range(T):
            for i in range(d_o):
                writer.writerow([t + 1, "mu_hat", i + 1, repr(float(agg.mu_hat[t, i]))])
            for i in range(d_o):
                for j in range(d_o):
                    writer.writerow([t + 1, f"P_hat({i + 1},{j + 1})", i * d_o + j + 1,
                                     repr(float(agg.P_hat[t, i, j]))])
    finally:
        if close:
            out.close()


def write_metrics_csv(rows, path_or_file: str | Path | IO[str],
                      context: dict | None = None) -> None:
    """Write scored metric rows; optional constant context columns lead.

    The wall-time column is last so deterministic comparisons can simply
    drop it.
    """
    context = context or {}
    out, close = _open_out(path_or_file)
    try:
        writer = csv.writer(out)
        writer.writerow([*context.keys(), "seed", "t", "mean_sq_err", "cov_sq_err", "wall_ms"])
        for row in rows:
            writer.writerow([
                *context.values(), row.seed, row.t,
                repr(float(row.mean_sq_err)), repr(float(row.cov_sq_err)),
                repr(float(row.wall_ms)),
            ])
    finally:
        if close:
            out.close()


def write_timing_csv(rows, path_or_file: str | Path | IO[str]) -> None:
    out, close = _open_out(path_or_file)
    try:
        writer = csv.writer(out)
        writer.writerow(["t", "baseline_ms", "sw_ms"])
        for row in rows:
            writer.writerow([row.t, repr(float(row.baseline_ms)), repr(float(row.sw_ms))])
    finally:
        if close:
            out.close()


# ---------------------------------------------------------------------------
# Streaming records for the online filter


def parse_stream_record(line: str, d_o: int, num_agents: int) -> tuple[int, AggregateEntry]:
    """Parse ``t, mu_hat..., P_hat row-major...`` into an aggregate entry."""
    parts = [p.strip() for p in line.strip().split(",")]
    expected = 1 + d_o + d_o * d_o
    if len(parts) != expected:
        raise ValueError(
            f"stream record has {len(parts)} fields, expected {expected} "
            f"(t, {d_o} mean components, {d_o * d_o} covariance entries)"
        )
    t = int(float(parts[0]))
    values = [float(p) for p in parts[1:]]
    mu = np.asarray(values[:d_o])
    P = np.asarray(values[d_o:]).reshape(d_o, d_o)
    return t, AggregateEntry(mu_hat=mu, P_hat=P, num_agents=num_agents)


def iter_stream_records(lines: Iterable[str], d_o: int,
                        num_agents: int) -> Iterable[tuple[int, AggregateEntry]]:
    """Yield parsed records, skipping blanks, comments, and a header line."""
    for line in lines:
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        first = stripped.split(",", 1)[0].strip()
        try:
            float(first)
        except ValueError:
            continue  # header row
        yield parse_stream_record(stripped, d_o, num_agents)


def stream_record_from_entry(t: int, entry: AggregateEntry) -> str:
    vals = [str(t + 1)]
    vals += [repr(float(v)) for v in entry.mu_hat]
    vals += [repr(float(v)) for v in np.asarray(entry.P_hat).reshape(-1)]
    return ",".join(vals)
