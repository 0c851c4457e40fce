"""Trace files: CSV with a fixed header and 17-significant-digit values."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..errors import TraceIOError
from .runner import SimTrace

__all__ = ["write_trace", "read_trace", "write_metrics", "COLUMN_GROUPS"]

# documented column order; each group expands to 1-based indexed columns
COLUMN_GROUPS = ("t", "x", "y", "xhat", "dx_true", "dx_hat", "dy_true", "dy_hat",
                 "s_*", "g_*", "yclean", "yref", "<block>_xhat", "<block>_dxhat")


def write_trace(trace: SimTrace, path):
    """Write ``trace`` as CSV; an empty trace gives a header-only file."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(",".join(trace.columns) + "\n")
            if len(trace):
                np.savetxt(fh, trace.data, fmt="%.17g", delimiter=",")
    except OSError as exc:
        raise TraceIOError(f"cannot write trace {path}: {exc.strerror}") from exc
    return path


def read_trace(path) -> SimTrace:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in r] for r in reader if r]
    except (OSError, StopIteration) as exc:
        raise TraceIOError(f"cannot read trace {path}") from exc
    except ValueError as exc:
        raise TraceIOError(f"malformed trace {path}: {exc}") from exc
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    dt = float(data[1, 0] - data[0, 0]) if data.shape[0] > 1 else 0.0
    return SimTrace(header, data, dt=dt)


def write_metrics(metrics: dict, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise TraceIOError(f"cannot write metrics {path}: {exc.strerror}") from exc
    return path
