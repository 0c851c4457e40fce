"""Quantitative gates for the reproduction runs.

Each gate is computed from run metrics (or a small standalone computation)
and reports ``(criterion, label, passed, detail)``.  The pytest acceptance
suite and the ``reproduce-paper`` command share these definitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..hosm_diff import differentiate_series

__all__ = ["Gate", "TOL", "differentiator_accuracy", "run_gates"]

TOL = {
    "dx_rel_rmse": 0.10,
    "runtime_s": 120.0,
    "support_off_ratio": 0.05,
    "dy_rel_rmse": 0.10,
    "cleanup_ratio": 0.10,
    "gain_bound": 1e3,
    "diff_error": 1e-2,
    "diff_ratio": 1.5,
    "agreement": 0.02,
    "compensated_rel": 0.05,
    "corrupted_rel": 0.50,
}

# differentiator check: first-order differentiator with Lipschitz bound 2 on sin(t)
DIFF_ORDER, DIFF_L, DIFF_T = 1, 2.0, 3.0


@dataclass(frozen=True)
class Gate:
    criterion: int
    label: str
    passed: bool
    detail: str

    def line(self):
        return f"criterion {self.criterion:2d} {'PASS' if self.passed else 'FAIL'}  {self.label}: {self.detail}"


def differentiator_accuracy(dt, order=DIFF_ORDER, L_lip=DIFF_L, horizon=DIFF_T, settle=1.0):
    """Max ``|z_1 - cos t|`` over ``[settle, horizon]`` for ``y = sin t`` sampled at ``dt``."""
    n = int(round(horizon / dt)) + 1
    t = np.arange(n) * dt
    z = differentiate_series(np.sin(t), dt, order=order, L_lip=L_lip)
    mask = t >= settle
    return float(np.max(np.abs(z[mask, 1] - np.cos(t[mask]))))


def _fmt(values):
    return "[" + ", ".join(f"{v:.4g}" for v in values) + "]"


def run_gates(metrics, comparison=None, diff_errors=None):
    """Gates for criteria 1-6 and 9 from a dict of per-scenario metric dicts.

    ``metrics`` maps scenario names (``wecc``, ``smo_fixed``,
    ``smo_adaptive``) to :meth:`RunMetrics.as_dict` output plus
    ``runtime_s``.  Missing scenarios skip their gates.
    """
    gates = []
    w = metrics.get("wecc")
    if w is not None:
        dx = w["dx_rel_rmse"]
        ok = dx and all(v < TOL["dx_rel_rmse"] for v in dx) and w["runtime_s"] < TOL["runtime_s"]
        gates.append(Gate(1, "plant-attack reconstruction", bool(ok),
                          f"rel RMSE {_fmt(dx)} (< {TOL['dx_rel_rmse']}), runtime {w['runtime_s']:.1f} s "
                          f"(< {TOL['runtime_s']:.0f} s)"))
        sp = w.get("sparse") or {}
        supp = sp.get("support", [])
        off = [r for i, r in enumerate(sp.get("off_support_ratio", [])) if i != 4]
        dy5 = w["dy_rel_rmse"][4] if len(w["dy_rel_rmse"]) > 4 else math.inf
        ok = supp == [5] and all(r < TOL["support_off_ratio"] for r in off) and dy5 < TOL["dy_rel_rmse"]
        gates.append(Gate(2, "sparse sensor-attack recovery", bool(ok),
                          f"support {supp}, max off-support ratio {max(off, default=0):.3g} "
                          f"(< {TOL['support_off_ratio']}), channel-5 rel RMSE {dy5:.4g} (< {TOL['dy_rel_rmse']})"))
        cr = w["cleanup_ratio"]
        ok = cr and all(v < TOL["cleanup_ratio"] for v in cr)
        detail = f"ratio per output {_fmt(cr)} (< {TOL['cleanup_ratio']})"
        if comparison is not None:
            detail += f"; vs reference run: compensated/corrupted {_fmt(comparison['ratio'])}"
            ok = ok and all(v < TOL["compensated_rel"] for v in comparison["ratio"])
        gates.append(Gate(3, "output cleanup", bool(ok), detail))
        ag = (w.get("agreement") or {}).get("nl")
        if ag is not None:
            ok = ag["x_rel_rmse"] < TOL["agreement"] and all(v < TOL["agreement"] for v in ag["dx_rel_rmse"])
            gates.append(Gate(9, "nl vs stw agreement", bool(ok),
                              f"x_hat {ag['x_rel_rmse']:.4g}, d_x_hat {_fmt(ag['dx_rel_rmse'])} (< {TOL['agreement']})"))
    a = metrics.get("smo_adaptive")
    if a is not None:
        g = a["gains"]
        entry = g.get("sigma_entry_time")
        rho, r = g.get("max_smo_rho", math.inf), g.get("max_smo_r", math.inf)
        ok = entry is not None and rho < TOL["gain_bound"] and r < TOL["gain_bound"] \
            and bool(g.get("ell_nondecreasing"))
        gates.append(Gate(4, "adaptive gain properties", bool(ok),
                          f"|sigma| < eps/2 after t = {entry} s, max rho {rho:.4g}, max r {r:.4g} "
                          f"(< {TOL['gain_bound']:.0f}), ell non-decreasing {g.get('ell_nondecreasing')}"))
    reach = {}
    for name in ("wecc", "smo_fixed", "smo_adaptive"):
        if name in metrics:
            for k, v in metrics[name]["reaching_time"].items():
                reach[f"{name}.{k}"] = v
    if reach:
        bad = [k for k, v in reach.items() if v is None]
        worst = max((v for v in reach.values() if v is not None), default=0.0)
        gates.append(Gate(5, "sliding bands", not bad,
                          f"{len(reach)} sliding variables, latest reaching time {worst:.4g} s"
                          + (f", never settled: {bad}" if bad else "")))
    if diff_errors is not None:
        e_coarse, e_fine = diff_errors
        ratio = e_coarse / e_fine if e_fine > 0 else math.inf
        ok = e_fine < TOL["diff_error"] and ratio >= TOL["diff_ratio"]
        gates.append(Gate(6, "differentiator accuracy", bool(ok),
                          f"error {e_fine:.3g} at dt = 1e-4 (< {TOL['diff_error']}), "
                          f"ratio {ratio:.3g} vs dt = 2e-4 (>= {TOL['diff_ratio']})"))
    return sorted(gates, key=lambda g: g.criterion)
