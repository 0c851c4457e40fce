"""Vector-graphic figures of a run (SVG, reproducible bytes)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..errors import TraceIOError  # noqa: E402
from .runner import SimTrace  # noqa: E402

__all__ = ["emit_plots", "PLOT_NAMES"]

PLOT_NAMES = {
    "fig2": "corrupted and attack-free speed measurements",
    "fig3": "angle states with and without attack",
    "fig4": "plant attack 1 and its estimate",
    "fig5": "plant attack 2 and its estimate",
    "fig6": "plant attack 3 and its estimate",
    "fig7": "sensor attacks and sparse estimates",
    "fig8": "corrupted, compensated and attack-free outputs",
}

_RC = {"svg.hashsalt": "smoattack", "svg.fonttype": "path", "figure.figsize": (7.0, 4.5),
       "axes.grid": True, "font.size": 9}


def _save(fig, path):
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise TraceIOError(f"cannot write plot {path}: {exc.strerror}") from exc
    finally:
        plt.close(fig)
    return path


def _pair(trace, true_col, hat_col, title, ylabel, path):
    fig, ax = plt.subplots()
    ax.plot(trace.t, trace.col(true_col), label="attack", lw=1.2)
    ax.plot(trace.t, trace.col(hat_col), "--", label="estimate", lw=1.0)
    ax.set(title=title, xlabel="t [s]", ylabel=ylabel)
    ax.legend(loc="upper left")
    return _save(fig, path)


def _outputs(trace, rows, title, path, clean=True):
    y, yref = trace.group("y"), trace.group("yref")
    yc = trace.group("yclean") if clean else None
    fig, axes = plt.subplots(len(rows), 1, sharex=True, squeeze=False)
    for ax, r in zip(axes[:, 0], rows):
        ax.plot(trace.t, y[:, r], label="corrupted", lw=1.0)
        if yc is not None:
            ax.plot(trace.t, yc[:, r], "--", label="compensated", lw=1.0)
        ax.plot(trace.t, yref[:, r], ":", label="no attack", lw=1.4)
        ax.set_ylabel(f"y{r + 1}")
    axes[0, 0].set_title(title)
    axes[0, 0].legend(loc="upper left", fontsize=7)
    axes[-1, 0].set_xlabel("t [s]")
    return _save(fig, path)


def emit_plots(trace: SimTrace, out_dir, which=None):
    """Write the figures that the trace supports; returns the written paths.

    ``which`` restricts the set (names from :data:`PLOT_NAMES`).  Plant
    attacks give ``fig4``-``fig6``, sensor attacks ``fig7``, and the
    compensated outputs ``fig8``.  A run without observers (the motivating
    stealth-attack run) gives ``fig2`` and ``fig3`` instead.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise TraceIOError(f"cannot create {out}: {exc.strerror}") from exc
    want = set(PLOT_NAMES) if which is None else set(which)
    written = []
    observed = trace.meta.get("primary", "none") != "none"
    p = trace.group("y").shape[1]
    half = list(range(p // 2)), list(range(p // 2, p))
    with plt.rc_context(_RC):
        if not observed:
            if "fig2" in want and p:
                written.append(_outputs(trace, half[1], PLOT_NAMES["fig2"], out / "fig2.svg", clean=False))
            if "fig3" in want and p:
                written.append(_outputs(trace, half[0], PLOT_NAMES["fig3"], out / "fig3.svg", clean=False))
            return written
        for i, name in enumerate(("fig4", "fig5", "fig6")):
            if name in want and f"dx_true{i + 1}" in trace.columns:
                written.append(_pair(trace, f"dx_true{i + 1}", f"dx_hat{i + 1}", PLOT_NAMES[name],
                                     f"d_x{i + 1}", out / f"{name}.svg"))
        if "fig7" in want and trace.has("dy_true"):
            dt_, dh = trace.group("dy_true"), trace.group("dy_hat")
            fig, axes = plt.subplots(dt_.shape[1], 1, sharex=True, squeeze=False,
                                     figsize=(7.0, 1.2 + 0.9 * dt_.shape[1]))
            for j, ax in enumerate(axes[:, 0]):
                ax.plot(trace.t, dt_[:, j], lw=1.2, label="attack")
                ax.plot(trace.t, dh[:, j], "--", lw=1.0, label="estimate")
                ax.set_ylabel(f"d_y{j + 1}")
            axes[0, 0].set_title(PLOT_NAMES["fig7"])
            axes[0, 0].legend(loc="upper left", fontsize=7)
            axes[-1, 0].set_xlabel("t [s]")
            written.append(_save(fig, out / "fig7.svg"))
        if "fig8" in want and p:
            written.append(_outputs(trace, list(range(p)), PLOT_NAMES["fig8"], out / "fig8.svg"))
    return written
