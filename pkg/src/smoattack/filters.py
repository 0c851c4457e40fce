"""Low-pass filtering of switching injections.

A cascade of ``order`` identical first-order lags,
``tau * dv_k/dt = v_{k-1} - v_k``, integrated by explicit Euler.  The
cascade output is the equivalent-injection estimate used by every sliding
mode observer in the package.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = ["LowPass", "lowpass_init", "lowpass_step", "check_filter_time"]


@dataclass(frozen=True)
class LowPass:
    """State of a vector low-pass cascade; ``stages[-1]`` is the output."""

    tau: float
    stages: tuple

    @property
    def output(self):
        return self.stages[-1]

    @property
    def order(self):
        return len(self.stages)


def lowpass_init(dim, tau, order=1):
    if tau <= 0:
        raise ValueError("filter time constant must be positive")
    if order < 1:
        raise ValueError("filter order must be at least 1")
    return LowPass(float(tau), tuple(np.zeros(dim) for _ in range(order)))


def lowpass_step(f: LowPass, u, dt):
    """Advance the cascade by one Euler step driven by ``u``."""
    a = dt / f.tau
    new = []
    src = np.asarray(u, dtype=float)
    for s in f.stages:
        s = s + a * (src - s)
        new.append(s)
        src = s
    return LowPass(f.tau, tuple(new))


def check_filter_time(tau, order, dt):
    """Warn when the filter is too fast relative to the integration step.

    The usual rule ``tau >= 100 dt`` is applied to the total delay of the
    cascade, ``order * tau``.
    """
    if order * tau < 100 * dt:
        warnings.warn(
            f"low-pass delay {order * tau:g} s is below 100*dt = {100 * dt:g} s; "
            "the equivalent injection will carry switching noise",
            RuntimeWarning, stacklevel=3)
