"""Arbitrary-order Levant differentiator in recursive form.

For order ``k`` and input ``y``::

    v_0 = -lam_0 |z_0 - y|^(k/(k+1)) sign(z_0 - y) + z_1
    v_i = -lam_i |z_i - v_{i-1}|^((k-i)/(k-i+1)) sign(z_i - v_{i-1}) + z_{i+1}
    dz_i/dt = v_i            (i < k)
    dz_k/dt = -lam_k sign(z_k - v_{k-1})

``z_i`` estimates the i-th derivative of ``y`` once the k-th derivative of
``y`` is Lipschitz with constant ``L``.  All states are vectors so a bank of
identical differentiators on several channels advances in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedOrder

__all__ = ["Differentiator", "default_gains", "make_differentiator", "diff_step",
           "differentiate_series", "GAIN_LADDER"]

# Coefficients from the highest stage (index 0) downwards.
GAIN_LADDER = (1.1, 1.5, 2.0, 3.0, 5.0, 8.0)


def default_gains(order, L_lip):
    """Standard gains ``lam_i = c_(k-i) * L^(1/(k+1-i))``.

    ``c`` is :data:`GAIN_LADDER` read from the top stage down, so for
    ``order = 1`` the gains are ``(1.5 sqrt(L), 1.1 L)``.

    Parameters
    ----------
    order : int
        Differentiator order ``k`` (1 to 5).
    L_lip : float or array_like
        Lipschitz bound of the k-th derivative; an array gives one gain set
        per channel (result shape ``(k+1, channels)``).
    """
    if order < 1 or order > len(GAIN_LADDER) - 1:
        raise UnsupportedOrder(f"default gains exist for orders 1..{len(GAIN_LADDER) - 1}")
    L = np.asarray(L_lip, dtype=float)
    if np.any(L <= 0):
        raise ValueError("Lipschitz bound must be positive")
    k = order
    return np.array([GAIN_LADDER[k - i] * L ** (1.0 / (k + 1 - i)) for i in range(k + 1)])


@dataclass(frozen=True)
class Differentiator:
    """Differentiator bank state.

    ``z`` has shape ``(order+1, channels)``; ``lambdas`` the same shape (or
    ``(order+1,)`` broadcast over channels).
    """

    order: int
    z: np.ndarray
    lambdas: np.ndarray
    L_lip: object = None

    @property
    def derivatives(self):
        return self.z


def make_differentiator(order, L_lip=None, first_sample=0.0, lambdas=None, channels=None):
    """Differentiator initialized with ``z_0`` at the first sample and the rest at 0."""
    if order < 1:
        raise UnsupportedOrder("order must be at least 1")
    y0 = np.atleast_1d(np.asarray(first_sample, dtype=float))
    if channels is not None and y0.size == 1:
        y0 = np.full(channels, y0[0])
    if lambdas is None:
        if L_lip is None:
            raise ValueError("need either L_lip or explicit lambdas")
        lambdas = default_gains(order, L_lip)
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.shape[0] != order + 1:
        raise ValueError(f"need {order + 1} gains")
    if np.any(lambdas <= 0):
        raise ValueError("gains must be positive")
    if lambdas.ndim == 1:
        lambdas = np.repeat(lambdas[:, None], y0.size, axis=1)
    z = np.zeros((order + 1, y0.size))
    z[0] = y0
    return Differentiator(order=order, z=z, lambdas=lambdas, L_lip=L_lip)


def _spow(x, a):
    return np.abs(x) ** a * np.sign(x)


def diff_rates(d: Differentiator, sample):
    """``(dz/dt, v)`` at the current state; ``v[0] - z[1]`` is the correction."""
    k = d.order
    y = np.asarray(sample, dtype=float)
    z, lam = d.z, d.lambdas
    rates = np.empty_like(z)
    prev = y
    for i in range(k):
        vi = -lam[i] * _spow(z[i] - prev, (k - i) / (k - i + 1)) + z[i + 1]
        rates[i] = vi
        prev = vi
    rates[k] = -lam[k] * np.sign(z[k] - prev)
    return rates


def diff_step(d: Differentiator, sample, dt):
    """One explicit-Euler step of the recursive cascade."""
    return Differentiator(d.order, d.z + dt * diff_rates(d, sample), d.lambdas, d.L_lip)


def differentiate_series(samples, dt, order=2, L_lip=1.0, lambdas=None):
    """Run a single-channel differentiator over a sampled signal.

    Returns an array of shape ``(len(samples), order+1)``.  Row ``j`` is the
    state at ``t_j = j dt`` before sample ``j`` is consumed; row 0 is the
    initialization ``(y_0, 0, ..., 0)``.
    """
    y = np.asarray(samples, dtype=float).ravel()
    out = np.empty((y.size, order + 1))
    if y.size == 0:
        return out
    d = make_differentiator(order, L_lip, first_sample=y[0], lambdas=lambdas)
    for j, yj in enumerate(y):
        out[j] = d.z[:, 0]
        d = diff_step(d, np.atleast_1d(yj), dt)
    return out
