"""Unit-vector sliding-mode observer with a dynamic attack-reconstruction filter.

The observer runs in the partitioned coordinates of
:func:`smoattack.transforms.assemble_partition`::

    z' = Abar z + bbar + G1 (ybar1 - z21) + G2 (ybar2 - z22) - Gn v
    v  = -(rho + eta) e / ||e||,   e = ybar2 - z22

Once ``e`` slides on zero the error ``ebar = xbar - z`` obeys
``ebar' = A* ebar + Gn v_eq`` with ``A* = Abar - G1 Cbar1 - Bbar D2^-1 Cbar2``
and the attack equals ``-D2^-1 Cbar2 ebar``.  The filter ``w`` integrates
that model from the low-passed injection, so ``d_hat = C* w`` and
``x_hat = T^-1 (z + w)``.

The gain ``rho`` is either fixed or adapted by a dual-layer law that keeps
``rho`` just above ``||v_eq|| / alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, SingularD2, SmoAttackError
from .filters import LowPass, check_filter_time, lowpass_init, lowpass_step
from .transforms import TransformChain

__all__ = [
    "AdaptiveGain", "SmoConfig", "SmoDesign", "SmoState",
    "injection", "design_smo", "smo_init", "smo_step",
    "attack_filter_step", "adapt_gain", "smo_estimates",
]


class SingularFilter(SmoAttackError, ValueError):
    """The reconstruction filter has a pole at the origin (no DC gain)."""


@dataclass(frozen=True)
class AdaptiveGain:
    """Parameters of the dual-layer gain law.

    ``sigma = rho - ||v_bar|| / alpha - epsilon``, ``rho' = -r sign(sigma)``,
    ``r = ell0 + ell``, ``ell' = gamma |sigma|`` when ``|sigma| > sigma0``.
    ``a1`` and ``q`` are optional declared bounds used only to check the
    admissibility of ``epsilon``.
    """

    alpha: float = 0.9
    epsilon: float = 0.5
    sigma0: float = 0.05
    gamma: float = 1.0
    ell0: float = 5.0
    rho_init: float = 1.0
    r_init: Optional[float] = None
    a1: Optional[float] = None
    q: float = 1.1

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        for k in ("epsilon", "sigma0", "gamma", "ell0"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")
        if self.rho_init < 0:
            raise ValueError("rho_init must be nonnegative")
        if self.r_init is not None and self.r_init < self.ell0:
            raise ValueError("r_init must be at least ell0 (ell starts nonnegative)")
        if self.a1 is not None and not self.epsilon_admissible():
            raise ValueError(
                "epsilon too small for the declared bound: need "
                f"eps^2/4 > sigma0^2 + (q a1/alpha)^2/gamma = {self.epsilon_floor_sq():.4g}")

    def epsilon_floor_sq(self):
        a1 = 0.0 if self.a1 is None else self.a1
        return self.sigma0 ** 2 + (self.q * a1 / self.alpha) ** 2 / self.gamma

    def epsilon_admissible(self):
        return self.epsilon ** 2 / 4 > self.epsilon_floor_sq()

    @property
    def ell_init(self):
        return 0.0 if self.r_init is None else self.r_init - self.ell0


@dataclass(frozen=True)
class SmoConfig:
    """Observer design parameters (``rho`` fixed unless ``adaptive`` is set)."""

    A22s: Optional[np.ndarray] = None
    A33s: Optional[np.ndarray] = None
    rho: float = 5.0
    eta: float = 0.1
    adaptive: Optional[AdaptiveGain] = None
    tau_f: float = 0.01
    filter_order: int = 1
    delta_reg: float = 1e-6

    def __post_init__(self):
        if self.rho < 0 or self.eta <= 0:
            raise ValueError("need rho >= 0 and eta > 0")
        if self.tau_f <= 0 or self.delta_reg <= 0:
            raise ValueError("tau_f and delta_reg must be positive")


@dataclass(frozen=True)
class SmoDesign:
    """Gains and filter matrices for one chain and configuration."""

    chain: TransformChain
    config: SmoConfig
    G1: np.ndarray
    G2: np.ndarray
    Gn: np.ndarray
    A_star: np.ndarray
    B_star: np.ndarray
    C_star: np.ndarray
    A22s: np.ndarray
    A33s: np.ndarray

    def dc_gain(self):
        """``-C* A*^-1 B*``; requires ``A*`` to have no eigenvalue at zero."""
        eig = np.linalg.eigvals(self.A_star)
        if np.any(np.abs(eig) < 1e-12):
            raise SingularFilter("A* has an eigenvalue at s = 0")
        return -self.C_star @ np.linalg.solve(self.A_star, self.B_star)

    @property
    def filter_poles(self):
        return np.linalg.eigvals(self.A_star)


@dataclass(frozen=True)
class SmoState:
    """Observer, injection-filter and reconstruction-filter states."""

    z: np.ndarray
    v_bar: LowPass
    w: np.ndarray
    rho_t: float
    ell_t: float
    sigma: float = 0.0
    e_norm: float = 0.0
    v: np.ndarray = field(default=None, repr=False)

    @property
    def v_eq(self):
        return self.v_bar.output


def injection(e, gain, delta_reg=1e-6):
    """Unit-vector injection ``-gain e/||e||``, linear inside ``||e|| <= delta_reg``."""
    if gain < 0:
        raise ValueError("injection gain must be nonnegative")
    e = np.asarray(e, dtype=float)
    ne = np.linalg.norm(e)
    return -gain * e / max(ne, delta_reg)


def design_smo(chain: TransformChain, config: SmoConfig = SmoConfig()) -> SmoDesign:
    """Observer gains from the partitioned blocks and the reconstruction filter."""
    k, q, m = chain.sizes
    A22s = -2.0 * np.eye(q) if config.A22s is None else np.atleast_2d(np.asarray(config.A22s, float))
    A33s = -2.0 * np.eye(m) if config.A33s is None else np.atleast_2d(np.asarray(config.A33s, float))
    if A22s.shape != (q, q) or A33s.shape != (m, m):
        raise DimensionMismatch(f"A22s must be {q}x{q} and A33s {m}x{m}")
    if q and np.max(np.linalg.eigvals(A22s).real) >= 0:
        raise ValueError("A22s must be Hurwitz")
    if not np.allclose(A33s, A33s.T, rtol=0, atol=1e-14):
        raise ValueError("A33s must be symmetric")
    if m and np.max(np.linalg.eigvalsh(A33s)) >= 0:
        raise ValueError("A33s must be negative definite")
    D2 = chain.D2
    if m == 0 or np.linalg.matrix_rank(D2) < m:
        raise SingularD2("D2 must be square and nonsingular")

    b = chain.block
    G1 = np.vstack([b("A12a"), b("A22a") - A22s, np.zeros((m, q))])
    G2 = np.vstack([b("A12b"), b("A22b"), b("A22d") - A33s])
    Gn = np.vstack([np.zeros((k + q, m)), np.eye(m)])
    D2inv = np.linalg.inv(D2)
    A_star = chain.Abar - G1 @ chain.Cbar1 - chain.Bbar @ D2inv @ chain.Cbar2
    B_star = Gn.copy()
    C_star = np.hstack([np.zeros((m, chain.n - m)), -D2inv])
    return SmoDesign(chain, config, G1, G2, Gn, A_star, B_star, C_star, A22s, A33s)


def smo_init(design: SmoDesign, z0=None, dt=None) -> SmoState:
    """Zero observer and filter states; ``rho`` starts at ``rho_init`` in adaptive mode."""
    cfg = design.config
    n, m = design.chain.n, design.chain.m
    if dt is not None:
        check_filter_time(cfg.tau_f, cfg.filter_order, dt)
    z = np.zeros(n) if z0 is None else np.asarray(z0, dtype=float).copy()
    if z.shape != (n,):
        raise DimensionMismatch(f"z0 must have length {n}")
    ad = cfg.adaptive
    rho = cfg.rho if ad is None else ad.rho_init
    ell = 0.0 if ad is None else ad.ell_init
    return SmoState(z=z, v_bar=lowpass_init(m, cfg.tau_f, cfg.filter_order), w=np.zeros(n),
                    rho_t=float(rho), ell_t=float(ell), v=np.zeros(m))


def attack_filter_step(design: SmoDesign, w, v_eq_sample, dt):
    """Euler step of ``w' = A* w + B* v_eq``; returns ``(w_next, C* w)``."""
    w = np.asarray(w, dtype=float)
    d_hat = design.C_star @ w
    w_next = w + dt * (design.A_star @ w + design.B_star @ np.asarray(v_eq_sample, dtype=float))
    return w_next, d_hat


def adapt_gain(state: SmoState, params: AdaptiveGain, v_bar, dt) -> SmoState:
    """One Euler step of the dual-layer law; ``rho`` never goes below 0."""
    sigma = state.rho_t - np.linalg.norm(v_bar) / params.alpha - params.epsilon
    r = params.ell0 + state.ell_t
    rho = max(state.rho_t - dt * r * np.sign(sigma), 0.0)
    ell = state.ell_t + (dt * params.gamma * abs(sigma) if abs(sigma) > params.sigma0 else 0.0)
    return replace(state, rho_t=rho, ell_t=ell, sigma=float(sigma))


def smo_step(state: SmoState, design: SmoDesign, y1, y2, dt) -> SmoState:
    """Advance the observer by one step on scaled measurements ``(ybar1, ybar2)``.

    Order: injection from the current error, Euler update of ``z``, injection
    filter, reconstruction filter driven by the filtered injection, gain
    adaptation.
    """
    ch = design.chain
    cfg = design.config
    k, q, m = ch.sizes
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if y1.shape != (q,) or y2.shape != (m,):
        raise DimensionMismatch(f"expected ybar1 of length {q} and ybar2 of length {m}")
    z = state.z
    e = y2 - z[k + q:]
    gain = state.rho_t + cfg.eta
    v = injection(e, gain, cfg.delta_reg)
    dz = ch.Abar @ z + ch.bias_bar + design.G1 @ (y1 - z[k:k + q]) + design.G2 @ e - design.Gn @ v
    z_next = z + dt * dz
    vb = lowpass_step(state.v_bar, v, dt)
    w_next, _ = attack_filter_step(design, state.w, vb.output, dt)
    new = replace(state, z=z_next, v_bar=vb, w=w_next, e_norm=float(np.linalg.norm(e)), v=v)
    if cfg.adaptive is not None:
        new = adapt_gain(new, cfg.adaptive, vb.output, dt)
    return new


def smo_estimates(state: SmoState, design: SmoDesign):
    """``(x_hat, d_hat)`` in original coordinates."""
    ch = design.chain
    x_hat = ch.T_inv @ (state.z + state.w)
    d_hat = design.C_star @ state.w
    return x_hat, d_hat
