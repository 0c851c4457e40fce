"""Super-twisting observer driven by an auxiliary-output cascade.

Protected outputs ``y = C1 x`` are differentiated by chains of super-twisting
cells so that ``y_a`` approximates ``C_a x`` where ``C_a`` stacks
``C1_i A^j`` (see :func:`smoattack.transforms.relative_degrees`).  The
observer ::

    x_hat' = A x_hat + bias + G_l s + G_n v_c,   s = y_a - C_a x_hat
    v_c    = -rho_c P s / ||P s||

slides on ``s = 0``; the low-passed injection then carries
``C_a B d_x`` and the plant attack is recovered by least squares.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_lyapunov
from scipy.signal import place_poles

from .errors import DimensionMismatch, InvalidPoles, RankDeficientCaB, SingularDbar
from .filters import LowPass, check_filter_time, lowpass_init, lowpass_step
from .transforms import RelativeDegreeProfile, relative_degrees

__all__ = [
    "SuperTwistCell", "AuxOutputCascade", "StwDesign", "StwObserverState",
    "stw_step", "cascade_init", "cascade_step", "design_stw", "stw_init",
    "stw_observe_step", "reconstruct_dx", "reconstruct_dy", "supertwist_gains",
]


def supertwist_gains(L_b):
    """``(lambda_s, beta_s) = (1.5 sqrt(L_b), 1.1 L_b)``."""
    L_b = np.asarray(L_b, dtype=float)
    if np.any(L_b <= 0):
        raise ValueError("Lipschitz bound must be positive")
    return 1.5 * np.sqrt(L_b), 1.1 * L_b


# ---------------------------------------------------------------------------
# Super-twisting cell and auxiliary-output cascade
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SuperTwistCell:
    """``nu = xi + lambda_s |s|^(1/2) sign(s)``, ``xi' = beta_s sign(s)``.

    Fields may be arrays, giving a bank of independent cells.
    """

    xi: np.ndarray
    lambda_s: np.ndarray
    beta_s: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.lambda_s) <= 0) or np.any(np.asarray(self.beta_s) <= 0):
            raise ValueError("super-twisting gains must be positive")


def _with_xi(cell, xi):
    # gains are unchanged, so skip the validation in __post_init__
    new = object.__new__(SuperTwistCell)
    object.__setattr__(new, "xi", xi)
    object.__setattr__(new, "lambda_s", cell.lambda_s)
    object.__setattr__(new, "beta_s", cell.beta_s)
    return new


def stw_step(cell: SuperTwistCell, s, dt):
    """Output ``nu`` at the current integrator value, then advance ``xi``."""
    s = np.asarray(s, dtype=float)
    sg = np.sign(s)
    nu = cell.xi + cell.lambda_s * np.sqrt(np.abs(s)) * sg
    return _with_xi(cell, cell.xi + dt * cell.beta_s * sg), nu


@dataclass(frozen=True)
class AuxOutputCascade:
    """Cascade state for every protected output.

    ``stages[j]`` holds stage ``j+1`` for all outputs: ``y_hat[j]`` are the
    estimates ``y_i^(j+1)`` and ``cells[j]`` the super-twisting cells that
    drive them.  Outputs with ``r_alpha_i <= j+1`` have an inactive slot.
    ``E[j]`` is the latched activation of stage ``j+1`` per output.
    """

    r_alpha: tuple
    y_hat: tuple
    cells: tuple
    E: tuple
    epsilon_act: float = 1e-3
    last_s: tuple = ()

    @property
    def depth(self):
        return len(self.y_hat)


def cascade_init(r_alpha, L_b=10.0, epsilon_act=1e-3, y0=None):
    """Cascade with ``max(r_alpha) - 1`` stages; estimates start at ``y0`` (stage 1) or 0."""
    r_alpha = tuple(int(r) for r in r_alpha)
    p1 = len(r_alpha)
    depth = max(r_alpha, default=1) - 1
    L_b = np.broadcast_to(np.asarray(L_b, dtype=float), (p1,)).copy()
    lam, bet = supertwist_gains(L_b)
    y_hat, cells, E = [], [], []
    for j in range(depth):
        start = np.zeros(p1) if (y0 is None or j > 0) else np.asarray(y0, dtype=float).copy()
        y_hat.append(start)
        cells.append(SuperTwistCell(np.zeros(p1), lam.copy(), bet.copy()))
        # the first stage is always on; deeper stages wait for activation
        E.append(np.full(p1, j == 0))
    return AuxOutputCascade(r_alpha, tuple(y_hat), tuple(cells), tuple(E), epsilon_act,
                            tuple(np.zeros(p1) for _ in range(depth)))


def cascade_step(cascade: AuxOutputCascade, y, dt):
    """Advance every chain one step and assemble ``y_a``.

    ``y_a`` interleaves per output ``(y_i, nu_i^1, ..., nu_i^(r_alpha_i - 1))``
    in output order, matching the row order of ``C_a``.
    """
    y = np.asarray(y, dtype=float)
    p1 = len(cascade.r_alpha)
    if y.shape != (p1,):
        raise DimensionMismatch(f"expected {p1} protected outputs")
    ra = np.asarray(cascade.r_alpha)
    src = y
    nus, new_y, new_cells, new_s = [], [], [], []
    for j in range(cascade.depth):
        active = (ra > j + 1) & cascade.E[j]
        s = src - cascade.y_hat[j]
        cell, nu = stw_step(cascade.cells[j], np.where(active, s, 0.0), dt)
        cell = _with_xi(cell, np.where(active, cell.xi, cascade.cells[j].xi))
        nu = np.where(active, nu, 0.0)
        new_y.append(cascade.y_hat[j] + dt * nu)
        new_cells.append(cell)
        new_s.append(np.where(ra > j + 1, s, 0.0))
        nus.append(nu)
        src = nu
    # a deeper stage switches on (and stays on) once the stage feeding it has converged
    E = list(cascade.E)
    for j in range(1, cascade.depth):
        conv = np.abs(new_s[j - 1]) <= cascade.epsilon_act
        E[j] = E[j] | (conv & E[j - 1])
    parts = []
    for i in range(p1):
        parts.append(y[i])
        for j in range(ra[i] - 1):
            parts.append(nus[j][i])
    y_a = np.array(parts)
    new = AuxOutputCascade(cascade.r_alpha, tuple(new_y), tuple(new_cells), tuple(E),
                           cascade.epsilon_act, tuple(new_s))
    return new, y_a


# ---------------------------------------------------------------------------
# Observer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StwDesign:
    """Matrices of the super-twisting observer.

    ``R_x = (C_a B)^+ C_a G_n`` maps the equivalent injection to ``d_x``.
    """

    A: np.ndarray
    B: np.ndarray
    bias: np.ndarray
    profile: RelativeDegreeProfile
    G_l: np.ndarray
    G_n: np.ndarray
    P: np.ndarray
    R_x: np.ndarray
    rho_c: float
    tau_f: float
    filter_order: int
    delta_reg: float
    L_b: np.ndarray
    epsilon_act: float

    @property
    def C_a(self):
        return self.profile.C_a


@dataclass(frozen=True)
class StwObserverState:
    x_hat: np.ndarray
    v_c_bar: LowPass
    cascade: AuxOutputCascade
    s: np.ndarray
    v_c: np.ndarray


def design_stw(A, B, C1, bias=None, *, rho_c=50.0, L_b=10.0, poles=None, tau_f=0.01,
               filter_order=1, delta_reg=1e-6, epsilon_act=1e-3) -> StwDesign:
    """Build ``C_a``, ``G_l`` (pole placement), ``G_n = -C_a^+`` and ``P``.

    ``P`` solves ``A_s^T P + P A_s = -I`` with
    ``A_s = C_a (A - G_l C_a) C_a^+``, the sliding-variable dynamics.  If
    that solution is not positive definite ``P = I`` is used instead.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    bias = np.zeros(n) if bias is None else np.asarray(bias, dtype=float)
    prof = relative_degrees(A, B, C1)
    Ca = prof.C_a
    q = Ca.shape[0]
    CaB = Ca @ B
    if np.linalg.matrix_rank(CaB) < B.shape[1]:
        raise RankDeficientCaB("C_a B must have full column rank")
    poles = -3.0 - np.arange(n) if poles is None else np.asarray(poles, dtype=float)
    if np.any(np.real(poles) >= 0):
        raise InvalidPoles("observer poles must be in the open left half-plane")
    try:
        G_l = place_poles(A.T, Ca.T, poles).gain_matrix.T
    except ValueError as exc:
        raise InvalidPoles(str(exc)) from exc
    Ca_pinv = np.linalg.pinv(Ca)
    G_n = -Ca_pinv
    As = Ca @ (A - G_l @ Ca) @ Ca_pinv
    P = np.eye(q)
    if np.max(np.linalg.eigvals(As).real) < 0:
        P = solve_continuous_lyapunov(As.T, -np.eye(q))
        P = 0.5 * (P + P.T)
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        warnings.warn("Lyapunov solution not positive definite; using P = I", RuntimeWarning)
        P = np.eye(q)
    R_x = np.linalg.pinv(CaB) @ Ca @ G_n
    L_b = np.broadcast_to(np.asarray(L_b, dtype=float), (len(prof.r),)).copy()
    return StwDesign(A, B, bias, prof, G_l, G_n, P, R_x, float(rho_c), float(tau_f),
                     int(filter_order), float(delta_reg), L_b, float(epsilon_act))


def stw_init(design: StwDesign, x0=None, y0=None, dt=None) -> StwObserverState:
    if dt is not None:
        check_filter_time(design.tau_f, design.filter_order, dt)
    n = design.A.shape[0]
    x_hat = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    q = design.C_a.shape[0]
    return StwObserverState(
        x_hat=x_hat,
        v_c_bar=lowpass_init(q, design.tau_f, design.filter_order),
        cascade=cascade_init(design.profile.r_alpha, design.L_b, design.epsilon_act, y0),
        s=np.zeros(q), v_c=np.zeros(q))


def stw_observe_step(state: StwObserverState, design: StwDesign, y, dt) -> StwObserverState:
    """One Euler step of cascade, observer and injection filter."""
    cascade, y_a = cascade_step(state.cascade, y, dt)
    s = y_a - design.C_a @ state.x_hat
    Ps = design.P @ s
    v_c = -design.rho_c * Ps / max(math.sqrt(Ps @ Ps), design.delta_reg)
    x_hat = state.x_hat + dt * (design.A @ state.x_hat + design.bias
                                + design.G_l @ s + design.G_n @ v_c)
    return StwObserverState(x_hat, lowpass_step(state.v_c_bar, v_c, dt), cascade, s, v_c)


def reconstruct_dx(state: StwObserverState, design: StwDesign):
    """Least-squares plant-attack estimate from the filtered injection."""
    return design.R_x @ state.v_c_bar.output


def reconstruct_dy(y2, x_hat, D1bar, C2):
    """Sensor-attack estimate, or the residual when ``D1bar`` is wide.

    Square ``D1bar`` gives ``D1bar^-1 (y2 - C2 x_hat)``.  A wide ``D1bar``
    (more attack sources than sensors) returns ``y2 - C2 x_hat`` for the
    sparse-recovery stage.
    """
    D1bar = np.atleast_2d(np.asarray(D1bar, dtype=float))
    r = np.asarray(y2, dtype=float) - np.asarray(C2, dtype=float) @ np.asarray(x_hat, dtype=float)
    rows, cols = D1bar.shape
    if cols > rows:
        return r
    if rows != cols or np.linalg.matrix_rank(D1bar) < cols:
        raise SingularDbar("D1bar must be square and nonsingular")
    return np.linalg.solve(D1bar, r)
