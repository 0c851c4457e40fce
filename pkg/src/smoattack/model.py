"""Plant models, Kron reduction of the WECC descriptor system, attack signals.

The WECC network is the three-generator / six-bus small-signal model in
descriptor form (differential rows for rotor angles and speeds, algebraic
rows for bus voltage angles).  Because the load-bus susceptance block is
nonsingular the algebraic variables can be eliminated exactly, which gives
the 6-state LTI plant used by every observer in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    RankDeficientB,
    RankDeficientD,
    SingularAlgebraicBlock,
    UnstablePlant,
)

__all__ = [
    "WECC_M_G", "WECC_E_G", "WECC_L_THETA", "WECC_D_OMEGA",
    "DescriptorPowerNetwork", "LinearPlant", "ThetaRecovery",
    "Step", "Sine", "Constant", "StateFeedback", "AttackSignal",
    "kron_reduce", "build_wecc", "eval_attack",
    "wecc_plant_attack", "wecc_sensor_attack", "stealth_attack",
    "sensor_sine_attack",
]

# Normalized inertias and damping of the three generators.
WECC_M_G = np.diag([0.125, 0.034, 0.016])
WECC_E_G = np.diag([0.125, 0.068, 0.048])

# Susceptance matrix ordered (g1, g2, g3, b4, ..., b9), per unit.
WECC_L_THETA = np.array([
    [0.058, 0, 0, -0.058, 0, 0, 0, 0, 0],
    [0, 0.063, 0, 0, -0.063, 0, 0, 0, 0],
    [0, 0, 0.059, 0, 0, -0.059, 0, 0, 0],
    [-0.058, 0, 0, 0.265, 0, 0, -0.085, -0.092, 0],
    [0, -0.063, 0, 0, 0.296, 0, -0.161, 0, -0.072],
    [0, 0, -0.059, 0, 0, 0.330, 0, -0.170, -0.101],
    [0, 0, 0, -0.085, -0.161, 0, 0.246, 0, 0],
    [0, 0, 0, -0.092, 0, -0.170, 0, 0.262, 0],
    [0, 0, 0, 0, -0.072, -0.101, 0, 0, 0.173],
])

# Six stealth-attack sources distributed onto the three speed sensors.
WECC_D_OMEGA = np.array([
    [0, 1, 2, 0, 1, 1],
    [1, 0, 0, 2, 1, 0],
    [0, 0, 1, 0, 1, 0],
], dtype=float)

_COND_LIMIT = 1e12


def _as2d(a, rows=None, cols=None, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1 and rows is not None and cols is None:
        a = a.reshape(rows, -1) if a.size else np.zeros((rows, 0))
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {a.shape}")
    if rows is not None and a.shape[0] != rows:
        raise DimensionMismatch(f"{name} needs {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise DimensionMismatch(f"{name} needs {cols} columns, got {a.shape[1]}")
    return a


def _full_column_rank(a):
    return a.shape[1] == 0 or np.linalg.matrix_rank(a) == a.shape[1]


# ---------------------------------------------------------------------------
# Descriptor network and Kron reduction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DescriptorPowerNetwork:
    """Structure-preserving small-signal power network in descriptor form.

    ``M_g``/``E_g`` are the generator inertia and damping matrices, the
    ``L_*`` blocks partition the susceptance matrix into generator (g) and
    load (l) parts, ``B_omega``/``B_theta`` distribute state attacks and
    ``P_omega``/``P_theta`` are known power inputs.
    """

    M_g: np.ndarray
    E_g: np.ndarray
    L_gg: np.ndarray
    L_gl: np.ndarray
    L_lg: np.ndarray
    L_ll: np.ndarray
    B_omega: np.ndarray
    B_theta: np.ndarray
    P_omega: np.ndarray
    P_theta: np.ndarray

    def __post_init__(self):
        ng = np.asarray(self.M_g).shape[0]
        nl = np.asarray(self.L_ll).shape[0]
        conv = {
            "M_g": (ng, ng), "E_g": (ng, ng), "L_gg": (ng, ng),
            "L_gl": (ng, nl), "L_lg": (nl, ng), "L_ll": (nl, nl),
        }
        for name, (r, c) in conv.items():
            object.__setattr__(self, name, _as2d(getattr(self, name), r, c, name))
        B_omega = _as2d(self.B_omega, ng, name="B_omega")
        B_theta = _as2d(self.B_theta, nl, name="B_theta")
        if B_omega.shape[1] != B_theta.shape[1]:
            raise DimensionMismatch("B_omega and B_theta must have equal column counts")
        object.__setattr__(self, "B_omega", B_omega)
        object.__setattr__(self, "B_theta", B_theta)
        for name, size in (("P_omega", ng), ("P_theta", nl)):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.size != size:
                raise DimensionMismatch(f"{name} must have length {size}")
            object.__setattr__(self, name, v)

        for name in ("M_g", "E_g"):
            m = getattr(self, name)
            if np.any(m - np.diag(np.diag(m))) or np.any(np.diag(m) <= 0):
                raise ValueError(f"{name} must be diagonal with positive entries")
        L = self.L_theta
        if not np.allclose(L, L.T, rtol=0, atol=1e-14):
            raise ValueError("susceptance matrix must be symmetric")
        if not np.all(np.isfinite(self.L_ll)) or np.linalg.cond(self.L_ll) > _COND_LIMIT:
            raise SingularAlgebraicBlock(
                "L_ll is singular or too ill-conditioned to eliminate the load buses "
                f"(cond = {np.linalg.cond(self.L_ll):.3g})")

    @property
    def L_theta(self):
        return np.block([[self.L_gg, self.L_gl], [self.L_lg, self.L_ll]])

    @property
    def n_gen(self):
        return self.M_g.shape[0]

    @property
    def n_load(self):
        return self.L_ll.shape[0]

    @classmethod
    def wecc(cls, P_omega=None, P_theta=None):
        """The 3-generator, 6-bus WECC network with ``B_omega = I``, ``B_theta = 0``."""
        L = WECC_L_THETA
        return cls(
            M_g=WECC_M_G, E_g=WECC_E_G,
            L_gg=L[:3, :3], L_gl=L[:3, 3:], L_lg=L[3:, :3], L_ll=L[3:, 3:],
            B_omega=np.eye(3), B_theta=np.zeros((6, 3)),
            P_omega=np.zeros(3) if P_omega is None else P_omega,
            P_theta=np.zeros(6) if P_theta is None else P_theta,
        )


@dataclass(frozen=True)
class ThetaRecovery:
    """Affine map ``theta = K_delta @ delta + K_d @ d + offset``.

    Recovers the eliminated bus angles from the rotor angles and the state
    attack.  :meth:`residual` evaluates the algebraic rows of the descriptor
    model and is zero (to rounding) on recovered angles.
    """

    K_delta: np.ndarray
    K_d: np.ndarray
    offset: np.ndarray
    net: DescriptorPowerNetwork = field(repr=False)

    def __call__(self, delta, d=None):
        delta = np.asarray(delta, dtype=float)
        theta = self.K_delta @ delta + self.offset
        if d is not None and self.K_d.shape[1]:
            theta = theta + self.K_d @ np.asarray(d, dtype=float)
        return theta

    def residual(self, delta, theta, d=None):
        net = self.net
        r = -(net.L_lg @ delta + net.L_ll @ theta) + net.P_theta
        if d is not None and net.B_theta.shape[1]:
            r = r + net.B_theta @ np.asarray(d, dtype=float)
        return r


def kron_reduce(net: DescriptorPowerNetwork):
    """Eliminate the load-bus angles of a descriptor network.

    Returns
    -------
    plant : LinearPlant
        States ``(delta, omega)``; ``C`` is the identity and no sensor attack
        is attached (``build_wecc`` adds the measurement side).
    theta : ThetaRecovery
        Affine recovery of the bus angles.
    """
    ng = net.n_gen
    Minv = np.diag(1.0 / np.diag(net.M_g))
    # X = L_ll^{-1} [L_lg, P_theta, B_theta] in a single factorization
    rhs = np.column_stack([net.L_lg, net.P_theta, net.B_theta])
    X = np.linalg.solve(net.L_ll, rhs)
    Ll_inv_Llg = X[:, :ng]
    Ll_inv_P = X[:, ng]
    Ll_inv_B = X[:, ng + 1:]

    K_red = net.L_gg - net.L_gl @ Ll_inv_Llg
    A = np.block([
        [np.zeros((ng, ng)), np.eye(ng)],
        [-Minv @ K_red, -Minv @ net.E_g],
    ])
    B_thw = Minv @ (net.B_omega - net.L_gl @ Ll_inv_B)
    P_thw = Minv @ (net.P_omega - net.L_gl @ Ll_inv_P)
    B1 = np.vstack([np.zeros((ng, B_thw.shape[1])), B_thw])
    bias = np.concatenate([np.zeros(ng), P_thw])
    plant = LinearPlant(A=A, B1=B1, C=np.eye(2 * ng), D1=np.zeros((2 * ng, 0)), bias=bias)
    recovery = ThetaRecovery(K_delta=-Ll_inv_Llg, K_d=Ll_inv_B, offset=Ll_inv_P, net=net)
    return plant, recovery


# ---------------------------------------------------------------------------
# Linear plant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearPlant:
    """``x' = A x + bias + B1 d_x``,  ``y = C x + D1 d_y``.

    Rows of ``D1`` that are identically zero are *protected* measurements.
    Set ``sparse_d1`` when there are more sensor-attack sources than
    corrupted sensors (``D1`` is then wide on its nonzero rows and cannot
    have full column rank).  ``open_loop_unstable`` waives the stability
    check.
    """

    A: np.ndarray
    B1: np.ndarray
    C: np.ndarray
    D1: np.ndarray
    bias: Optional[np.ndarray] = None
    sparse_d1: bool = False
    open_loop_unstable: bool = False

    def __post_init__(self):
        A = _as2d(self.A, name="A")
        n = A.shape[0]
        if A.shape[1] != n:
            raise DimensionMismatch("A must be square")
        B1 = _as2d(self.B1, n, name="B1")
        C = _as2d(self.C, cols=n, name="C")
        D1 = _as2d(self.D1, C.shape[0], name="D1")
        bias = np.zeros(n) if self.bias is None else np.asarray(self.bias, float).reshape(-1)
        if bias.size != n:
            raise DimensionMismatch("bias must have length n")
        for k, v in (("A", A), ("B1", B1), ("C", C), ("D1", D1), ("bias", bias)):
            v.setflags(write=False)
            object.__setattr__(self, k, v)

        if not _full_column_rank(B1):
            raise RankDeficientB("B1 must have full column rank")
        if not self.sparse_d1 and not _full_column_rank(D1):
            raise RankDeficientD("D1 must have full column rank (set sparse_d1 for wide attack sets)")
        if self.p < self.m - self.m1:
            raise DimensionMismatch("need p >= m - m1")
        if not self.open_loop_unstable and n:
            worst = np.max(np.linalg.eigvals(A).real)
            if worst >= 0:
                raise UnstablePlant(f"A has an eigenvalue with real part {worst:.3g}")

    # dimensions ------------------------------------------------------------
    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def m1(self):
        return self.B1.shape[1]

    @property
    def m(self):
        return self.m1 + self.D1.shape[1]

    # measurement split -----------------------------------------------------
    @property
    def protected_rows(self):
        return np.flatnonzero(~np.any(self.D1 != 0, axis=1))

    @property
    def corrupted_rows(self):
        return np.flatnonzero(np.any(self.D1 != 0, axis=1))

    @property
    def p1(self):
        """Number of protected measurements (rows of ``D1`` equal to zero)."""
        return self.protected_rows.size

    @property
    def p1_partition(self):
        """``p - (m - m1)``: protected count under the generic measurement split."""
        return self.p - (self.m - self.m1)

    @property
    def C1(self):
        return self.C[self.protected_rows]

    @property
    def C2(self):
        return self.C[self.corrupted_rows]

    @property
    def D1bar(self):
        return self.D1[self.corrupted_rows]

    @property
    def B_full(self):
        """``B = [B1 0]`` acting on the stacked attack ``d = (d_x, d_y)``."""
        return np.hstack([self.B1, np.zeros((self.n, self.D1.shape[1]))])

    @property
    def D_full(self):
        """``D = [0 D1]`` acting on the stacked attack ``d = (d_x, d_y)``."""
        return np.hstack([np.zeros((self.p, self.m1)), self.D1])

    def measurement_partition(self):
        """Return ``(M, M_inv, D1bar)`` with ``M^-1 D1 = [0; D1bar]``.

        Only defined when ``D1`` has full column rank.
        """
        from .transforms import build_measurement_transform
        return build_measurement_transform(self.D1)

    def derivative(self, x, d_x=None):
        dx = self.A @ x + self.bias
        if d_x is not None and self.m1:
            dx = dx + self.B1 @ d_x
        return dx

    def output(self, x, d_y=None):
        y = self.C @ x
        if d_y is not None and self.D1.shape[1]:
            y = y + self.D1 @ d_y
        return y


def build_wecc(net: Optional[DescriptorPowerNetwork] = None, *, plant_attack=True,
               sensor_attack="d_omega", P_omega=None, P_theta=None) -> LinearPlant:
    """Kron-reduced WECC plant with the case-study measurement layout.

    Rotor angles are protected measurements, speed sensors are attacked.

    Parameters
    ----------
    plant_attack : bool
        Deception attacks enter the speed dynamics through ``M_g^-1``.
    sensor_attack : {"d_omega", "identity", "none"}
        ``"d_omega"`` uses the 3x6 distribution of six sparse sources,
        ``"identity"`` attacks each speed sensor with its own channel.
    """
    if net is None:
        net = DescriptorPowerNetwork.wecc(P_omega=P_omega, P_theta=P_theta)
    reduced, _ = kron_reduce(net)
    ng = net.n_gen
    B1 = reduced.B1 if plant_attack else np.zeros((2 * ng, 0))
    if sensor_attack == "d_omega":
        D1 = np.vstack([np.zeros((ng, 6)), WECC_D_OMEGA])
    elif sensor_attack == "identity":
        D1 = np.vstack([np.zeros((ng, ng)), np.eye(ng)])
    elif sensor_attack == "none":
        D1 = np.zeros((2 * ng, 0))
    else:
        raise ValueError(f"unknown sensor_attack {sensor_attack!r}")
    return LinearPlant(A=reduced.A, B1=B1, C=np.eye(2 * ng), D1=D1, bias=reduced.bias,
                       sparse_d1=sensor_attack == "d_omega")


# ---------------------------------------------------------------------------
# Attack signals
# ---------------------------------------------------------------------------

def _unit(t, t0):
    return 1.0 if t >= t0 else 0.0


@dataclass(frozen=True)
class Step:
    """``amplitude * 1(t - t0)``."""
    t0: float
    amplitude: float = 1.0

    def __call__(self, t, x=None):
        return self.amplitude if t >= self.t0 else 0.0


@dataclass(frozen=True)
class Sine:
    """``amplitude * sin(omega t + phase) * 1(t - t0)``."""
    amplitude: float
    omega: float
    phase: float = 0.0
    t0: float = 0.0

    def __call__(self, t, x=None):
        if t < self.t0:
            return 0.0
        return self.amplitude * math.sin(self.omega * t + self.phase)


@dataclass(frozen=True)
class Constant:
    """``c * 1(t - t0)``."""
    c: float
    t0: float = 0.0

    def __call__(self, t, x=None):
        return self.c if t >= self.t0 else 0.0


@dataclass(frozen=True)
class StateFeedback:
    """``gain * x[state]``; only meaningful for stealth attacks that cancel a state."""
    state: int
    gain: float = -1.0

    def __call__(self, t, x=None):
        if x is None:
            raise ValueError("state-feedback attack term needs the plant state")
        return self.gain * float(x[self.state])


Term = Union[Step, Sine, Constant, StateFeedback]


@dataclass(frozen=True)
class AttackSignal:
    """Per-channel sums of primitive terms, optionally gated by ``1(t - gate)``.

    ``channels[i]`` is the tuple of terms for channel ``i``; an empty tuple
    is a channel that is identically zero.
    """

    channels: tuple = ()
    gate: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(tuple(c) for c in self.channels))

    @classmethod
    def zeros(cls, dimension):
        return cls(channels=((),) * dimension)

    @property
    def dimension(self):
        return len(self.channels)

    @property
    def needs_state(self):
        return any(isinstance(term, StateFeedback) for ch in self.channels for term in ch)

    @property
    def breakpoints(self):
        """Sorted times at which some term switches on."""
        pts = set()
        if self.gate is not None:
            pts.add(float(self.gate))
        for ch in self.channels:
            for term in ch:
                t0 = getattr(term, "t0", None)
                if t0 is not None:
                    pts.add(float(t0))
        return tuple(sorted(pts))

    def __call__(self, t, x=None):
        return eval_attack(self, t, x)


def eval_attack(sig: AttackSignal, t: float, x=None) -> np.ndarray:
    """Evaluate every channel of ``sig`` at time ``t`` (``x`` feeds state terms)."""
    out = np.zeros(sig.dimension)
    if sig.gate is not None and t < sig.gate:
        return out
    for i, terms in enumerate(sig.channels):
        acc = 0.0
        for term in terms:
            acc += term(t, x)
        out[i] = acc
    return out


def wecc_plant_attack() -> AttackSignal:
    """Deception attacks of the case study, switched on at ``t = 10`` s."""
    return AttackSignal(
        channels=(
            (Sine(1.0, 0.5),),
            (Step(0.0, 1.0), Step(4.0, -1.0), Step(8.5, 1.0), Step(13.0, -1.0), Step(17.5, 1.0)),
            (Sine(1.0, 1.0, math.pi / 2), Sine(0.5, 3.0)),
        ),
        gate=10.0,
    )


def wecc_sensor_attack() -> AttackSignal:
    """One of six stealth sources active: ``sin(t)`` on source 5 from ``t = 10`` s."""
    channels = [()] * 6
    channels[4] = (Sine(1.0, 1.0),)
    return AttackSignal(channels=tuple(channels), gate=10.0)


def stealth_attack(feedback=True, omega_states=(3, 4, 5)) -> AttackSignal:
    """Stealth attacks on the three speed sensors.

    With ``feedback`` each channel first cancels the true speed it corrupts.
    """
    w1, w2, w3 = omega_states
    sines = (
        (Sine(2.0, math.pi),),
        (Sine(1.0, 0.5 * math.pi, math.pi / 2),),
        (Sine(1.0, math.pi),),
    )
    if not feedback:
        return AttackSignal(channels=sines)
    fb = (StateFeedback(w1), StateFeedback(w2), StateFeedback(w3))
    return AttackSignal(channels=tuple((f,) + s for f, s in zip(fb, sines)))


def sensor_sine_attack() -> AttackSignal:
    """The stealth sinusoids without the state-cancelling part.

    This is the bounded, smooth signal used to exercise the sensor-attack
    sliding-mode observer (each speed sensor has its own channel).
    """
    return stealth_attack(feedback=False)
