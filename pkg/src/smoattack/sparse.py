"""Sparse attack recovery by finite-time shrinkage dynamics.

``xi = Phi s + noise`` with more columns than rows is solved through ::

    mu v' = -[v + (Phi^T Phi - I) a - Phi^T xi]^beta,   a = H_lam(v)

whose equilibria are the LASSO minimizers of
``0.5 ||xi - Phi a||^2 + lam ||a||_1``.  With ``beta < 1`` the flow reaches
its equilibrium in finite time; under explicit Euler it would instead
chatter with amplitude about ``(dt/mu)^2``, so entries of the bracket below a
dead-band are treated as zero.

Also here: exhaustive restricted-isometry constants, and the low-pass
filtered extension of a linear plant that turns attack reconstruction into
the algebraic problem ``Z_p = F d``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, TooManySupports, ZeroDynamicsPresent
from .hosm_diff import Differentiator, diff_step, make_differentiator

__all__ = [
    "Dictionary", "SrState", "SrResult", "RipResult", "FilteredSystem",
    "soft_threshold", "sr_init", "sr_step", "sr_rate", "sr_solve", "default_lambda",
    "rip_check", "build_filtered_system", "MAX_SUPPORTS",
]

MAX_SUPPORTS = 10 ** 6


def soft_threshold(v, lam):
    """Elementwise ``max(|v| - lam, 0) sign(v)``."""
    v = np.asarray(v, dtype=float)
    return np.maximum(np.abs(v) - lam, 0.0) * np.sign(v)


@dataclass(frozen=True)
class Dictionary:
    """Dictionary ``Phi`` with its original column norms.

    ``Dictionary.from_matrix(D)`` normalizes the columns; coefficients found
    on the normalized dictionary are mapped back with :meth:`rescale`.
    """

    Phi: np.ndarray
    column_norms: np.ndarray
    normalized: bool

    def __post_init__(self):
        if np.any(self.column_norms <= 0):
            raise ValueError("dictionary has a zero column")
        if self.normalized:
            cn = np.linalg.norm(self.Phi, axis=0)
            if np.max(np.abs(cn - 1.0)) > 1e-12:
                raise ValueError("normalized dictionary columns must have unit norm")

    @classmethod
    def from_matrix(cls, D, normalize=True):
        D = np.atleast_2d(np.asarray(D, dtype=float))
        cn = np.linalg.norm(D, axis=0)
        if np.any(cn == 0):
            raise ValueError("dictionary has a zero column")
        if normalize:
            return cls(D / cn, cn, True)
        return cls(D.copy(), cn, False)

    @property
    def shape(self):
        return self.Phi.shape

    def rescale(self, a):
        """Coefficients of the original (unnormalized) matrix."""
        return a / self.column_norms if self.normalized else np.asarray(a, dtype=float)

    @property
    def raw(self):
        return self.Phi * self.column_norms if self.normalized else self.Phi


@dataclass(frozen=True)
class SrState:
    """Shrinkage-dynamics state; ``a`` is always recomputed from ``v``."""

    v: np.ndarray
    mu: float = 0.01
    lam: float = 0.1
    beta: float = 0.5
    deadband: float = 0.0

    def __post_init__(self):
        if self.mu <= 0 or self.lam <= 0:
            raise ValueError("mu and lambda must be positive")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.deadband < 0:
            raise ValueError("dead-band must be nonnegative")

    @property
    def a(self):
        return soft_threshold(self.v, self.lam)


def default_deadband(dt, mu, beta):
    """``(dt/mu)^2`` for ``beta < 1`` (Euler chattering amplitude), else 0."""
    return (dt / mu) ** 2 if beta < 1 else 0.0


def default_lambda(Phi, xi):
    """Data-scaled threshold ``0.1 ||Phi^T xi||_inf`` (floored at 1e-12)."""
    return max(0.1 * float(np.max(np.abs(Phi.T @ np.asarray(xi, dtype=float)), initial=0.0)), 1e-12)


def sr_init(N, mu=0.01, lam=0.1, beta=0.5, dt=None, deadband=None, v0=None):
    if deadband is None:
        deadband = 0.0 if dt is None else default_deadband(dt, mu, beta)
    v = np.zeros(N) if v0 is None else np.asarray(v0, dtype=float).copy()
    return SrState(v, float(mu), float(lam), float(beta), float(deadband))


def _gram_minus_identity(Phi):
    return Phi.T @ Phi - np.eye(Phi.shape[1])


def sr_rate(state: SrState, Phi, xi, G=None):
    """``v'`` at the current state (``G`` is an optional cached ``Phi^T Phi - I``)."""
    Phi = np.asarray(Phi, dtype=float)
    if G is None:
        G = _gram_minus_identity(Phi)
    g = state.v + G @ state.a - Phi.T @ np.asarray(xi, dtype=float)
    if state.deadband > 0:
        g = np.where(np.abs(g) <= state.deadband, 0.0, g)
    return -np.abs(g) ** state.beta * np.sign(g) / state.mu


def sr_step(state: SrState, Phi, xi, dt, G=None) -> SrState:
    """One Euler step of the shrinkage dynamics."""
    Phi = np.asarray(Phi, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if Phi.shape != (xi.shape[0], state.v.shape[0]):
        raise DimensionMismatch(f"Phi must be {xi.shape[0]}x{state.v.shape[0]}")
    return replace(state, v=state.v + dt * sr_rate(state, Phi, xi, G))


@dataclass(frozen=True)
class SrResult:
    a: np.ndarray
    coefficients: np.ndarray
    support: tuple
    residual: float
    iterations: int
    converged: bool
    lam: float
    v: np.ndarray

    def as_dict(self):
        return {
            "a": self.a.tolist(), "coefficients": self.coefficients.tolist(),
            "support": [i + 1 for i in self.support], "residual": self.residual,
            "iterations": self.iterations, "converged": self.converged, "lambda": self.lam,
        }


def sr_solve(Phi, xi, lam=None, mu=0.01, beta=0.5, dt=1e-4, tol=1e-8, max_steps=10 ** 6,
             deadband=None, normalize=True, sparsity=None, support_tol=0.0):
    """Integrate the shrinkage dynamics to convergence on a static ``xi``.

    Converged means ``||v'||_inf < tol``.  When the step budget runs out the
    result carries ``converged=False`` and a warning is emitted.

    Parameters
    ----------
    Phi : (M, N) array_like
        Raw dictionary; normalized internally when ``normalize``.
    sparsity : int, optional
        Intended number of nonzeros; a warning is raised above ``(M-1)/2``.
    """
    dic = Phi if isinstance(Phi, Dictionary) else Dictionary.from_matrix(Phi, normalize)
    P = dic.Phi
    xi = np.asarray(xi, dtype=float)
    M, N = P.shape
    if sparsity is not None and sparsity > (M - 1) / 2:
        warnings.warn(f"sparsity {sparsity} exceeds the uniqueness bound (M-1)/2 = {(M - 1) / 2}",
                      RuntimeWarning, stacklevel=2)
    lam = default_lambda(P, xi) if lam is None else float(lam)
    st = sr_init(N, mu, lam, beta, dt=dt, deadband=deadband)
    G = _gram_minus_identity(P)
    converged = False
    it = 0
    for it in range(1, max_steps + 1):
        rate = sr_rate(st, P, xi, G)
        if np.max(np.abs(rate)) < tol:
            converged = True
            it -= 1
            break
        st = replace(st, v=st.v + dt * rate)
    if not converged:
        warnings.warn(f"shrinkage dynamics did not converge in {max_steps} steps",
                      RuntimeWarning, stacklevel=2)
    a = st.a
    coef = dic.rescale(a)
    support = tuple(int(i) for i in np.flatnonzero(np.abs(a) > support_tol))
    res = float(np.linalg.norm(xi - P @ a))
    return SrResult(a, coef, support, res, it, converged, lam, st.v)


# ---------------------------------------------------------------------------
# Restricted isometry constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RipResult:
    j: int
    constant: float
    worst_support: tuple
    eig_min: float
    eig_max: float

    @property
    def satisfied(self):
        return self.constant < 1.0


def rip_check(Phi, j, max_supports=MAX_SUPPORTS) -> RipResult:
    """Exact order-``j`` isometry constant by enumerating all supports.

    ``constant = max over |S| = j of max(1 - eig_min, eig_max - 1)`` of the
    Gram submatrix ``Phi_S^T Phi_S``.  ``worst_support`` is 0-based.
    """
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    N = Phi.shape[1]
    if not 1 <= j <= N:
        raise ValueError("support size must lie in 1..N")
    count = math.comb(N, j)
    if count > max_supports:
        raise TooManySupports(f"C({N}, {j}) = {count} supports exceeds {max_supports}")
    best, worst, lo_w, hi_w = -np.inf, None, None, None
    for S in itertools.combinations(range(N), j):
        sub = Phi[:, S]
        ev = np.linalg.eigvalsh(sub.T @ sub)
        c = max(1.0 - ev[0], ev[-1] - 1.0)
        if c > best:
            best, worst, lo_w, hi_w = c, S, ev[0], ev[-1]
    return RipResult(j, float(best), tuple(worst), float(lo_w), float(hi_w))


# ---------------------------------------------------------------------------
# Filtered system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilteredSystem:
    """Plant extended with the output filter ``tau z' = -z + y``.

    Augmented state ``xi = (z, x)``; ``xi' = A_aug xi + b_aug + Omega d``,
    ``psi = C_aug xi = z``.  ``r`` holds the relative degree of each
    ``z_i`` with respect to ``Omega``; ``F = [C_i A_aug^(r_i-1) Omega]``.
    ``Theta`` stacks the rows ``C_i A_aug^k`` (``k < r_i``) so that the
    lower part of the derivative jets equals ``Theta xi``.
    """

    tau: float
    n: int
    p: int
    A_aug: np.ndarray
    b_aug: np.ndarray
    Omega: np.ndarray
    C_aug: np.ndarray
    r: tuple
    F: np.ndarray
    Theta: np.ndarray
    drift_rows: np.ndarray  # C_i A_aug^(r_i)
    drift_bias: np.ndarray  # sum_k C_i A_aug^k b_aug over k < r_i

    def filter_step(self, z, y, dt):
        return z + dt * (np.asarray(y, dtype=float) - z) / self.tau

    def differentiators(self, L_lip, z0=None):
        """One Levant differentiator per filtered output, order ``r_i``."""
        L = np.broadcast_to(np.asarray(L_lip, dtype=float), (self.p,))
        z0 = np.zeros(self.p) if z0 is None else np.asarray(z0, dtype=float)
        return [make_differentiator(ri, L[i], first_sample=z0[i]) for i, ri in enumerate(self.r)]

    @staticmethod
    def advance(diffs, z, dt):
        return [diff_step(d, np.atleast_1d(z[i]), dt) for i, d in enumerate(diffs)]

    def assemble(self, jets):
        """``(Z_p, F, xi_hat)`` from per-output derivative jets.

        ``jets[i]`` has ``r_i + 1`` entries: estimates of ``z_i`` and its
        first ``r_i`` derivatives.
        """
        low, top = [], []
        for i, ri in enumerate(self.r):
            jet = np.asarray(jets[i], dtype=float).ravel()
            if jet.size != ri + 1:
                raise DimensionMismatch(f"jet {i} needs {ri + 1} entries")
            low.extend(jet[:ri])
            top.append(jet[ri])
        xi_hat = np.linalg.solve(self.Theta, np.asarray(low) - self._low_bias)
        Z = np.asarray(top) - self.drift_rows @ xi_hat - self.drift_bias
        return Z, self.F, xi_hat

    @property
    def _low_bias(self):
        # constant part of the lower jet entries, from the known input
        out = []
        for i, ri in enumerate(self.r):
            row = self.C_aug[i]
            acc = 0.0
            for k in range(ri):
                out.append(acc)
                acc = acc + row @ self.b_aug
                row = row @ self.A_aug
        return np.asarray(out)


def build_filtered_system(plant, tau, B=None, D=None) -> FilteredSystem:
    """Filtered extension of a linear plant.

    Parameters
    ----------
    plant : LinearPlant
    tau : float
        Output filter time constant.
    B, D : array_like, optional
        Attack distributions; default to the stacked ``[B1 0]`` and ``[0 D1]``.

    Raises
    ------
    ZeroDynamicsPresent
        If the relative degrees do not add up to ``n + p``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    A, C = plant.A, plant.C
    n, p = plant.n, plant.p
    B = plant.B_full if B is None else np.asarray(B, dtype=float).reshape(n, -1)
    D = plant.D_full if D is None else np.asarray(D, dtype=float).reshape(p, -1)
    if B.shape[1] != D.shape[1]:
        raise DimensionMismatch("B and D must have the same number of attack channels")
    A_aug = np.block([[-np.eye(p) / tau, C / tau], [np.zeros((n, p)), A]])
    b_aug = np.concatenate([np.zeros(p), plant.bias])
    Omega = np.vstack([D / tau, B])
    C_aug = np.hstack([np.eye(p), np.zeros((p, n))])
    nn = n + p
    scale = max(1.0, np.abs(Omega).max(initial=0.0))
    r, F_rows, theta, drift, dbias = [], [], [], [], []
    for i in range(p):
        row = C_aug[i].copy()
        acc = 0.0
        for k in range(nn):
            theta.append(row)
            g = row @ Omega
            if np.max(np.abs(g), initial=0.0) > 1e-10 * scale * max(1.0, np.abs(row).max()):
                r.append(k + 1)
                F_rows.append(g)
                acc = acc + row @ b_aug
                drift.append(row @ A_aug)
                dbias.append(acc)
                break
            acc = acc + row @ b_aug
            row = row @ A_aug
        else:
            raise ZeroDynamicsPresent(f"filtered output {i} never sees the attack")
    if sum(r) != nn:
        raise ZeroDynamicsPresent(
            f"relative degrees {tuple(r)} sum to {sum(r)} < n + p = {nn}; zero dynamics present")
    Theta = np.array(theta)
    if np.linalg.matrix_rank(Theta) < nn:
        raise ZeroDynamicsPresent("output jets do not determine the augmented state")
    return FilteredSystem(float(tau), n, p, A_aug, b_aug, Omega, C_aug, tuple(r),
                          np.array(F_rows), Theta, np.array(drift), np.array(dbias))
