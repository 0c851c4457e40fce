"""Coordinate changes that expose protected and corrupted measurements.

The chain is ``x -> T_c x`` (measured states last), ``x1 -> x1 + L x2``
(stable unmeasured block), ``x2 -> Q x2`` (attack enters only the last
``m`` scaled outputs).  Blocks that are zero by construction are stored as
exact zeros, never as the numerically computed near-zero product.

The module also computes input-output relative degrees and the augmented
output matrix ``C_a`` used by the super-twisting observer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr
from scipy.signal import place_poles

from .errors import (
    DimensionMismatch,
    InvalidPoles,
    NoFiniteRelativeDegree,
    RankDeficientC,
    RankDeficientCaB,
    RankDeficientD,
    UnobservablePair,
)

__all__ = [
    "TransformChain", "RelativeDegreeProfile",
    "build_output_transform", "design_L", "build_scaling_Q",
    "build_measurement_transform", "assemble_partition", "build_chain",
    "relative_degrees", "default_observer_poles", "chain_residuals",
]

HURWITZ_MARGIN = 1e-6
_RANK_TOL = 1e-10


def _rank(a):
    if a.size == 0:
        return 0
    return int(np.linalg.matrix_rank(a, tol=_RANK_TOL * max(1.0, np.abs(a).max())))


def _sign_fix(rows):
    """Flip rows so the first entry that is not negligible is positive."""
    out = rows.copy()
    for i, r in enumerate(out):
        nz = np.flatnonzero(np.abs(r) > 1e-12)
        if nz.size and r[nz[0]] < 0:
            out[i] = -r
    return out


def default_observer_poles(count, start=-5.0):
    """Real, distinct poles ``start, start-1, ...``."""
    return start - np.arange(count, dtype=float)


# ---------------------------------------------------------------------------
# Output transform T_c = [N; C]
# ---------------------------------------------------------------------------

def _null_rows(C):
    """Deterministic orthonormal basis of the null space of ``C`` as rows.

    The null-space projector is applied to the unit vectors in index order
    and the images are orthonormalized (Gram-Schmidt, twice for stability).
    Vectors that add no new direction are dropped.  For ``C = [0 I]`` this
    gives ``N = [I 0]`` exactly.
    """
    p, n = C.shape
    k = n - p
    if k == 0:
        return np.zeros((0, n))
    # projector onto null(C) from the SVD right singular vectors
    _, _, vt = np.linalg.svd(C)
    V0 = vt[p:].T
    proj = V0 @ V0.T
    basis = []
    for j in range(n):
        v = proj[:, j].copy()
        for _ in range(2):
            for b in basis:
                v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            basis.append(v / nv)
            if len(basis) == k:
                break
    N = np.array(basis)
    # snap rounding noise so canonical cases come out exact
    N[np.abs(N) < 1e-15] = 0.0
    return _sign_fix(N)


def build_output_transform(C):
    """Complete ``C`` to a nonsingular ``T_c = [N; C]``.

    Parameters
    ----------
    C : (p, n) array_like
        Full-row-rank output matrix.

    Returns
    -------
    N : (n-p, n) ndarray
    T_c, T_c_inv : (n, n) ndarray
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    p, n = C.shape
    if p > n or _rank(C) < p:
        raise RankDeficientC(f"C ({p}x{n}) must have full row rank")
    N = _null_rows(C)
    T = np.vstack([N, C])
    Tinv = np.linalg.inv(T)
    return N, T, Tinv


# ---------------------------------------------------------------------------
# L design (dual pole placement)
# ---------------------------------------------------------------------------

def _observable(A, C):
    n = A.shape[0]
    if n == 0:
        return True
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return _rank(np.vstack(blocks)) == n


def design_L(A11, A21, poles=None):
    """Gain ``L`` placing ``eig(A11 + L A21)`` at ``poles``.

    Solved as state feedback on the dual pair ``(A11^T, A21^T)``.  When
    ``A21`` has more rows than independent directions only its row space is
    used, which keeps the placement problem well posed.
    """
    A11 = np.atleast_2d(np.asarray(A11, dtype=float))
    A21 = np.atleast_2d(np.asarray(A21, dtype=float))
    k = A11.shape[0]
    if A21.shape[1] != k:
        raise DimensionMismatch("A21 must have as many columns as A11 has rows")
    p = A21.shape[0]
    if k == 0:
        return np.zeros((0, p))
    poles = default_observer_poles(k) if poles is None else np.asarray(poles, dtype=complex).ravel()
    if poles.size != k:
        raise InvalidPoles(f"need {k} target poles, got {poles.size}")
    if np.any(poles.real >= 0):
        raise InvalidPoles("target poles must lie in the open left half-plane")
    if not _observable(A11, A21):
        raise UnobservablePair("(A11, A21) is not observable")

    Bd = A21.T  # (k, p)
    u, s, _ = np.linalg.svd(Bd, full_matrices=False)
    r = int(np.sum(s > _RANK_TOL * max(1.0, s[0]))) if s.size else 0
    Ur = u[:, :r]
    if np.all(np.isreal(poles)):
        poles = poles.real
    try:
        K = place_poles(A11.T, Ur, poles, method="YT").gain_matrix
    except ValueError as exc:
        raise InvalidPoles(str(exc)) from exc
    # A21^T L^T = -Ur K with A21^T pinv(A21^T) Ur = Ur
    Lt = -np.linalg.pinv(Bd) @ Ur @ K
    return Lt.T


# ---------------------------------------------------------------------------
# Output scaling Q and measurement transform M
# ---------------------------------------------------------------------------

def _pivot_rows(D):
    """Row indices of ``D`` forming a nonsingular block (lowest index on ties)."""
    m = D.shape[1]
    _, _, piv = qr(D.T, mode="economic", pivoting=True)
    return np.sort(piv[:m])


def build_scaling_Q(D1):
    """Nonsingular ``Q`` with ``Q D1 = [0; D2]``.

    Rows of ``D1`` are split into a nonsingular pivot block ``D_p`` (picked
    by pivoted QR) and the rest ``D_o``; then
    ``Q = [[I, -D_o D_p^-1], [0, I]] @ Pi`` where ``Pi`` moves the non-pivot
    rows first and the pivot rows last, both in ascending index order.

    Returns
    -------
    Q : (p, p) ndarray
    D2 : (m, m) ndarray
        Equal to the pivot rows of ``D1``.
    """
    D = np.atleast_2d(np.asarray(D1, dtype=float))
    p, m = D.shape
    if m == 0:
        return np.eye(p), np.zeros((0, 0))
    if p <= m:
        raise DimensionMismatch(f"need more outputs than attack channels (p={p}, m={m})")
    if _rank(D) < m:
        raise RankDeficientD("D must have full column rank")
    piv = _pivot_rows(D)
    other = np.setdiff1d(np.arange(p), piv)
    perm = np.concatenate([other, piv])
    Pi = np.eye(p)[perm]
    Dp = D[piv]
    Do = D[other]
    E = np.eye(p)
    E[: p - m, p - m:] = -np.linalg.solve(Dp.T, Do.T).T
    Q = E @ Pi
    Q[np.abs(Q) < 1e-15] = 0.0
    return Q, Dp.copy()


def build_measurement_transform(D1):
    """``(M, M_inv, D1bar)`` with ``y = M ybar`` and ``M^-1 D1 = [0; D1bar]``."""
    Minv, D1bar = build_scaling_Q(D1)
    return np.linalg.inv(Minv), Minv, D1bar


# ---------------------------------------------------------------------------
# Partitioned chain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransformChain:
    """All matrices of the chain ``xbar = T x`` and the partitioned system.

    ``T = [[I, L], [0, Q]] @ T_c``.  Index sets follow the partition
    ``xbar = (xbar1, xbar21, xbar22)`` of sizes ``(n-p, p-m, m)``.
    ``provenance`` records for every stored block whether it is a
    structural (exact) zero/identity or a computed quantity.
    """

    n: int
    p: int
    m: int
    N: np.ndarray
    T_c: np.ndarray
    T_c_inv: np.ndarray
    L_gain: np.ndarray
    Q: np.ndarray
    D2: np.ndarray
    QD: np.ndarray
    C_prime: np.ndarray
    A_prime: np.ndarray
    B_prime: np.ndarray
    Abar: np.ndarray
    Bbar: np.ndarray
    Cbar1: np.ndarray
    Cbar2: np.ndarray
    T: np.ndarray
    T_inv: np.ndarray
    bias_bar: np.ndarray
    provenance: dict = field(default_factory=dict, repr=False)

    # partition helpers -------------------------------------------------------
    @property
    def sizes(self):
        return self.n - self.p, self.p - self.m, self.m

    @property
    def slices(self):
        k, q, m = self.sizes
        return slice(0, k), slice(k, k + q), slice(k + q, k + q + m)

    def block(self, name):
        """Named block of the partition (``A11``, ``A12a``, ..., ``B22``)."""
        s1, s21, s22 = self.slices
        table = {
            "A11": (s1, s1), "A12a": (s1, s21), "A12b": (s1, s22),
            "A21a": (s21, s1), "A22a": (s21, s21), "A22b": (s21, s22),
            "A21b": (s22, s1), "A22c": (s22, s21), "A22d": (s22, s22),
        }
        if name in table:
            r, c = table[name]
            return self.Abar[r, c]
        rows = {"B1": s1, "B21": s21, "B22": s22}
        if name in rows:
            return self.Bbar[rows[name]]
        raise KeyError(name)

    @property
    def A11(self):
        return self.block("A11")

    def to_bar(self, x):
        return self.T @ x

    def from_bar(self, xbar):
        return self.T_inv @ xbar

    def scale_output(self, y):
        """``ybar = Q y`` split into ``(ybar1, ybar2)``."""
        yb = self.Q @ y
        return yb[: self.p - self.m], yb[self.p - self.m:]

    def hurwitz_margin(self):
        if self.n == self.p:
            return np.inf
        return -np.max(np.linalg.eigvals(self.A11).real)


def assemble_partition(plant, L_gain=None, Q=None, *, B=None, D=None, poles=None,
                       eps_hurwitz=HURWITZ_MARGIN):
    """Build the full chain for ``x' = A x + B d``, ``y = C x + D d``.

    ``B`` and ``D`` default to the stacked attack matrices of ``plant``
    (``[B1 0]`` and ``[0 D1]``).  ``L_gain`` and ``Q`` are designed when not
    supplied.
    """
    A, C = plant.A, plant.C
    B = plant.B_full if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    D = plant.D_full if D is None else np.atleast_2d(np.asarray(D, dtype=float))
    n, p = A.shape[0], C.shape[0]
    m = D.shape[1]
    if B.shape != (n, m) or D.shape[0] != p:
        raise DimensionMismatch("B must be n x m and D p x m")

    N, T_c, T_c_inv = build_output_transform(C)
    k = n - p
    A_p = T_c @ A @ T_c_inv
    B_p = T_c @ B
    A11, A12 = A_p[:k, :k], A_p[:k, k:]
    A21, A22 = A_p[k:, :k], A_p[k:, k:]
    B1, B2 = B_p[:k], B_p[k:]

    if L_gain is None:
        L_gain = design_L(A11, A21, poles)
    L_gain = np.asarray(L_gain, dtype=float).reshape(k, p)
    if Q is None:
        Q, D2 = build_scaling_Q(D)
    else:
        Q = np.asarray(Q, dtype=float)
        QD_num = Q @ D
        if np.max(np.abs(QD_num[: p - m]), initial=0.0) > 1e-12:
            raise RankDeficientD("supplied Q does not zero the top block of Q D")
        D2 = QD_num[p - m:]
    if m and _rank(D2) < m:
        raise RankDeficientD("D2 is singular")
    Qinv = np.linalg.inv(Q)

    # tilde system after xbar1 = x1 + L x2
    At11 = A11 + L_gain @ A21
    At12 = -A11 @ L_gain + A12 - L_gain @ A21 @ L_gain + L_gain @ A22
    Bt1 = B1 + L_gain @ B2
    At21 = A21
    At22 = A22 - A21 @ L_gain
    Bt2 = B2
    # bar system after xbar2 = Q x2
    Abar = np.block([[At11, At12 @ Qinv], [Q @ At21, Q @ At22 @ Qinv]])
    Bbar = np.vstack([Bt1, Q @ Bt2])

    S = np.block([[np.eye(k), L_gain], [np.zeros((p, k)), Q]])
    T = S @ T_c
    T_inv = T_c_inv @ np.linalg.inv(S)

    q = p - m
    C_prime = np.hstack([np.zeros((p, k)), np.eye(p)])
    Cbar1 = np.hstack([np.zeros((q, k)), np.eye(q), np.zeros((q, m))])
    Cbar2 = np.hstack([np.zeros((m, n - m)), np.eye(m)])
    QD = np.vstack([np.zeros((q, m)), D2])

    chain = TransformChain(
        n=n, p=p, m=m, N=N, T_c=T_c, T_c_inv=T_c_inv, L_gain=L_gain, Q=Q, D2=D2,
        QD=QD, C_prime=C_prime, A_prime=A_p, B_prime=B_p, Abar=Abar, Bbar=Bbar,
        Cbar1=Cbar1, Cbar2=Cbar2, T=T, T_inv=T_inv, bias_bar=T @ plant.bias,
        provenance={
            "C_prime": "structural", "Cbar1": "structural", "Cbar2": "structural",
            "QD": "structural zero block over computed D2",
            "N": "null-space basis", "L_gain": "dual pole placement",
            "Q": "pivoted elimination", "Abar": "tilde/bar formulas",
            "Bbar": "tilde/bar formulas",
        },
    )
    # C T_c^-1 must be [0 I]; check the computed product against the stored one
    if not np.allclose(C @ T_c_inv, C_prime, rtol=0, atol=1e-10):
        raise RankDeficientC("output transform lost its structure")
    if k and chain.hurwitz_margin() <= eps_hurwitz:
        raise InvalidPoles(f"A11 is not Hurwitz (margin {chain.hurwitz_margin():.3g})")
    return chain


def build_chain(plant, *, poles=None, B=None, D=None):
    """Convenience wrapper: design ``L`` and ``Q`` and assemble the chain."""
    return assemble_partition(plant, B=B, D=D, poles=poles)


def chain_residuals(chain: TransformChain, plant, B=None, D=None):
    """Max-abs residuals of the identities the chain must satisfy.

    Keys: ``T_roundtrip`` (``T T^-1 - I``), ``A`` (``T A T^-1 - Abar``),
    ``B`` (``T B - Bbar``), ``C`` (``Q C T^-1 - [Cbar1; Cbar2]``), ``QD_top``
    (upper block of ``Q D``), ``NC`` (``N C^T``), plus ``hurwitz_margin``.
    """
    B = plant.B_full if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    D = plant.D_full if D is None else np.atleast_2d(np.asarray(D, dtype=float))
    q = chain.p - chain.m

    def mx(a):
        return float(np.max(np.abs(a), initial=0.0))

    return {
        "T_roundtrip": mx(chain.T @ chain.T_inv - np.eye(chain.n)),
        "A": mx(chain.T @ plant.A @ chain.T_inv - chain.Abar),
        "B": mx(chain.T @ B - chain.Bbar),
        "C": mx(chain.Q @ plant.C @ chain.T_inv - np.vstack([chain.Cbar1, chain.Cbar2])),
        "QD_top": mx((chain.Q @ D)[:q]),
        "NC": mx(chain.N @ plant.C.T),
        "hurwitz_margin": float(chain.hurwitz_margin()),
    }


# ---------------------------------------------------------------------------
# Relative degrees and the augmented output matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelativeDegreeProfile:
    """Relative degrees ``r`` of the rows of ``C1`` and the truncation ``r_alpha``.

    ``C_a`` stacks ``C1_i A^j`` for ``j < r_alpha[i]`` output by output.
    """

    r: tuple
    r_alpha: tuple
    C_a: np.ndarray
    rows: tuple  # (output index, power) for each row of C_a

    @property
    def total(self):
        return int(sum(self.r_alpha))

    @property
    def canonical_order(self):
        """Output indices sorted by ascending relative degree (stable)."""
        return tuple(int(i) for i in np.argsort(self.r, kind="stable"))

    @property
    def sorted_r(self):
        return tuple(self.r[i] for i in self.canonical_order)


def relative_degrees(A, B, C1):
    """Per-output relative degrees and the minimal augmented output matrix.

    ``r_i`` is the smallest integer with ``C1_i A^(r_i-1) B != 0``.  The
    truncations start at ``r_alpha_i = 1``; the output whose full relative
    degree adds the most rank to ``C_a B`` is raised first (lowest index on
    ties) until ``rank(C_a B) = rank(B)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    C1 = np.atleast_2d(np.asarray(C1, dtype=float))
    n = A.shape[0]
    scale = max(1.0, np.abs(B).max(initial=0.0))
    r = []
    for i, c in enumerate(C1):
        row = c.copy()
        for j in range(n):
            if np.max(np.abs(row @ B), initial=0.0) > _RANK_TOL * scale * max(1.0, np.abs(row).max()):
                r.append(j + 1)
                break
            row = row @ A
        else:
            raise NoFiniteRelativeDegree(f"output {i} never sees the attack input")

    def build(ra):
        rows, labels = [], []
        for i, c in enumerate(C1):
            row = c.copy()
            for j in range(ra[i]):
                rows.append(row)
                labels.append((i, j))
                row = row @ A
        return np.array(rows).reshape(-1, n), tuple(labels)

    target = _rank(B)
    ra = [1] * len(r)
    Ca, labels = build(ra)
    cur = _rank(Ca @ B)
    while cur < target:
        best, best_gain = None, 0
        for i in range(len(r)):
            if ra[i] == r[i]:
                continue
            trial = list(ra)
            trial[i] = r[i]
            Ct, _ = build(trial)
            gain = _rank(Ct @ B) - cur
            if gain > best_gain:
                best, best_gain = i, gain
        if best is None:
            raise RankDeficientCaB("no truncation reaches rank(C_a B) = rank(B)")
        ra[best] = r[best]
        Ca, labels = build(ra)
        cur = _rank(Ca @ B)
    if _rank(Ca) < Ca.shape[0]:
        raise RankDeficientC("augmented output matrix is not full row rank")
    return RelativeDegreeProfile(r=tuple(r), r_alpha=tuple(ra), C_a=Ca, rows=labels)
