"""State and plant-attack observer for input-affine nonlinear models.

The model is supplied as callbacks: Lie derivatives of the protected
outputs, the decoupling matrix ``L(x)`` whose rows are
``L_{B_j} L_f^(r_i-1) y_i``, the internal dynamics ``g(delta, gamma)`` and
the inverse coordinate change ``x = Psi^-1(delta, gamma)``.

Each protected output gets a Levant differentiator of order ``r_i``; its
lower states form ``delta_hat`` and its top state estimates ``y_i^(r_i)``.
Then ::

    x_hat = Psi^-1(delta_hat, gamma_hat),   gamma_hat' = g(delta_hat, gamma_hat)
    d_hat = L(x_hat)^-1 (top - [L_f^(r_i) y_i](x_hat))

Sensor attacks on the corrupted outputs follow from
``D1bar^-1 (y2 - C2(x_hat))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import null_space

from .errors import CallbackFailure, DimensionMismatch, SingularDbar, SingularLieMatrix
from .filters import LowPass, lowpass_init, lowpass_step
from .hosm_diff import default_gains, diff_step, make_differentiator

__all__ = [
    "NonlinearModelCallbacks", "NlObserverState", "NlConfig",
    "nl_init", "nl_observe_step", "nl_reconstruct_dx", "nl_reconstruct_dy",
    "linear_callbacks", "scalar_chain_callbacks", "cubic_output_callbacks",
    "CATALOG", "NlDemoModel",
]


def _zero_internal(delta, gamma):
    return np.zeros(0)


@dataclass(frozen=True)
class NonlinearModelCallbacks:
    """Caller-supplied model pieces.

    ``lie(x)`` returns the stacked jets ``(L_f^k y_i(x))`` for
    ``k = 0..r_i`` (``k = r_i`` last for each output) and ``L_matrix(x)`` the
    ``m1 x m1`` decoupling matrix.  ``inverse(delta, gamma)`` maps normal
    coordinates back to ``x``; ``domain(delta, gamma)``, when given, must be
    true for every queried point.  Callbacks must be pure.
    """

    n: int
    r: tuple
    lie: Callable
    L_matrix: Callable
    inverse: Callable
    f: Optional[Callable] = None
    internal: Callable = _zero_internal
    domain: Optional[Callable] = None
    outputs: Optional[Callable] = None
    C2: Optional[Callable] = None
    D1bar: Optional[np.ndarray] = None
    name: str = "custom"
    L_constant: bool = False  # decoupling matrix independent of x (checked once)

    def __post_init__(self):
        object.__setattr__(self, "r", tuple(int(v) for v in self.r))
        if any(v < 1 for v in self.r):
            raise ValueError("relative degrees must be positive")
        if self.r_total > self.n:
            raise DimensionMismatch("total relative degree exceeds the state dimension")
        # jet index maps, cached because split_jets runs every step
        offs = np.cumsum((0,) + tuple(ri + 1 for ri in self.r))
        d_idx = np.concatenate([np.arange(o, o + ri) for o, ri in zip(offs, self.r)])
        object.__setattr__(self, "_delta_idx", d_idx.astype(int))
        object.__setattr__(self, "_top_idx", np.array([o + ri for o, ri in zip(offs, self.r)], dtype=int))

    @property
    def r_total(self):
        return sum(self.r)

    @property
    def n_internal(self):
        return self.n - self.r_total

    @property
    def p1(self):
        return len(self.r)

    def split_jets(self, jets):
        """Split stacked jets into ``(delta, tops)``."""
        jets = np.asarray(jets, dtype=float)
        return jets[self._delta_idx], jets[self._top_idx]

    def to_x(self, delta, gamma):
        if self.domain is not None and not self.domain(delta, gamma):
            raise CallbackFailure("inverse coordinate change queried outside its domain",
                                  point=(np.array(delta), np.array(gamma)))
        try:
            x = np.asarray(self.inverse(delta, gamma), dtype=float)
        except CallbackFailure:
            raise
        except Exception as exc:  # wrap arbitrary callback errors with the offending point
            raise CallbackFailure(f"inverse coordinate change failed: {exc}",
                                  point=(np.array(delta), np.array(gamma))) from exc
        if x.shape != (self.n,) or not np.all(np.isfinite(x)):
            raise CallbackFailure("inverse coordinate change returned an invalid state",
                                  point=(np.array(delta), np.array(gamma)))
        return x

    def decoupling(self, x):
        if self.L_constant:
            cached = self.__dict__.get("_L_cache")
            if cached is not None:
                return cached
        Lm = np.atleast_2d(np.asarray(self.L_matrix(x), dtype=float))
        # Hadamard bound: |det| is tiny relative to the row norms only for a
        # (numerically) singular matrix; much cheaper than an SVD every step
        if Lm.shape[0] != Lm.shape[1] or not np.all(np.isfinite(Lm)) or \
                abs(np.linalg.det(Lm)) <= 1e-12 * max(np.prod(np.linalg.norm(Lm, axis=1)), 1e-300):
            raise SingularLieMatrix("decoupling matrix is singular", point=np.array(x))
        if self.L_constant:
            object.__setattr__(self, "_L_cache", Lm)
        return Lm


@dataclass(frozen=True)
class NlConfig:
    """Differentiator bounds per output and the optional output low-pass."""

    L_lip: Sequence = (10.0,)
    lambdas: Optional[Sequence] = None
    tau_f: Optional[float] = None
    filter_order: int = 1
    gamma0: Optional[np.ndarray] = None


@dataclass(frozen=True)
class NlObserverState:
    """Observer state.

    Outputs sharing a relative degree share one multi-channel
    differentiator: ``differentiators[g]`` serves outputs ``groups[g]``.
    """

    differentiators: tuple
    gamma_hat: np.ndarray
    x_hat: np.ndarray
    d_hat: np.ndarray
    d_raw: np.ndarray
    d_filter: Optional[LowPass] = None
    groups: tuple = ()
    jet_perm: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def output_estimates(self):
        """``z_0`` per protected output (the filtered measurement)."""
        out = np.empty(sum(len(g) for g in self.groups))
        for d, g in zip(self.differentiators, self.groups):
            out[list(g)] = d.z[0]
        return out

    @property
    def first_gains(self):
        """``lambda_0`` per protected output."""
        out = np.empty(sum(len(g) for g in self.groups))
        for d, g in zip(self.differentiators, self.groups):
            out[list(g)] = d.lambdas[0]
        return out


def _jets(state):
    # group blocks are (order+1, channels); ravel in channel-major order then permute
    flat = np.concatenate([d.z.T.ravel() for d in state.differentiators])
    return flat[state.jet_perm]


def _grouping(r):
    """Groups of outputs with equal relative degree and the jet permutation."""
    orders = sorted(set(r))
    groups = tuple(tuple(i for i, ri in enumerate(r) if ri == o) for o in orders)
    # position of jet (i, k) in the grouped flat vector
    pos, base = {}, 0
    for o, g in zip(orders, groups):
        for c, i in enumerate(g):
            for k in range(o + 1):
                pos[(i, k)] = base + c * (o + 1) + k
        base += len(g) * (o + 1)
    perm = [pos[(i, k)] for i, ri in enumerate(r) for k in range(ri + 1)]
    return groups, np.array(perm, dtype=int)


def nl_init(cb: NonlinearModelCallbacks, config: NlConfig = NlConfig(), y0=None) -> NlObserverState:
    """Differentiators start at the first sample, ``gamma_hat`` at ``gamma0`` (default 0)."""
    p1 = cb.p1
    L = np.broadcast_to(np.asarray(config.L_lip, dtype=float), (p1,))
    y0 = np.zeros(p1) if y0 is None else np.asarray(y0, dtype=float)
    groups, perm = _grouping(cb.r)
    diffs = []
    for g in groups:
        order = cb.r[g[0]]
        if config.lambdas is None:
            lam = np.stack([default_gains(order, L[i]) for i in g], axis=1)
        else:
            lam = np.stack([np.asarray(config.lambdas[i], dtype=float) for i in g], axis=1)
        diffs.append(make_differentiator(order, first_sample=y0[list(g)], lambdas=lam))
    g0 = np.zeros(cb.n_internal) if config.gamma0 is None else np.asarray(config.gamma0, float)
    if g0.shape != (cb.n_internal,):
        raise DimensionMismatch(f"gamma0 must have length {cb.n_internal}")
    m1 = p1
    filt = None if config.tau_f is None else lowpass_init(m1, config.tau_f, config.filter_order)
    st = NlObserverState(tuple(diffs), g0, np.zeros(cb.n), np.zeros(m1), np.zeros(m1), filt,
                         groups, perm)
    x_hat, d = _estimate(st, cb)
    return replace(st, x_hat=x_hat, d_raw=d, d_hat=d if filt is None else filt.output)


def _estimate(state, cb):
    delta, tops = cb.split_jets(_jets(state))
    x_hat = cb.to_x(delta, state.gamma_hat)
    d = _reconstruct(cb, x_hat, tops)
    return x_hat, d


def _reconstruct(cb, x_hat, tops):
    Lm = cb.decoupling(x_hat)
    _, drift = cb.split_jets(cb.lie(x_hat))
    return np.linalg.solve(Lm, tops - drift)


def nl_observe_step(state: NlObserverState, cb: NonlinearModelCallbacks, y, dt) -> NlObserverState:
    """Advance differentiators on ``y`` and ``gamma_hat`` on the internal dynamics.

    The returned state carries ``x_hat`` and ``d_hat`` evaluated at the
    advanced differentiator states.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (cb.p1,):
        raise DimensionMismatch(f"expected {cb.p1} protected outputs")
    delta, _ = cb.split_jets(_jets(state))
    if cb.n_internal:
        try:
            g = np.asarray(cb.internal(delta, state.gamma_hat), dtype=float)
        except Exception as exc:
            raise CallbackFailure(f"internal dynamics failed: {exc}",
                                  point=(delta, state.gamma_hat)) from exc
        gamma = state.gamma_hat + dt * g
    else:
        gamma = state.gamma_hat
    diffs = tuple(diff_step(d, y[list(g)], dt) for d, g in zip(state.differentiators, state.groups))
    new = replace(state, differentiators=diffs, gamma_hat=gamma)
    x_hat, d = _estimate(new, cb)
    filt = state.d_filter
    if filt is not None:
        filt = lowpass_step(filt, d, dt)
        d_hat = filt.output
    else:
        d_hat = d
    return replace(new, x_hat=x_hat, d_raw=d, d_hat=d_hat, d_filter=filt)


def nl_reconstruct_dx(state: NlObserverState, cb: NonlinearModelCallbacks):
    """Plant-attack estimate from the current differentiator tops (unfiltered)."""
    _, tops = cb.split_jets(_jets(state))
    return _reconstruct(cb, state.x_hat, tops)


def nl_reconstruct_dy(y2, x_hat, D1bar, C2):
    """``D1bar^-1 (y2 - C2(x_hat))`` with a callable or matrix ``C2``."""
    D1bar = np.atleast_2d(np.asarray(D1bar, dtype=float))
    if D1bar.shape[0] != D1bar.shape[1] or np.linalg.matrix_rank(D1bar) < D1bar.shape[0]:
        raise SingularDbar("D1bar must be square and nonsingular")
    c2 = C2(x_hat) if callable(C2) else np.asarray(C2, dtype=float) @ x_hat
    return np.linalg.solve(D1bar, np.atleast_1d(np.asarray(y2, float)) - np.atleast_1d(c2))


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------

def linear_callbacks(A, B1, C1, bias=None, name="linear-wrap"):
    """Wrap ``x' = A x + bias + B1 d``, ``y = C1 x`` as callbacks.

    Relative degrees come from ``C1_i A^(r_i-1) B1 != 0``.  When the total
    relative degree is below ``n`` the internal coordinates ``gamma = N x``
    use rows ``N`` with ``N B1 = 0``, so the internal dynamics are free of
    the attack.
    """
    from .transforms import relative_degrees

    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B1 = np.asarray(B1, dtype=float).reshape(n, -1)
    C1 = np.atleast_2d(np.asarray(C1, dtype=float))
    bias = np.zeros(n) if bias is None else np.asarray(bias, dtype=float)
    r = relative_degrees(A, B1, C1).r
    if B1.shape[1] != len(r):
        raise DimensionMismatch("the decoupling matrix must be square (m1 = p1)")
    rows, bias_rows, Lrows = [], [], []
    lie_rows, lie_bias = [], []
    for i, ri in enumerate(r):
        row, acc = C1[i].copy(), 0.0
        for k in range(ri + 1):
            lie_rows.append(row)
            lie_bias.append(acc)
            if k < ri:
                rows.append(row)
                bias_rows.append(acc)
            if k == ri - 1:
                Lrows.append(row @ B1)
            acc = acc + row @ bias
            row = row @ A
    Theta = np.array(rows)
    theta_b = np.array(bias_rows)
    Lie = np.array(lie_rows)
    lie_b = np.array(lie_bias)
    Lmat = np.array(Lrows)
    k_int = n - Theta.shape[0]
    if k_int:
        cand = null_space(B1.T).T
        # pick internal rows that complete Theta to a basis
        chosen = []
        for c in cand:
            trial = np.vstack([Theta] + chosen + [c])
            if np.linalg.matrix_rank(trial) == trial.shape[0]:
                chosen.append(c[None, :])
            if len(chosen) == k_int:
                break
        if len(chosen) < k_int:
            raise CallbackFailure("no attack-free internal coordinates exist for this plant")
        Nint = np.vstack(chosen)
    else:
        Nint = np.zeros((0, n))
    Tfull = np.vstack([Theta, Nint])
    Tinv = np.linalg.inv(Tfull)

    def inverse(delta, gamma):
        return Tinv @ np.concatenate([np.asarray(delta) - theta_b, gamma])

    def internal(delta, gamma):
        x = inverse(delta, gamma)
        return Nint @ (A @ x + bias)

    return NonlinearModelCallbacks(
        n=n, r=r,
        lie=lambda x: Lie @ x + lie_b,
        L_matrix=lambda x: Lmat,
        L_constant=True,
        inverse=inverse,
        f=lambda x: A @ x + bias,
        internal=internal,
        outputs=lambda x: C1 @ x,
        name=name,
    )


@dataclass(frozen=True)
class NlDemoModel:
    """A small nonlinear plant for the catalog plus its observer callbacks."""

    name: str
    n: int
    f: Callable            # f(x, d_x) -> x'
    y1: Callable           # protected outputs
    y2: Optional[Callable]  # corrupted outputs without attack
    D1bar: Optional[np.ndarray]
    callbacks: NonlinearModelCallbacks
    m1: int = 1
    m2: int = 0


def scalar_chain_callbacks(u0=0.0):
    """``x1' = x2``, ``x2' = u0 + d``, ``y = x1``."""
    u0 = float(u0)
    cb = NonlinearModelCallbacks(
        n=2, r=(2,),
        lie=lambda x: np.array([x[0], x[1], u0]),
        L_matrix=lambda x: np.array([[1.0]]),
        inverse=lambda delta, gamma: np.array([delta[0], delta[1]]),
        f=lambda x: np.array([x[1], u0]),
        outputs=lambda x: np.array([x[0]]),
        name="scalar-chain",
    )
    return NlDemoModel(
        name="scalar-chain", n=2,
        f=lambda x, d: np.array([x[1], u0 + d[0]]),
        y1=lambda x: np.array([x[0]]), y2=None, D1bar=None, callbacks=cb, m1=1, m2=0)


def cubic_output_callbacks():
    """``x1' = x2``, ``x2' = -x1 - x2 + d_x``; ``y1 = x1``, ``y2 = x2^3 + d_y``."""
    cb = NonlinearModelCallbacks(
        n=2, r=(2,),
        lie=lambda x: np.array([x[0], x[1], -x[0] - x[1]]),
        L_matrix=lambda x: np.array([[1.0]]),
        inverse=lambda delta, gamma: np.array([delta[0], delta[1]]),
        f=lambda x: np.array([x[1], -x[0] - x[1]]),
        outputs=lambda x: np.array([x[0]]),
        C2=lambda x: np.array([x[1] ** 3]),
        D1bar=np.array([[1.0]]),
        name="cubic-output",
    )
    return NlDemoModel(
        name="cubic-output", n=2,
        f=lambda x, d: np.array([x[1], -x[0] - x[1] + d[0]]),
        y1=lambda x: np.array([x[0]]),
        y2=lambda x: np.array([x[1] ** 3]),
        D1bar=np.array([[1.0]]), callbacks=cb, m1=1, m2=1)


# builders for the nl-catalog plant selector; linear-wrap needs the plant
CATALOG = {
    "scalar-chain": scalar_chain_callbacks,
    "cubic-output": cubic_output_callbacks,
}
