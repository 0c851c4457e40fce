"""Independent reference computations used by the test-suite only."""

import numpy as np


def lasso_cd(Phi, xi, lam, tol=1e-14, max_sweeps=200_000):
    """Cyclic coordinate descent for ``0.5 ||xi - Phi a||^2 + lam ||a||_1``."""
    Phi = np.asarray(Phi, dtype=float)
    xi = np.asarray(xi, dtype=float)
    N = Phi.shape[1]
    sq = np.einsum("ij,ij->j", Phi, Phi)
    a = np.zeros(N)
    r = xi.copy()
    for _ in range(max_sweeps):
        biggest = 0.0
        for j in range(N):
            rho = Phi[:, j] @ r + sq[j] * a[j]
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / sq[j]
            if new != a[j]:
                r -= Phi[:, j] * (new - a[j])
                biggest = max(biggest, abs(new - a[j]))
                a[j] = new
        if biggest < tol:
            break
    return a


def rip_sweep(Phi, j):
    """Isometry constant by a bitmask sweep over supports, via singular values.

    Returns ``(constant, support)`` with the first maximizing support in
    lexicographic order of sorted index tuples.
    """
    Phi = np.asarray(Phi, dtype=float)
    N = Phi.shape[1]
    best, arg = -np.inf, None
    supports = []
    for mask in range(1 << N):
        if bin(mask).count("1") == j:
            supports.append(tuple(i for i in range(N) if mask >> i & 1))
    for S in sorted(supports):
        sv = np.linalg.svd(Phi[:, list(S)], compute_uv=False)
        # a tall submatrix has j singular values; a wide one is rank deficient
        lo = sv[-1] ** 2 if len(sv) == j else 0.0
        c = max(1.0 - lo, sv[0] ** 2 - 1.0)
        if c > best:
            best, arg = c, S
    return best, arg
