"""Active-set bounded-variable least squares.

Solves min ||A x - y||^2 subject to lower <= x <= upper, the box-constrained
system used to recover per-class reflectance inside an unmixing window.
Dimensions here are tiny (a handful of land-cover classes, at most a few
hundred window rows), so a dense active-set iteration is both exact and fast.
"""

from __future__ import annotations

import numpy as np


class SolverError(RuntimeError):
    """The active-set iteration failed to converge."""


def _restricted_solve(A_free: np.ndarray, rhs: np.ndarray,
                      ridge: float) -> np.ndarray:
    """Least-squares solution on the free variables via normal equations.

    A singular normal matrix (detected by a failed Cholesky factorization)
    is regularized with the precomputed ridge term.
    """
    G = A_free.T @ A_free
    b = A_free.T @ rhs
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        G = G + ridge * np.eye(G.shape[0])
        L = np.linalg.cholesky(G)
    return np.linalg.solve(L.T, np.linalg.solve(L, b))


def bvls(A: np.ndarray, y: np.ndarray, lower: float = 0.0,
         upper: float = 1.0, tol: float = 1e-10,
         max_iter: int | None = None) -> np.ndarray:
    """Solve min ||A x - y||^2 with box constraints on every component.

    Starts with every variable at its lower bound, then repeatedly frees the
    variable whose Karush-Kuhn-Tucker multiplier is most negative, solving
    the restricted least-squares problem and clipping the step at the first
    bound it hits.  Deterministic: ties pick the smallest index.

    Raises SolverError if the iteration does not converge (never silently
    returns an unconverged point).
    """
    A = np.asarray(A, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if A.ndim != 2 or y.ndim != 1 or A.shape[0] != y.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {y.shape}")
    m, n = A.shape
    if n == 0:
        return np.zeros(0)
    if max_iter is None:
        max_iter = 10 * (n + 1) * (n + 1)
    ridge = 1e-8 * np.trace(A.T @ A) / n
    if ridge <= 0.0:
        ridge = 1e-12

    x = np.full(n, lower, dtype=np.float64)
    # state: -1 at lower bound, 0 free, +1 at upper bound
    state = np.full(n, -1, dtype=np.int8)

    for _ in range(max_iter):
        g = A.T @ (A @ x - y)  # gradient of the half-squared residual
        # KKT: free -> g == 0, lower -> g >= 0, upper -> g <= 0
        viol = np.zeros(n)
        viol[state == -1] = np.maximum(0.0, -g[state == -1])
        viol[state == 1] = np.maximum(0.0, g[state == 1])
        viol[state == 0] = np.abs(g[state == 0])
        worst = int(np.argmax(viol))
        if viol[worst] <= tol * max(1.0, float(np.abs(g).max())):
            return x
        if state[worst] != 0:
            state[worst] = 0

        # inner loop: solve on the free set, clip at the first bound hit
        for _ in range(max_iter):
            free = np.flatnonzero(state == 0)
            if free.size == 0:
                break
            bound = state != 0
            rhs = y - A[:, bound] @ x[bound]
            z = _restricted_solve(A[:, free], rhs, ridge)
            inside = (z >= lower - 1e-12) & (z <= upper + 1e-12)
            if inside.all():
                x[free] = np.clip(z, lower, upper)
                break
            # step from x[free] toward z, stopping at the first bound
            xf = x[free]
            step = z - xf
            alpha = np.ones(free.size)
            lo_hit = step < 0
            hi_hit = step > 0
            alpha[lo_hit] = (lower - xf[lo_hit]) / step[lo_hit]
            alpha[hi_hit] = (upper - xf[hi_hit]) / step[hi_hit]
            alpha = np.where(inside, 1.0, alpha)
            a = float(alpha.min())
            a = min(max(a, 0.0), 1.0)
            xf = xf + a * step
            blocked = np.flatnonzero(alpha <= a + 1e-15)
            x[free] = xf
            for j in blocked:
                col = free[j]
                if step[j] < 0:
                    x[col] = lower
                    state[col] = -1
                elif step[j] > 0:
                    x[col] = upper
                    state[col] = 1
        else:
            raise SolverError("bounded least squares: inner loop stalled")
    raise SolverError("bounded least squares did not converge")
