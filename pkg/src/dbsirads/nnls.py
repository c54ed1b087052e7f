"""Lawson-Hanson active-set non-negative least squares with Tikhonov damping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KKT_TOL = 1e-8


class NnlsError(ValueError):
    pass


@dataclass
class NnlsResult:
    """Solution of min ||A x - y||^2 (+ beta ||x||^2) subject to x >= 0.

    ``residual`` is the unregularised ||A x - y||; ``converged`` is False
    when the iteration cap was hit (the iterate is still returned).
    """

    x: np.ndarray
    residual: float
    objective: float
    iterations: int
    converged: bool
    kkt_violation: float

    @property
    def f(self) -> np.ndarray:
        return self.x


def _solve_passive(A, y, passive):
    z = np.zeros(A.shape[1])
    if passive.any():
        z[passive] = np.linalg.lstsq(A[:, passive], y, rcond=None)[0]
    return z


def lawson_hanson(A, y, max_iter=None, tol=None):
    """Plain NNLS by the Lawson-Hanson active-set method.

    Returns ``(x, iterations, converged)``.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if A.ndim != 2 or y.ndim != 1 or A.shape[0] != y.shape[0]:
        raise NnlsError(f"dimension mismatch: A {A.shape}, y {y.shape}")
    m, n = A.shape
    if max_iter is None:
        max_iter = 3 * n + 30
    if tol is None:
        # scaled by the largest entry, not a column norm: exponential bases have
        # long nearly parallel columns and a norm-scaled tolerance stops early
        tol = 10.0 * np.finfo(float).eps * max(np.abs(A).max(initial=1.0), 1.0) * max(m, n)

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ (y - A @ x)
    it = 0
    while (~passive).any() and w[~passive].max() > tol:
        if it >= max_iter:
            return x, it, False
        cand = np.where(~passive, w, -np.inf)
        passive[int(np.argmax(cand))] = True
        z = _solve_passive(A, y, passive)
        # inner loop: step back until every passive coefficient is positive
        while (z[passive] <= 0.0).any():
            it += 1
            if it >= max_iter:
                return x, it, False
            neg = passive & (z <= 0.0)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
            z = _solve_passive(A, y, passive)
        x = z
        it += 1
        w = A.T @ (y - A @ x)
    return x, it, True


def kkt_violation(A, y, x, beta=0.0):
    """Largest violation of the KKT conditions of the (damped) problem.

    The gradient is ``A^T (A x - y) + beta x``. Active coordinates
    (x = 0) need gradient >= 0; free coordinates need gradient = 0.
    """
    g = A.T @ (A @ x - y) + beta * x
    free = x > 0
    v_free = np.abs(g[free]).max(initial=0.0)
    v_act = np.maximum(-g[~free], 0.0).max(initial=0.0)
    return float(max(v_free, v_act))


def nnls_l2(M, s, beta=0.0, max_iter=None) -> NnlsResult:
    """Minimise ||s - M f||^2 + beta ||f||^2 subject to f >= 0.

    Solved exactly as plain NNLS on the augmented system
    ``[M; sqrt(beta) I] f = [s; 0]``.
    """
    M = np.asarray(M, dtype=float)
    s = np.asarray(s, dtype=float)
    if M.ndim != 2 or s.ndim != 1 or M.shape[0] != s.shape[0]:
        raise NnlsError(f"dimension mismatch: M {M.shape}, s {s.shape}")
    if beta < 0:
        raise NnlsError("beta must be non-negative")
    n = M.shape[1]
    if beta > 0:
        A = np.vstack([M, np.sqrt(beta) * np.eye(n)])
        y = np.concatenate([s, np.zeros(n)])
    else:
        A, y = M, s
    x, it, ok = lawson_hanson(A, y, max_iter=max_iter)
    r = s - M @ x
    res = float(np.linalg.norm(r))
    return NnlsResult(
        x=x,
        residual=res,
        objective=res**2 + beta * float(x @ x),
        iterations=it,
        converged=ok,
        kkt_violation=kkt_violation(M, s, x, beta),
    )
