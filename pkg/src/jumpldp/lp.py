"""Dense two-phase simplex with Bland's anti-cycling rule.

Sized for the tiny programs that arise here (a handful of reactions and
species), where a transparent tableau is easier to certify than a general
solver. ``scipy.optimize.linprog`` serves as the cross-check in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError


@dataclass
class LPResult:
    status: str  # "optimal", "infeasible" or "unbounded"
    x: np.ndarray | None = None
    value: float = np.nan
    farkas: np.ndarray | None = None  # y with y@A <= 0 < y@b when infeasible


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0.0:
            T[i] -= T[i, col] * T[row]


def _run(T: np.ndarray, basis: list[int], ncols: int, tol: float, max_iter: int) -> str:
    """Minimise the objective stored in the last row over columns ``< ncols``."""
    m = len(basis)
    for _ in range(max_iter):
        cost = T[-1, :ncols]
        entering = next((j for j in range(ncols) if cost[j] < -tol), None)
        if entering is None:
            return "optimal"
        col = T[:m, entering]
        best, leave = np.inf, None
        for i in range(m):
            if col[i] > tol:
                ratio = T[i, -1] / col[i]
                if ratio < best - tol or (abs(ratio - best) <= tol and leave is not None and basis[i] < basis[leave]):
                    best, leave = ratio, i
        if leave is None:
            return "unbounded"
        _pivot(T, leave, entering)
        basis[leave] = entering
    raise NumericError("simplex iteration cap reached")


def simplex(c, A, b, tol: float = 1e-9, max_iter: int = 10_000) -> LPResult:
    """Minimise ``c @ x`` subject to ``A @ x = b`` and ``x >= 0``."""
    A = np.array(A, dtype=float, ndmin=2)
    b = np.array(b, dtype=float).ravel()
    c = np.array(c, dtype=float).ravel()
    m, n = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A = A * sign[:, None]
    b = b * sign
    # phase 1: artificials n..n+m-1
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n : n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(n, n + m))
    _run(T, basis, n + m, tol, max_iter)
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    if -T[-1, -1] > tol * scale:
        # duals of phase 1 give a Farkas certificate for the sign-corrected rows
        y = 1.0 - T[-1, n : n + m]
        return LPResult("infeasible", farkas=y * sign)
    # drive remaining artificials out of the basis
    for i in range(m):
        if basis[i] >= n:
            j = next((j for j in range(n) if abs(T[i, j]) > tol), None)
            if j is not None:
                _pivot(T, i, j)
                basis[i] = j
    keep = [i for i in range(m) if basis[i] < n]
    T2 = np.zeros((len(keep) + 1, n + 1))
    T2[:-1, :n] = T[keep, :n]
    T2[:-1, -1] = T[keep, -1]
    basis2 = [basis[i] for i in keep]
    T2[-1, :n] = c
    for i, j in enumerate(basis2):
        if T2[-1, j] != 0.0:
            T2[-1] -= T2[-1, j] * T2[i]
    status = _run(T2, basis2, n, tol, max_iter)
    if status == "unbounded":
        return LPResult("unbounded")
    x = np.zeros(n)
    for i, j in enumerate(basis2):
        x[j] = max(T2[i, -1], 0.0)
    return LPResult("optimal", x=x, value=float(c @ x))


def feasible_nonneg(A, b, tol: float = 1e-9) -> LPResult:
    """Phase-1 only: find ``x >= 0`` with ``A @ x = b`` or a Farkas certificate."""
    A = np.array(A, dtype=float, ndmin=2)
    return simplex(np.zeros(A.shape[1]), A, b, tol=tol)
