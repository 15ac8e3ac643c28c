"""Dense two-phase simplex for the routing relaxations.

Solves  min c@x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  0 <= x <= upper.

Small and deterministic by design: entering variable by most negative reduced
cost with lowest-index ties, falling back to Bland's rule permanently after
3 * n_columns pivots without objective progress, which guarantees
termination on degenerate bases.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["LpResult", "solve_lp"]

_PIVOT_TOL = 1e-9
_FEAS_TOL = 1e-7


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: Optional[np.ndarray]
    objective: Optional[float]


def _pivot(tab: np.ndarray, basis: np.ndarray, row: int, col: int):
    tab[row] /= tab[row, col]
    factor = tab[:, col].copy()
    factor[row] = 0.0
    tab -= np.outer(factor, tab[row])
    basis[row] = col


def _iterate(tab: np.ndarray, basis: np.ndarray, n_enterable: int) -> str:
    """Run pivots until optimal/unbounded; cost row is tab[-1]."""
    m = len(basis)
    bland = False
    stall = 0
    last_obj = tab[-1, -1]
    max_pivots = 200 * (tab.shape[1] + m) + 1000
    for _ in range(max_pivots):
        red = tab[-1, :n_enterable]
        if bland:
            eligible = np.nonzero(red < -_PIVOT_TOL)[0]
            if eligible.size == 0:
                return "optimal"
            col = int(eligible[0])
        else:
            col = int(np.argmin(red))
            if red[col] >= -_PIVOT_TOL:
                return "optimal"
        coef = tab[:m, col]
        rows = np.nonzero(coef > _PIVOT_TOL)[0]
        if rows.size == 0:
            return "unbounded"
        ratios = tab[rows, -1] / coef[rows]
        best = ratios.min()
        tied = rows[ratios <= best + 1e-12]
        row = int(tied[np.argmin(basis[tied])])
        _pivot(tab, basis, row, col)
        obj = tab[-1, -1]
        if obj > last_obj + _PIVOT_TOL:
            stall = 0
            last_obj = obj
        else:
            stall += 1
            if stall > 3 * n_enterable:
                bland = True
    raise RuntimeError("simplex exceeded its pivot budget")


def solve_lp(
    c: np.ndarray,
    a_eq: Optional[np.ndarray] = None,
    b_eq: Optional[np.ndarray] = None,
    a_ub: Optional[np.ndarray] = None,
    b_ub: Optional[np.ndarray] = None,
    upper: Optional[np.ndarray] = None,
) -> LpResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    a_eq = np.zeros((0, n)) if a_eq is None else np.asarray(a_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    a_ub = np.zeros((0, n)) if a_ub is None else np.asarray(a_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()

    if upper is None:
        upper = np.full(n, np.inf)
    else:
        upper = np.asarray(upper, dtype=float).ravel()
    bounded = np.nonzero(np.isfinite(upper))[0]

    n_eq, n_ub, n_bd = a_eq.shape[0], a_ub.shape[0], bounded.size
    m = n_eq + n_ub + n_bd
    n_std = n + n_ub + n_bd  # structural + ub slacks + bound slacks

    a = np.zeros((m, n_std))
    b = np.zeros(m)
    a[:n_eq, :n] = a_eq
    b[:n_eq] = b_eq
    a[n_eq : n_eq + n_ub, :n] = a_ub
    a[n_eq : n_eq + n_ub, n : n + n_ub] = np.eye(n_ub)
    b[n_eq : n_eq + n_ub] = b_ub
    for r, j in enumerate(bounded):
        a[n_eq + n_ub + r, j] = 1.0
        a[n_eq + n_ub + r, n + n_ub + r] = 1.0
        b[n_eq + n_ub + r] = upper[j]

    neg = b < 0
    a[neg] *= -1.0
    b[neg] *= -1.0

    # phase 1: artificial basis, minimize the sum of artificials
    tab = np.zeros((m + 1, n_std + m + 1))
    tab[:m, :n_std] = a
    tab[:m, n_std : n_std + m] = np.eye(m)
    tab[:m, -1] = b
    tab[-1, :n_std] = -a.sum(axis=0)
    tab[-1, -1] = -b.sum()
    basis = np.arange(n_std, n_std + m)

    status = _iterate(tab, basis, n_std + m)
    if status == "unbounded" or -tab[-1, -1] > _FEAS_TOL:
        return LpResult("infeasible", None, None)

    # drive artificials out of the basis where possible
    for r in range(m):
        if basis[r] >= n_std:
            cols = np.nonzero(np.abs(tab[r, :n_std]) > _PIVOT_TOL)[0]
            if cols.size:
                _pivot(tab, basis, r, int(cols[0]))

    # phase 2 over the original objective; artificial columns never re-enter
    cost = np.zeros(n_std + m + 1)
    cost[:n] = c
    for r in range(m):
        if basis[r] < n_std and cost[basis[r]] != 0.0:
            cost = cost - cost[basis[r]] * tab[r]
    tab[-1] = cost
    status = _iterate(tab, basis, n_std)
    if status == "unbounded":
        return LpResult("unbounded", None, None)

    x_std = np.zeros(n_std + m)
    x_std[basis] = tab[:m, -1]
    x = x_std[:n]
    return LpResult("optimal", x, float(c @ x))
