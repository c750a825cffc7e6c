"""Dense two-phase simplex for ``min c.x  s.t.  G x >= b, x >= 0``.

Bland's rule is used for both the entering and the leaving variable, which
rules out cycling on degenerate vertices. Sizes in this package are at most a
few hundred variables, so a full tableau is fine.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg.lapack import dgesv

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class LpProblem:
    costs: np.ndarray
    constraint_matrix: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=float).reshape(-1)
        G = np.asarray(self.constraint_matrix, dtype=float)
        b = np.asarray(self.rhs, dtype=float).reshape(-1)
        if G.size == 0:
            G = G.reshape(b.size, c.size)
        if G.shape != (b.size, c.size):
            raise ValueError(f"constraint matrix shape {G.shape} does not match {b.size} rows x {c.size} vars")
        if not (np.isfinite(c).all() and np.isfinite(G).all() and np.isfinite(b).all()):
            raise ValueError("LP data must be finite")
        object.__setattr__(self, "costs", c)
        object.__setattr__(self, "constraint_matrix", G)
        object.__setattr__(self, "rhs", b)


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: LpStatus
    x: np.ndarray
    objective: float
    infeasible_row: Optional[int] = None
    iterations: int = 0
    basis: Optional[np.ndarray] = None  # columns of [G, -I] basic at the optimum


def _pivot(T, i, j):
    T[i] /= T[i, j]
    col = T[:, j].copy()
    col[i] = 0.0
    T -= np.outer(col, T[i])


def _run(T, basis, cost, ncols, max_iter):
    """Primal simplex on tableau rows ``T`` (last column = rhs). Returns (status, iterations)."""
    it = 0
    while True:
        reduced = cost[:ncols] - cost[basis] @ T[:, :ncols]
        entering = np.flatnonzero(reduced < -PIVOT_TOL)
        if entering.size == 0:
            return "optimal", it
        j = int(entering[0])
        col = T[:, j]
        rows = np.flatnonzero(col > PIVOT_TOL)
        if rows.size == 0:
            return "unbounded", it
        ratios = T[rows, -1] / col[rows]
        rmin = ratios.min()
        tied = rows[ratios <= rmin + 1e-12 * max(1.0, abs(rmin))]
        i = int(tied[np.argmin(basis[tied])])
        _pivot(T, i, j)
        basis[i] = j
        it += 1
        if it > max_iter:
            raise RuntimeError("simplex iteration limit exceeded")


def _warm(problem: LpProblem, basis, max_iter):
    c, G, b = problem.costs, problem.constraint_matrix, problem.rhs
    m, n = G.shape
    basis = np.asarray(basis, dtype=int)
    if basis.shape != (m,) or basis.min() < 0 or basis.max() >= n + m or len(set(basis.tolist())) != m:
        return None
    A = np.hstack([G, -np.eye(m), b[:, None]])
    _, _, T, info = dgesv(A[:, basis], A)
    if info != 0:
        return None
    if not np.all(np.isfinite(T)) or T[:, -1].min() < -FEAS_TOL:
        return None
    T[:, -1] = np.maximum(T[:, -1], 0.0)
    cost = np.zeros(n + m)
    cost[:n] = c
    basis = basis.copy()
    status, it = _run(T, basis, cost, n + m, max_iter)
    if status == "unbounded":
        return LpSolution(LpStatus.UNBOUNDED, np.zeros(n), -np.inf, iterations=it)
    z = np.zeros(n + m)
    z[basis] = T[:, -1]
    x = np.clip(z[:n], 0.0, None)
    if np.any(G @ x < b - FEAS_TOL):
        return None
    return LpSolution(LpStatus.OPTIMAL, x, float(c @ x), iterations=it, basis=basis)


def solve_lp(problem: LpProblem, max_iter: int = 50_000, basis=None) -> LpSolution:
    """Solve the LP; ``basis`` optionally warm-starts phase 2 from a previous optimum.

    A warm basis that is singular or primal infeasible for this problem is
    ignored and the two-phase method runs from scratch.
    """
    c, G, b = problem.costs, problem.constraint_matrix, problem.rhs
    m, n = G.shape
    if basis is not None and m > 0:
        sol = _warm(problem, basis, max_iter)
        if sol is not None:
            return sol
    if m == 0:
        if (c < 0).any():
            return LpSolution(LpStatus.UNBOUNDED, np.zeros(n), -np.inf)
        return LpSolution(LpStatus.OPTIMAL, np.zeros(n), 0.0)

    # G x - s + a = b with every row sign-normalised so that b >= 0
    sign = np.where(b < 0, -1.0, 1.0)
    nvars = n + m
    T = np.zeros((m, nvars + m + 1))
    T[:, :n] = G * sign[:, None]
    T[:, n:nvars] = -np.eye(m) * sign[:, None]
    T[:, nvars:nvars + m] = np.eye(m)
    T[:, -1] = b * sign
    basis = np.arange(nvars, nvars + m)

    phase1 = np.zeros(nvars + m)
    phase1[nvars:] = 1.0
    _, it1 = _run(T, basis, phase1, nvars + m, max_iter)
    infeas = float(T[:, -1] @ phase1[basis])
    if infeas > FEAS_TOL:
        art_rows = np.flatnonzero((basis >= nvars) & (T[:, -1] > FEAS_TOL))
        witness = int(basis[art_rows[0]] - nvars) if art_rows.size else None
        return LpSolution(LpStatus.INFEASIBLE, np.zeros(n), np.nan, witness, it1)

    # drive zero-valued artificials out of the basis; drop redundant rows
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= nvars:
            cand = np.flatnonzero(np.abs(T[i, :nvars]) > PIVOT_TOL)
            if cand.size:
                _pivot(T, i, int(cand[0]))
                basis[i] = int(cand[0])
            else:
                keep[i] = False
    T = T[keep]
    basis = basis[keep]

    phase2 = np.zeros(nvars + m)
    phase2[:n] = c
    status, it2 = _run(T, basis, phase2, nvars, max_iter)
    if status == "unbounded":
        return LpSolution(LpStatus.UNBOUNDED, np.zeros(n), -np.inf, iterations=it1 + it2)
    z = np.zeros(nvars + m)
    z[basis] = T[:, -1]
    x = np.clip(z[:n], 0.0, None)
    full_basis = basis if basis.size == m else None
    return LpSolution(LpStatus.OPTIMAL, x, float(c @ x), iterations=it1 + it2, basis=full_basis)
