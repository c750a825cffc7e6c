"""Exploration-rate programs for unstructured and Lipschitz MDPs.

Both feasibility sets are written as ``W @ eta >= 2`` over a set of rows
(the pairs that are not optimal) and columns (the pairs with a positive gap):

* unstructured: ``W`` is diagonal with entries ``(delta / (H + 1))**2``;
* Lipschitz: ``W[row, col] = ([delta(row) / (H + 1) - 2 (L d(x, x')**alpha
  + L' d(a, a')**alpha')]_+)**2`` with Euclidean ``d`` on the embeddings.

In the *restricted* variant used by the learning agent every pair whose
(thresholded) gap is 0 is pinned to an infinite rate; any row with positive
weight on such a pair is satisfied by convention and dropped from the LP.
Infinite rates are represented by ``numpy.inf`` and ``inf * 0 = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .errors import LpError, ValidationError
from .lp import LpProblem, LpStatus, solve_lp
from .mdp import GapTable, Mdp

UNSTRUCTURED = "unstructured"
LIPSCHITZ = "lipschitz"
RHS = 2.0
MEMBERSHIP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class StructureSpec:
    kind: str = UNSTRUCTURED
    L: float = 0.0
    L_prime: float = 0.0
    alpha: float = 1.0
    alpha_prime: float = 1.0
    state_embedding: Optional[np.ndarray] = None
    action_embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in (UNSTRUCTURED, LIPSCHITZ):
            raise ValidationError(f"unknown structure kind '{self.kind}'")
        if self.L < 0 or self.L_prime < 0:
            raise ValidationError("Lipschitz constants must be nonnegative")
        if self.alpha <= 0 or self.alpha_prime <= 0:
            raise ValidationError("metric exponents must be positive")

    @classmethod
    def unstructured(cls) -> "StructureSpec":
        return cls(UNSTRUCTURED)

    @classmethod
    def lipschitz(cls, L, L_prime, alpha=1.0, alpha_prime=1.0, mdp: Optional[Mdp] = None) -> "StructureSpec":
        spec = cls(LIPSCHITZ, float(L), float(L_prime), float(alpha), float(alpha_prime))
        return spec.bind(mdp) if mdp is not None else spec

    @property
    def is_lipschitz(self) -> bool:
        return self.kind == LIPSCHITZ

    def bind(self, mdp: Mdp) -> "StructureSpec":
        """Attach the embeddings carried by ``mdp``."""
        if not self.is_lipschitz:
            return self
        if not mdp.has_embeddings:
            raise ValidationError("Lipschitz structure requires state and action embeddings on the MDP")
        return replace(self, state_embedding=mdp.state_embedding, action_embedding=mdp.action_embedding)

    def _embeddings(self):
        if self.state_embedding is None or self.action_embedding is None:
            raise ValidationError("Lipschitz structure is not bound to embeddings (call bind(mdp))")
        return np.asarray(self.state_embedding, float), np.asarray(self.action_embedding, float)

    def penalty_matrix(self) -> np.ndarray:
        """``2 (L d(x,x')**alpha + L' d(a,a')**alpha')`` over flattened pairs ``x * A + a``."""
        se, ae = self._embeddings()
        ds = np.linalg.norm(se[:, None, :] - se[None, :, :], axis=2)
        da = np.linalg.norm(ae[:, None, :] - ae[None, :, :], axis=2)
        ps = self.L * ds**self.alpha
        pa = self.L_prime * da**self.alpha_prime
        S, A = ps.shape[0], pa.shape[0]
        pen = 2.0 * (ps[:, None, :, None] + pa[None, :, None, :])
        return pen.reshape(S * A, S * A)


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """``weights @ eta[variables] + forced_weights @ eta[forced] >= 2`` per row (flat pair indices)."""

    shape: Tuple[int, int]
    rows: np.ndarray
    variables: np.ndarray
    weights: np.ndarray
    forced: np.ndarray
    forced_weights: np.ndarray
    rhs: float = RHS

    @property
    def restricted(self) -> bool:
        return self.forced.size > 0

    @property
    def dropped_rows(self) -> np.ndarray:
        """Rows satisfied by an infinite rate on some forced pair."""
        if self.forced.size == 0:
            return np.zeros(self.rows.size, dtype=bool)
        return (self.forced_weights > 0).any(axis=1)

    @property
    def infeasible_rows(self) -> np.ndarray:
        """Rows that no rate vector (finite or not) can satisfy."""
        return ~(self.weights > 0).any(axis=1) & ~self.dropped_rows

    @property
    def structurally_infeasible(self) -> bool:
        return bool(self.infeasible_rows.any())

    def pair(self, flat: int) -> Tuple[int, int]:
        return divmod(int(flat), self.shape[1])


@dataclass(frozen=True, eq=False)
class ExplorationRates:
    eta: np.ndarray
    objective: float
    feasible: bool
    infeasible_reason: Optional[Tuple[int, int]] = None
    basis: Optional[tuple] = None  # warm-start labels, see solve_exploration


@dataclass(frozen=True)
class CoveringBounds:
    s_lip: float
    a_lip: float
    k_upper: float


def _pairs(gaps: GapTable, restricted: bool):
    delta = gaps.delta.reshape(-1)
    rows = np.flatnonzero(~gaps.optimal.reshape(-1))
    variables = np.flatnonzero(delta > 0)
    forced = np.flatnonzero(delta == 0) if restricted else np.empty(0, dtype=int)
    return delta, rows, variables, forced


def build_unstructured(gaps: GapTable, restricted: bool = False) -> ConstraintSet:
    delta, rows, variables, forced = _pairs(gaps, restricted)
    scaled = (delta[rows] / (gaps.span + 1.0)) ** 2
    W = np.where(rows[:, None] == variables[None, :], scaled[:, None], 0.0)
    Wf = np.zeros((rows.size, forced.size))
    return ConstraintSet(gaps.shape, rows, variables, W, forced, Wf)


def _lip_weights(pen, delta, H, rows, cols):
    u = delta[rows] / (H + 1.0)
    w = np.maximum(u[:, None] - pen[rows][:, cols], 0.0)
    return w * w


def lip_weight(spec: StructureSpec, gaps: GapTable, row, col) -> float:
    """Weight of column pair ``col = (x, a)`` in the constraint of row pair ``row = (x', a')``."""
    se, ae = spec._embeddings()
    (xr, ar), (xc, ac) = row, col
    ds = float(np.linalg.norm(se[xr] - se[xc]))
    da = float(np.linalg.norm(ae[ar] - ae[ac]))
    u = gaps.delta[xr, ar] / (gaps.span + 1.0) - 2.0 * (spec.L * ds**spec.alpha + spec.L_prime * da**spec.alpha_prime)
    return max(u, 0.0) ** 2


def build_lip_lp(spec: StructureSpec, gaps: GapTable, restricted: bool = False, penalty=None) -> ConstraintSet:
    """Constraint set of the Lipschitz program.

    Unrestricted: columns are the suboptimal pairs. Restricted: pairs with a
    zero gap become forced-infinite columns and keep their weights so that
    finite rates can still be tested for membership.
    """
    if not spec.is_lipschitz:
        raise ValidationError("build_lip_lp needs a Lipschitz structure")
    pen = spec.penalty_matrix() if penalty is None else penalty
    delta, rows, variables, forced = _pairs(gaps, restricted)
    W = _lip_weights(pen, delta, gaps.span, rows, variables)
    Wf = _lip_weights(pen, delta, gaps.span, rows, forced)
    return ConstraintSet(gaps.shape, rows, variables, W, forced, Wf)


def build_constraints(spec: StructureSpec, gaps: GapTable, restricted: bool = False, penalty=None) -> ConstraintSet:
    if spec.is_lipschitz:
        return build_lip_lp(spec, gaps, restricted, penalty)
    return build_unstructured(gaps, restricted)


def empty_set_rates(gaps: GapTable, witness) -> ExplorationRates:
    """Rates used when the restricted feasible set is empty: infinite on zero gaps, 0 elsewhere."""
    eta = np.where(gaps.delta == 0, np.inf, 0.0)
    return ExplorationRates(eta, 0.0, False, witness)


def eta_unstructured(gaps: GapTable, restricted: bool = False) -> ExplorationRates:
    """Closed-form solution ``eta = 2 ((H + 1) / delta)**2`` of the unstructured program."""
    delta = gaps.delta
    rows = ~gaps.optimal
    bad = rows & (delta <= 0)
    if bad.any():
        witness = tuple(int(v) for v in np.argwhere(bad)[0])
        if restricted:
            return empty_set_rates(gaps, witness)
        return ExplorationRates(np.zeros_like(delta), math.inf, False, witness)
    eta = np.zeros_like(delta)
    sub = rows & (delta > 0)
    eta[sub] = 2.0 * ((gaps.span + 1.0) / delta[sub]) ** 2
    objective = float((eta[sub] * delta[sub]).sum())
    if restricted:
        eta[delta == 0] = np.inf
    return ExplorationRates(eta, objective, True)


def solve_exploration(cs: ConstraintSet, gaps: GapTable, warm: Optional[tuple] = None) -> ExplorationRates:
    """Solve ``min sum eta * delta`` over the constraint set with the simplex LP.

    The returned ``basis`` labels the optimal basic columns by pair (``p`` for
    the rate of flat pair ``p``, ``S*A + p`` for the slack of row ``p``); pass
    it back as ``warm`` to warm-start a nearby problem.
    """
    infeasible = cs.infeasible_rows
    if infeasible.any():
        witness = cs.pair(cs.rows[np.flatnonzero(infeasible)[0]])
        if cs.restricted:
            return empty_set_rates(gaps, witness)
        return ExplorationRates(np.zeros(cs.shape), math.inf, False, witness)
    delta = gaps.delta.reshape(-1)
    npairs = delta.size
    active = ~cs.dropped_rows
    eta = np.zeros(npairs)
    objective = 0.0
    labels = None
    if active.any():
        G = cs.weights[active]
        used = (G > 0).any(axis=0)
        cols = cs.variables[used]
        row_pairs = cs.rows[active]
        col_labels = np.concatenate([cols, npairs + row_pairs])
        basis = None
        if warm is not None and len(warm) == row_pairs.size:
            # labels are increasing: rate columns first, then slacks offset by S*A
            w = np.asarray(warm, dtype=int)
            idx = np.minimum(np.searchsorted(col_labels, w), col_labels.size - 1)
            if np.array_equal(col_labels[idx], w):
                basis = idx
        sol = solve_lp(LpProblem(delta[cols], G[:, used], np.full(row_pairs.size, cs.rhs)), basis=basis)
        if sol.status is LpStatus.INFEASIBLE:
            row = row_pairs[sol.infeasible_row or 0]
            return ExplorationRates(np.zeros(cs.shape), math.inf, False, cs.pair(row))
        if sol.status is not LpStatus.OPTIMAL:
            raise LpError(f"exploration LP returned status {sol.status.value}")
        eta[cols] = sol.x
        objective = sol.objective
        if sol.basis is not None:
            labels = tuple(col_labels[sol.basis].tolist())
    eta[cs.forced] = np.inf
    return ExplorationRates(eta.reshape(cs.shape), float(objective), True, basis=labels)


def check_membership(rates, cs: ConstraintSet) -> bool:
    """Whether finite ``rates`` satisfy every row of ``cs`` (within 1e-9)."""
    flat = np.asarray(rates, dtype=float).reshape(-1)
    if cs.rows.size == 0:
        return True
    lhs = cs.weights @ flat[cs.variables]
    if cs.forced.size:
        lhs = lhs + cs.forced_weights @ flat[cs.forced]
    return bool(np.all(lhs >= cs.rhs - MEMBERSHIP_TOL))


def unstructured_membership(rates, gaps: GapTable) -> bool:
    """Same answer as ``check_membership(rates, build_unstructured(gaps, restricted))``
    without materialising the diagonal weight matrix."""
    rows = ~gaps.optimal
    d = gaps.delta[rows]
    if (d <= 0).any():
        return False
    lhs = (d / (gaps.span + 1.0)) ** 2 * np.asarray(rates, dtype=float)[rows]
    return bool((lhs >= RHS - MEMBERSHIP_TOL).all())


def lipschitz_membership(rates, gaps: GapTable, penalty: np.ndarray) -> bool:
    """Same answer as ``check_membership(rates, build_lip_lp(spec, gaps, True, penalty))``
    for a thresholded (nonnegative) gap table, with the weights built once."""
    delta = gaps.delta.reshape(-1)
    rows = np.flatnonzero(~gaps.optimal.reshape(-1))
    if rows.size == 0:
        return True
    u = delta[rows] / (gaps.span + 1.0)
    w = np.maximum(u[:, None] - penalty[rows], 0.0)
    w = w * w
    flat = np.asarray(rates, dtype=float).reshape(-1)
    pos = delta > 0
    lhs = w[:, pos] @ flat[pos]
    zero = ~pos
    if zero.any():
        lhs = lhs + w[:, zero] @ flat[zero]
    return bool((lhs >= RHS - MEMBERSHIP_TOL).all())


def constraint_residual(eta, cs: ConstraintSet) -> float:
    """Largest shortfall ``2 - W eta`` over the rows not dropped by forced pairs."""
    flat = np.asarray(eta, dtype=float).reshape(-1)
    active = ~cs.dropped_rows
    if not active.any():
        return 0.0
    lhs = cs.weights[active] @ flat[cs.variables]
    return float(max(0.0, np.max(cs.rhs - lhs)))


def objective_value(eta, gaps: GapTable) -> float:
    eta = np.asarray(eta, dtype=float)
    finite = np.isfinite(eta)
    return float((eta[finite] * gaps.delta[finite]).sum())


def _extent(emb):
    emb = np.asarray(emb, dtype=float)
    return float((emb.max(axis=0) - emb.min(axis=0)).max()), emb.shape[1]


def _covering_term(L, D, dim, alpha, dmin, H):
    if L == 0:
        return math.inf
    radius = (dmin / (8.0 * L * (H + 1.0))) ** (1.0 / alpha)
    return (D * math.sqrt(dim) / radius + 1.0) ** dim


def covering_bounds(spec: StructureSpec, gaps: GapTable) -> CoveringBounds:
    """Effective state/action counts and the resulting bound on the Lipschitz objective.

    ``D`` and ``D'`` are the largest per-coordinate extents of the embeddings.
    A zero Lipschitz constant gives an infinite covering term, so the count
    falls back to ``S`` (resp. ``A``).
    """
    if not math.isfinite(gaps.delta_min):
        raise ValidationError("covering bounds need a finite minimum gap")
    se, ae = spec._embeddings()
    S, A = gaps.shape
    H, dmin = gaps.span, gaps.delta_min
    D, d = _extent(se)
    Dp, dp = _extent(ae)
    s_lip = min(float(S), _covering_term(spec.L, D, d, spec.alpha, dmin, H))
    a_lip = min(float(A), _covering_term(spec.L_prime, Dp, dp, spec.alpha_prime, dmin, H))
    k_upper = 8.0 * (H + 1.0) ** 3 / dmin**2 * s_lip * a_lip
    return CoveringBounds(s_lip, a_lip, k_upper)


def k_un_bound(gaps: GapTable) -> float:
    """``2 (H + 1)**2 S A / delta_min``, the size-dependent bound on the unstructured objective."""
    S, A = gaps.shape
    return 2.0 * (gaps.span + 1.0) ** 2 * S * A / gaps.delta_min


def lower_bound(spec: StructureSpec, gaps: GapTable) -> ExplorationRates:
    """Exploration rates of the (unrestricted) program for the given structure."""
    if spec.is_lipschitz:
        return solve_exploration(build_lip_lp(spec, gaps), gaps)
    return eta_unstructured(gaps)


def lipschitz_violations(mdp: Mdp, spec: StructureSpec, tol: float = 1e-12):
    """All pair couples breaking the transition or reward Lipschitz condition.

    Checks ``||p(.|x,a) - p(.|x',a')||_1 <= L d(x,x')**alpha + L' d(a,a')**alpha'``
    and ``|r(x,a) - r(x',a')|`` against the same bound, for every couple of
    pairs. Returns a list of ``(kind, (x, a), (x', a'), lhs, bound)``.
    """
    spec = spec if spec.state_embedding is not None else spec.bind(mdp)
    S, A = mdp.num_states, mdp.num_actions
    bound = spec.penalty_matrix() / 2.0
    P = mdp.transitions.reshape(S * A, S)
    r = mdp.reward_means.reshape(-1)
    l1 = np.abs(P[:, None, :] - P[None, :, :]).sum(axis=2)
    dr = np.abs(r[:, None] - r[None, :])
    out = []
    for kind, lhs in (("transition", l1), ("reward", dr)):
        for i, j in np.argwhere(lhs > bound + tol):
            out.append((kind, divmod(int(i), A), divmod(int(j), A), float(lhs[i, j]), float(bound[i, j])))
    return out
