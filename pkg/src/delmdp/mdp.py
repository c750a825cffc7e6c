"""Tabular MDPs with Bernoulli rewards and their average-reward planning quantities.

Conventions used throughout the package:

* transitions are stored as an ``(S, A, S)`` array ``P[x, a, y] = p(y | x, a)``;
* reward means are an ``(S, A)`` array with entries in ``[0, 1]``;
* a policy is an integer array of length ``S`` holding one action per state;
* a correspondence (restricted action sets) is a boolean ``(S, A)`` mask with
  at least one ``True`` per row.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg.lapack import dgesv
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import NonConvergenceError, PlanningError, ReducibleChainError, ValidationError

log = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
RESIDUAL_TOL = 1e-8
TIE_TOL = 1e-9
ENUMERATION_LIMIT = 1024

PROVEN_ERGODIC = "proven-ergodic"
PROVEN_NOT_ERGODIC = "proven-not-ergodic"
UNKNOWN = "unknown"


def _as_embedding(emb, n, what):
    if emb is None:
        return None
    arr = np.array(emb, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] != n:
        raise ValidationError(f"{what} must have one row per {what.split('_')[0]} (expected {n} rows, got shape {arr.shape})")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mdp:
    """A finite MDP with Bernoulli rewards.

    Construction only checks shapes, so that :func:`validate_mdp` can report
    every violation of a malformed instance. Use :meth:`checked` (or the file
    loader) to reject invalid kernels up front.
    """

    transitions: np.ndarray
    reward_means: np.ndarray
    state_embedding: Optional[np.ndarray] = None
    action_embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.array(self.transitions, dtype=float)
        r = np.array(self.reward_means, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValidationError(f"transitions must have shape (S, A, S), got {p.shape}")
        S, A = p.shape[0], p.shape[1]
        if S < 1 or A < 1:
            raise ValidationError("an MDP needs at least one state and one action")
        if r.shape != (S, A):
            raise ValidationError(f"reward_means must have shape ({S}, {A}), got {r.shape}")
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "reward_means", r)
        object.__setattr__(self, "state_embedding", _as_embedding(self.state_embedding, S, "state_embedding"))
        object.__setattr__(self, "action_embedding", _as_embedding(self.action_embedding, A, "action_embedding"))

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def has_embeddings(self) -> bool:
        return self.state_embedding is not None and self.action_embedding is not None

    @classmethod
    def checked(cls, transitions, reward_means, state_embedding=None, action_embedding=None) -> "Mdp":
        """Build an MDP and raise :class:`ValidationError` on the first invariant violation."""
        mdp = cls(transitions, reward_means, state_embedding, action_embedding)
        report = validate_mdp(mdp, check_ergodicity=False)
        if report.errors:
            raise ValidationError(report.errors[0])
        return mdp


@dataclass
class ValidationReport:
    row_sum_errors: list = field(default_factory=list)  # (x, a, row_sum)
    entry_errors: list = field(default_factory=list)  # (x, a, y, value)
    reward_errors: list = field(default_factory=list)  # (x, a, value)
    ergodicity: str = UNKNOWN
    witness: Optional[np.ndarray] = None
    warnings: list = field(default_factory=list)

    @property
    def errors(self) -> list:
        msgs = [f"transition entry p({y}|{x},{a}) = {v!r} outside [0, 1]" for x, a, y, v in self.entry_errors]
        msgs += [f"transition row ({x},{a}) sums to {s!r}, not 1" for x, a, s in self.row_sum_errors]
        msgs += [f"reward mean r({x},{a}) = {v!r} outside [0, 1]" for x, a, v in self.reward_errors]
        return msgs

    @property
    def ok(self) -> bool:
        return not self.errors and self.ergodicity != PROVEN_NOT_ERGODIC


def _strongly_connected(adj: np.ndarray) -> bool:
    if adj.shape[0] == 1:
        return True
    n, _ = connected_components(csr_matrix(adj), directed=True, connection="strong")
    return n == 1


def policy_matrix(mdp: Mdp, f) -> np.ndarray:
    f = as_policy(mdp, f)
    return mdp.transitions[np.arange(mdp.num_states), f]


def is_irreducible(mdp: Mdp, f) -> bool:
    return _strongly_connected(policy_matrix(mdp, f) > 0)


def validate_mdp(mdp: Mdp, check_ergodicity: bool = True) -> ValidationReport:
    """Collect kernel/reward violations and an ergodicity verdict.

    The verdict is ``proven-ergodic`` when the graph keeping only edges present
    under *every* action is strongly connected, or when all ``A**S <= 1024``
    deterministic policies induce irreducible chains. A reducible policy found
    by enumeration (or a disconnected union graph) is returned as witness.
    """
    rep = ValidationReport()
    p, r = mdp.transitions, mdp.reward_means
    S, A = mdp.num_states, mdp.num_actions
    for x, a, y in zip(*np.nonzero((p < 0) | (p > 1) | ~np.isfinite(p))):
        rep.entry_errors.append((int(x), int(a), int(y), float(p[x, a, y])))
    sums = p.sum(axis=2)
    for x, a in zip(*np.nonzero(~(np.abs(sums - 1.0) <= ROW_SUM_TOL))):
        rep.row_sum_errors.append((int(x), int(a), float(sums[x, a])))
    for x, a in zip(*np.nonzero(~((r >= 0) & (r <= 1)))):
        rep.reward_errors.append((int(x), int(a), float(r[x, a])))
    if not check_ergodicity or rep.entry_errors:
        return rep

    positive = p > 0
    if _strongly_connected(positive.all(axis=1)):
        rep.ergodicity = PROVEN_ERGODIC
        return rep
    if not _strongly_connected(positive.any(axis=1)):
        # no policy can connect what the union of all actions cannot
        rep.ergodicity = PROVEN_NOT_ERGODIC
        rep.witness = np.zeros(S, dtype=int)
        return rep
    if A**S <= ENUMERATION_LIMIT:
        idx = np.arange(S)
        for f in itertools.product(range(A), repeat=S):
            if not _strongly_connected(positive[idx, list(f)]):
                rep.ergodicity = PROVEN_NOT_ERGODIC
                rep.witness = np.array(f, dtype=int)
                return rep
        rep.ergodicity = PROVEN_ERGODIC
        return rep
    rep.warnings.append(f"ergodicity undecided: A^S = {A}^{S} exceeds the enumeration limit {ENUMERATION_LIMIT}")
    log.warning(rep.warnings[-1])
    return rep


def as_policy(mdp: Mdp, f) -> np.ndarray:
    f = np.asarray(f, dtype=int)
    if f.shape != (mdp.num_states,):
        raise ValidationError(f"policy must assign one action to each of {mdp.num_states} states")
    if f.min() < 0 or f.max() >= mdp.num_actions:
        raise ValidationError(f"policy uses an action outside 0..{mdp.num_actions - 1}")
    return f


def as_correspondence(mdp: Mdp, allowed) -> np.ndarray:
    if allowed is None:
        return np.ones((mdp.num_states, mdp.num_actions), dtype=bool)
    allowed = np.asarray(allowed, dtype=bool)
    if allowed.shape != (mdp.num_states, mdp.num_actions):
        raise ValidationError("correspondence must be an (S, A) boolean mask")
    if not allowed.any(axis=1).all():
        raise ValidationError("correspondence leaves some state without actions")
    return allowed


@dataclass(frozen=True, eq=False)
class GainBias:
    gain: float
    bias: np.ndarray
    ref_state: int = 0


@dataclass(frozen=True, eq=False)
class OptimalSolution:
    gain_bias: GainBias
    optimal_actions: np.ndarray  # (S, A) bool mask, O(x) per row
    policy: np.ndarray
    q_values: np.ndarray  # (B^a h*)(x)
    residual: float = 0.0

    @property
    def gain(self) -> float:
        return self.gain_bias.gain

    @property
    def bias(self) -> np.ndarray:
        return self.gain_bias.bias


@dataclass(frozen=True, eq=False)
class GapTable:
    """Gap values with the span of the bias they were computed from.

    ``optimal`` marks the optimal action sets the table was built against
    (those of the restricted MDP for restricted tables). ``raw`` holds the
    pre-threshold values of a restricted table.
    """

    delta: np.ndarray
    delta_min: float
    span: float
    optimal: np.ndarray
    gain: float = 0.0
    bias: Optional[np.ndarray] = None
    raw: Optional[np.ndarray] = None
    zeta: float = 0.0

    @property
    def shape(self):
        return self.delta.shape


def span(h) -> float:
    h = np.asarray(h, dtype=float)
    return float(h.max() - h.min())


def bellman_apply(mdp: Mdp, h, x: int, a: int) -> float:
    """``r(x, a) + sum_y p(y|x, a) h(y)``."""
    h = np.asarray(h, dtype=float)
    if h.shape != (mdp.num_states,):
        raise ValidationError(f"bias vector must have length {mdp.num_states}")
    if not (0 <= x < mdp.num_states and 0 <= a < mdp.num_actions):
        raise IndexError(f"state-action ({x}, {a}) out of range")
    return float(mdp.reward_means[x, a] + mdp.transitions[x, a] @ h)


def stationary_distribution(mdp: Mdp, f) -> np.ndarray:
    Pf = policy_matrix(mdp, f)
    S = Pf.shape[0]
    if not _strongly_connected(Pf > 0):
        raise ReducibleChainError("chain is reducible under this policy")
    M = Pf.T - np.eye(S)
    M[-1, :] = 1.0
    b = np.zeros(S)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise ReducibleChainError("singular balance equations") from exc
    if np.max(np.abs(pi @ Pf - pi)) > 1e-10:
        raise ReducibleChainError("balance equations not satisfied to 1e-10")
    return np.clip(pi, 0.0, None)


# -- planning core on raw arrays (shared with the learning agent) ----------


def _evaluate(P, r, f, ref):
    S = P.shape[0]
    idx = np.arange(S)
    Pf = P[idx, f]
    rf = r[idx, f]
    M = np.eye(S) - Pf
    # h(ref) = 0, so its column is free to carry the gain coefficient
    M[:, ref] = 1.0
    _, _, z, info = dgesv(M, rf)
    if info != 0:
        raise ReducibleChainError("policy evaluation system is singular")
    g = z[ref]
    h = z
    h[ref] = 0.0
    res = g + h - rf - Pf @ h
    # written so that NaN fails the test
    if not np.abs(res).max() <= RESIDUAL_TOL:
        raise ReducibleChainError("policy is not unichain (evaluation residual too large)")
    return float(g), h


def _policy_iteration(P, r, allowed, ref, f0, max_iter=1000):
    S = P.shape[0]
    idx = np.arange(S)
    f = np.asarray(f0, dtype=int).copy()
    for _ in range(max_iter):
        g, h = _evaluate(P, r, f, ref)
        Q = r + P @ h
        Qa = np.where(allowed, Q, -np.inf)
        best = Qa.max(axis=1)
        better = best > Q[idx, f] + TIE_TOL
        if not better.any():
            return g, h, Q, best
        f = np.where(better, Qa.argmax(axis=1), f)
    raise NonConvergenceError(f"policy iteration did not converge in {max_iter} iterations")


def _first_allowed(allowed, f0=None):
    first = allowed.argmax(axis=1)
    if f0 is None:
        return first
    f0 = np.asarray(f0, dtype=int)
    ok = allowed[np.arange(allowed.shape[0]), f0]
    return np.where(ok, f0, first)


def _closed_component(P, allowed, start):
    """Largest closed communicating set containing ``start`` and the actions keeping it closed."""
    S = P.shape[0]
    alive = np.ones(S, dtype=bool)
    act = allowed.copy()
    while True:
        adj = (P * act[:, :, None]).sum(axis=1) > 0
        adj[~alive] = False
        adj[:, ~alive] = False
        _, labels = connected_components(csr_matrix(adj), directed=True, connection="strong")
        comp = alive & (labels == labels[start])
        leaks = (P[:, :, ~comp] > 0).any(axis=2)
        new_act = act & ~leaks & comp[:, None]
        new_alive = comp & new_act.any(axis=1)
        if not new_alive[start]:
            raise PlanningError(f"state {start} is transient under every restricted policy")
        if np.array_equal(new_alive, alive) and np.array_equal(new_act, act):
            return alive, act
        alive, act = new_alive, new_act


def _relative_value_iteration(P, r, allowed, ref, tol=1e-11, max_iter=20000, tau=0.5):
    # aperiodicity transform keeps the same bias and scales the gain by tau
    S = P.shape[0]
    Pt = tau * P + (1 - tau) * np.eye(S)[:, None, :]
    rt = tau * r
    v = np.zeros(S)
    for _ in range(max_iter):
        Tv = np.where(allowed, rt + Pt @ v, -np.inf).max(axis=1)
        diff = Tv - v
        v_new = Tv - Tv[ref]
        if diff.max() - diff.min() < tol:
            return float(diff[ref] / tau), v_new
        v = v_new
    raise NonConvergenceError("relative value iteration did not converge", residual=float(diff.max() - diff.min()))


def _solve_on_component(P, r, allowed, ref, f0):
    alive, act = _closed_component(P, allowed, ref)
    keep = np.flatnonzero(alive)
    Ps = P[np.ix_(keep, np.arange(P.shape[1]), keep)]
    rs = r[keep]
    acts = act[keep]
    sref = int(np.searchsorted(keep, ref))
    start = _first_allowed(acts, None if f0 is None else np.asarray(f0)[keep])
    try:
        g, hs, _, _ = _policy_iteration(Ps, rs, acts, sref, start)
    except ReducibleChainError:
        g, hs = _relative_value_iteration(Ps, rs, acts, sref)
        greedy = np.where(acts, rs + Ps @ hs, -np.inf).argmax(axis=1)
        try:
            g, hs, _, _ = _policy_iteration(Ps, rs, acts, sref, greedy)
        except ReducibleChainError:
            pass
    h = np.zeros(P.shape[0])
    h[keep] = hs
    return g, h


def plan(P, r, allowed=None, ref=0, init_policy=None, fallback=False):
    """Optimal gain/bias on raw arrays, optionally restricted to ``allowed``.

    Returns ``(g, h, Q, optimal_mask)``. With ``fallback=True`` a restricted
    MDP that is not unichain is solved on the closed communicating set
    containing ``ref`` and the bias is set to 0 elsewhere.
    """
    g, h, Q, optimal, _ = _plan(P, r, allowed, ref, init_policy, fallback)
    return g, h, Q, optimal


def _plan(P, r, allowed, ref, init_policy, fallback):
    if allowed is None:
        allowed = np.ones(r.shape, dtype=bool)
    f0 = _first_allowed(allowed, init_policy)
    try:
        g, h, Q, best = _policy_iteration(P, r, allowed, ref, f0)
    except ReducibleChainError:
        if not fallback:
            raise
        g, h = _solve_on_component(P, r, allowed, ref, init_policy)
        Q = r + P @ h
        best = np.where(allowed, Q, -np.inf).max(axis=1)
    optimal = allowed & (best[:, None] - Q <= TIE_TOL)
    return g, h, Q, optimal, best


# -- public planning API ----------------------------------------------------


def evaluate_policy(mdp: Mdp, f, ref_state: int = 0) -> GainBias:
    f = as_policy(mdp, f)
    g, h = _evaluate(mdp.transitions, mdp.reward_means, f, ref_state)
    return GainBias(g, h, ref_state)


def solve_optimal(mdp: Mdp, ref_state: int = 0, allowed=None, max_iter: int = 1000) -> OptimalSolution:
    """Howard policy iteration with exact evaluation.

    Improvements are accepted only when the Bellman advantage exceeds 1e-9;
    the reported policy picks the lowest-index optimal action per state.
    """
    allowed = as_correspondence(mdp, allowed)
    P, r = mdp.transitions, mdp.reward_means
    g, h, Q, best = _policy_iteration(P, r, allowed, ref_state, _first_allowed(allowed), max_iter=max_iter)
    optimal = allowed & (best[:, None] - Q <= TIE_TOL)
    residual = float(np.max(np.abs(g + h - best)))
    if residual > RESIDUAL_TOL:
        raise NonConvergenceError("optimality equation residual too large", residual=residual)
    policy = optimal.argmax(axis=1)
    return OptimalSolution(GainBias(g, h, ref_state), optimal, policy, Q, residual)


def _gap_table(Q, optimal, allowed, g, h, zeta=None, best=None):
    if best is None:
        best = np.where(allowed, Q, -np.inf).max(axis=1)
    raw = best[:, None] - Q
    raw[optimal] = 0.0
    delta = raw.copy() if zeta is None else np.where(raw > zeta, raw, 0.0)
    pos = delta[delta > 0]
    dmin = float(pos.min()) if pos.size else math.inf
    return GapTable(
        delta=delta,
        delta_min=dmin,
        span=span(h),
        optimal=optimal,
        gain=g,
        bias=h,
        raw=raw if zeta is not None else None,
        zeta=0.0 if zeta is None else float(zeta),
    )


def delta_star(mdp: Mdp, sol: OptimalSolution) -> GapTable:
    """Gaps ``(B* h*)(x) - (B^a h*)(x)``, exactly zero on the optimal sets."""
    allowed = np.ones_like(sol.optimal_actions)
    return _gap_table(sol.q_values, sol.optimal_actions, allowed, sol.gain, sol.bias)


def restricted_gaps(P, r, allowed, zeta, ref, init_policy=None) -> GapTable:
    g, h, Q, optimal, best = _plan(P, r, allowed, ref, init_policy, fallback=True)
    return _gap_table(Q, optimal, allowed, g, h, zeta=zeta, best=best)


def delta_star_restricted(mdp: Mdp, C, zeta: float, ref_state: int = 0) -> GapTable:
    """Gaps of the full action set against the optimal bias of the restricted MDP.

    Entries ``<= zeta`` are mapped to exactly 0; ``raw`` keeps the
    pre-threshold values, which may be negative.
    """
    if zeta < 0:
        raise ValidationError("zeta must be nonnegative")
    allowed = as_correspondence(mdp, C)
    return restricted_gaps(mdp.transitions, mdp.reward_means, allowed, zeta, ref_state)


def threshold(delta, zeta: float) -> np.ndarray:
    out = np.array(delta, dtype=float)
    out[out <= zeta] = 0.0
    return out


def _bernoulli_kl(p, q):
    if p == q:
        return 0.0
    total = 0.0
    for u, v in ((p, q), (1 - p, 1 - q)):
        if u > 0:
            if v <= 0:
                return math.inf
            total += u * math.log(u / v)
    return total


def kl_pair(phi: Mdp, psi: Mdp, x: int, a: int) -> float:
    """Transition KL plus Bernoulli reward KL at ``(x, a)``; ``inf`` if not absolutely continuous."""
    p = phi.transitions[x, a]
    q = psi.transitions[x, a]
    total = 0.0
    for u, v in zip(p, q):
        if u > 0:
            if v <= 0:
                return math.inf
            total += u * math.log(u / v)
    rk = _bernoulli_kl(float(phi.reward_means[x, a]), float(psi.reward_means[x, a]))
    return max(total + rk, 0.0)


def enumerate_policies(mdp: Mdp) -> Sequence[np.ndarray]:
    return [np.array(f) for f in itertools.product(range(mdp.num_actions), repeat=mdp.num_states)]
