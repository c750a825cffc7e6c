"""DEL(gamma): directed-exploration learning on an empirical MDP.

Each step the agent restricts the empirical MDP to the well-sampled actions
``C_t``, plans on it, and then picks one of four phases at the current state:
monotonize, estimate, exploit, or explore. Logarithms follow the conventions
``ln 0 := 0`` and ``ln ln n := 0`` whenever ``ln n <= 1``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import PlanningError, ValidationError
from .mdp import GapTable, restricted_gaps
from .structure import (
    ExplorationRates,
    StructureSpec,
    build_constraints,
    eta_unstructured,
    lipschitz_membership,
    solve_exploration,
    unstructured_membership,
)

log = logging.getLogger(__name__)

FULL = "full"
SIMPLIFIED = "simplified"


class Phase(str, enum.Enum):
    MONOTONIZE = "mnt"
    ESTIMATE = "est"
    EXPLOIT = "xpt"
    EXPLORE = "xpr"


PHASES = tuple(Phase)


def ln(n: float) -> float:
    return math.log(n) if n >= 1 else 0.0


def lnln(n: float) -> float:
    v = ln(n)
    return math.log(v) if v > 1 else 0.0


@dataclass(frozen=True)
class AgentConfig:
    structure: StructureSpec = field(default_factory=StructureSpec)
    mode: str = FULL
    gamma: float = 1.0
    resolve_every: int = 1
    name: str = ""

    def __post_init__(self):
        if self.mode not in (FULL, SIMPLIFIED):
            raise ValidationError(f"unknown agent mode '{self.mode}'")
        if self.mode == SIMPLIFIED:
            object.__setattr__(self, "gamma", 1.0)
        if self.gamma <= 0:
            raise ValidationError("gamma must be positive")
        if self.resolve_every < 1:
            raise ValidationError("resolve_every must be >= 1")

    @property
    def label(self) -> str:
        return self.name or f"{self.structure.kind}-{self.mode}"


class Transition(NamedTuple):
    x: int
    a: int
    r: float
    y: int


@dataclass(frozen=True)
class Schedule:
    zeta_t: float
    gamma_t: float


def rates_schedule(t: int, gamma: float = 1.0, mode: str = FULL) -> Schedule:
    if t < 1:
        raise ValidationError("schedules are defined for t >= 1")
    if mode == SIMPLIFIED:
        return Schedule(0.0, 2.0 * (1.0 + ln(t)))
    return Schedule(1.0 / (1.0 + lnln(t)), (1.0 + gamma) * (1.0 + ln(t)))


@dataclass
class AgentState:
    t: int
    current: int
    state_counts: np.ndarray
    pair_counts: np.ndarray
    transition_counts: np.ndarray
    reward_sums: np.ndarray
    empirical_p: np.ndarray
    empirical_r: np.ndarray
    cached_rates: Optional[ExplorationRates] = None
    cache_key: Optional[tuple] = None
    cache_time: int = 0
    warm_policy: Optional[np.ndarray] = None
    last_phase: Optional[Phase] = None

    @property
    def num_states(self) -> int:
        return self.state_counts.size

    @property
    def num_actions(self) -> int:
        return self.pair_counts.shape[1]

    def copy(self) -> "AgentState":
        def c(v):
            return v.copy() if isinstance(v, np.ndarray) else v

        return AgentState(**{k: c(v) for k, v in self.__dict__.items()})


def init_agent_state(num_states: int, num_actions: int, x1: int = 0) -> AgentState:
    S, A = num_states, num_actions
    n = np.zeros(S, dtype=np.int64)
    n[x1] = 1
    return AgentState(
        t=1,
        current=x1,
        state_counts=n,
        pair_counts=np.zeros((S, A), dtype=np.int64),
        transition_counts=np.zeros((S, A, S), dtype=np.int64),
        reward_sums=np.zeros((S, A)),
        empirical_p=np.full((S, A, S), 1.0 / S),
        empirical_r=np.zeros((S, A)),
    )


def compute_ct(agent: AgentState) -> np.ndarray:
    """``C_t(x) = {a : N_t(x, a) >= ln(N_t(x))**2}`` as an ``(S, A)`` mask.

    A state left without actions keeps its most-sampled ones.
    """
    logs = np.log(np.maximum(agent.state_counts, 1))
    C = agent.pair_counts >= (logs**2)[:, None]
    nonempty = C.any(axis=1)
    if not nonempty.all():
        empty = ~nonempty
        counts = agent.pair_counts[empty]
        C[empty] = counts == counts.max(axis=1, keepdims=True)
    return C


def observe(agent: AgentState, tr: Transition) -> AgentState:
    """Fold one transition into the counts and the empirical kernels (in place)."""
    x, a, r, y = int(tr.x), int(tr.a), float(tr.r), int(tr.y)
    if x != agent.current:
        raise ValidationError(f"transition starts in {x} but the agent is in {agent.current}")
    agent.pair_counts[x, a] += 1
    agent.transition_counts[x, a, y] += 1
    agent.reward_sums[x, a] += r
    n = agent.pair_counts[x, a]
    agent.empirical_p[x, a] = agent.transition_counts[x, a] / n
    agent.empirical_r[x, a] = agent.reward_sums[x, a] / n
    agent.state_counts[y] += 1
    agent.t += 1
    agent.current = y
    return agent


def current_gap_table(agent: AgentState, schedule: Schedule, C: Optional[np.ndarray] = None) -> GapTable:
    """Thresholded gaps of the empirical MDP against its ``C_t``-restricted optimum."""
    if C is None:
        C = compute_ct(agent)
    return restricted_gaps(
        agent.empirical_p, agent.empirical_r, C, schedule.zeta_t, agent.current, agent.warm_policy
    )


def _argmin(counts, mask) -> int:
    idx = mask.nonzero()[0]
    return int(idx[counts[idx].argmin()])


@dataclass
class Decision:
    action: int
    phase: Phase
    gaps: Optional[GapTable] = None
    rates: Optional[ExplorationRates] = None
    membership: Optional[bool] = None


class DelAgent:
    """Stateful wrapper tying an :class:`AgentConfig` to an :class:`AgentState`."""

    def __init__(self, config: AgentConfig, num_states: int, num_actions: int, x1: int = 0):
        self.config = config
        self.state = init_agent_state(num_states, num_actions, x1)
        self._penalty = config.structure.penalty_matrix() if config.structure.is_lipschitz else None

    def act(self, x: int):
        d = select_action(self, x)
        return d.action, d.phase

    def update(self, tr: Transition) -> None:
        observe(self.state, tr)


def _rates(agent: DelAgent, gaps: GapTable, C) -> ExplorationRates:
    st, cfg = agent.state, agent.config
    key = (C.tobytes(), gaps.optimal.tobytes())
    if (
        cfg.resolve_every > 1
        and st.cached_rates is not None
        and st.cache_key == key
        and st.t - st.cache_time < cfg.resolve_every
    ):
        return st.cached_rates
    if cfg.structure.is_lipschitz:
        warm = st.cached_rates.basis if st.cached_rates is not None else None
        cs = build_constraints(cfg.structure, gaps, restricted=True, penalty=agent._penalty)
        rates = solve_exploration(cs, gaps, warm)
    else:
        rates = eta_unstructured(gaps, restricted=True)
    st.cached_rates, st.cache_key, st.cache_time = rates, key, st.t
    return rates


def select_action(agent: DelAgent, x: int) -> Decision:
    """Run the phase tests of DEL at state ``x`` and return the chosen action."""
    st, cfg = agent.state, agent.config
    if x != st.current:
        raise ValidationError(f"agent is in state {st.current}, asked to act in {x}")
    sched = rates_schedule(st.t, cfg.gamma, cfg.mode)
    n = st.pair_counts[x]
    C = compute_ct(st)
    try:
        gaps = current_gap_table(st, sched, C)
    except PlanningError as exc:
        log.info("planning failed at t=%d (%s); estimating instead", st.t, exc)
        st.last_phase = Phase.ESTIMATE
        return Decision(_argmin(n, np.ones_like(n, dtype=bool)), Phase.ESTIMATE)
    st.warm_policy = gaps.optimal.argmax(axis=1)
    opt_x = gaps.optimal[x]
    lg = ln(st.state_counts[x])

    if (n[opt_x] < lg * lg + 1.0).all():
        d = Decision(_argmin(n, opt_x), Phase.MONOTONIZE, gaps)
    elif (n < lg / (1.0 + lnln(st.state_counts[x]))).any():
        d = Decision(_argmin(n, np.ones_like(opt_x)), Phase.ESTIMATE, gaps)
    else:
        scaled = st.pair_counts / sched.gamma_t
        if cfg.structure.is_lipschitz:
            member = lipschitz_membership(scaled, gaps, agent._penalty)
        else:
            member = unstructured_membership(scaled, gaps)
        if member:
            d = Decision(_argmin(n, opt_x), Phase.EXPLOIT, gaps, membership=True)
        else:
            rates = _rates(agent, gaps, C)
            budget = rates.eta[x] * sched.gamma_t
            cand = n <= budget
            if cand.any():
                d = Decision(_argmin(n, cand), Phase.EXPLORE, gaps, rates, False)
            else:
                d = Decision(_argmin(n, opt_x), Phase.EXPLORE, gaps, rates, False)
    st.last_phase = d.phase
    return d
