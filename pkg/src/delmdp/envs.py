"""Benchmark MDP generators and a seeded one-step sampler."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .agent import Transition
from .errors import ValidationError
from .mdp import Mdp
from .structure import StructureSpec

STAY, MOVE = 0, 1
TWO_CLUSTER_L = 2.0
TWO_CLUSTER_ALPHA = 1.0


@dataclass(frozen=True)
class TwoClusterParams:
    num_states: int = 4
    epsilon: float = 0.1
    zeta_embed: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_states < 2 or self.num_states % 2:
            raise ValidationError("two-cluster MDP needs an even number of states >= 2")
        if not 0 < self.epsilon < 0.5:
            raise ValidationError("epsilon must lie in (0, 0.5)")
        if not 0 < self.zeta_embed < 1:
            raise ValidationError("zeta_embed must lie in (0, 1)")


def make_two_cluster(params: TwoClusterParams) -> Tuple[Mdp, StructureSpec]:
    """Two equal clusters; ``move`` jumps to the other cluster w.p. ``1 - eps``.

    States ``0 .. S/2 - 1`` form the first cluster (embedded in ``[-zeta, 0]``),
    the rest the second (embedded in ``[1, 1 + zeta]``). Reward 1 is earned by
    moving out of the first cluster. The returned structure is Lipschitz with
    ``L = L' = 2`` and unit exponents.
    """
    S, eps = params.num_states, params.epsilon
    half = S // 2
    rng = np.random.default_rng(params.seed)
    cluster = np.repeat([0, 1], half)
    emb = np.empty(S)
    emb[:half] = rng.uniform(-params.zeta_embed, 0.0, half)
    emb[half:] = rng.uniform(1.0, 1.0 + params.zeta_embed, half)

    same = cluster[:, None] == cluster[None, :]
    hi, lo = 2.0 * (1.0 - eps) / S, 2.0 * eps / S
    P = np.empty((S, 2, S))
    P[:, STAY, :] = np.where(same, hi, lo)
    P[:, MOVE, :] = np.where(same, lo, hi)
    r = np.zeros((S, 2))
    r[:half, MOVE] = 1.0
    mdp = Mdp(P, r, emb.reshape(-1, 1), np.array([[0.0], [1.0]]))
    spec = StructureSpec.lipschitz(TWO_CLUSTER_L, TWO_CLUSTER_L, TWO_CLUSTER_ALPHA, TWO_CLUSTER_ALPHA, mdp)
    return mdp, spec


def make_random_ergodic(
    num_states: int,
    num_actions: int,
    seed: int,
    floor: Optional[float] = None,
    embedding_dims: Optional[Tuple[int, int]] = None,
) -> Mdp:
    """Random MDP whose transition entries are all ``>= floor`` (default ``1 / (2S)``).

    With ``embedding_dims=(d, d')`` uniform embeddings in the unit cubes are attached.
    """
    S, A = num_states, num_actions
    if S < 1 or A < 1:
        raise ValidationError("need at least one state and one action")
    if floor is None:
        floor = 1.0 / (2 * S)
    if floor <= 0 or floor * S > 1:
        raise ValidationError("floor must satisfy 0 < floor * S <= 1")
    rng = np.random.default_rng(seed)
    raw = rng.dirichlet(np.ones(S), size=(S, A))
    P = floor + (1.0 - S * floor) * raw
    r = rng.uniform(0.0, 1.0, size=(S, A))
    se = ae = None
    if embedding_dims is not None:
        d, dp = embedding_dims
        se = rng.uniform(0.0, 1.0, size=(S, d))
        ae = rng.uniform(0.0, 1.0, size=(A, dp))
    return Mdp(P, r, se, ae)


class Sampler:
    """Draws transitions from one MDP using precomputed cumulative rows."""

    def __init__(self, mdp: Mdp):
        self.mdp = mdp
        self._cum = np.cumsum(mdp.transitions, axis=2)
        self._last = mdp.num_states - 1

    def step(self, x: int, a: int, rng: np.random.Generator) -> Transition:
        u = rng.random()
        y = min(int(np.searchsorted(self._cum[x, a], u, side="right")), self._last)
        # skip trailing zero-probability states hit through rounding of the cumulative sum
        while self.mdp.transitions[x, a, y] == 0 and y > 0:
            y -= 1
        r = 1.0 if rng.random() < self.mdp.reward_means[x, a] else 0.0
        return Transition(x, a, r, y)


def sample_step(mdp: Mdp, x: int, a: int, rng: np.random.Generator) -> Transition:
    return Sampler(mdp).step(x, a, rng)
