import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GO, STAY, make_m2
from delmdp.envs import TwoClusterParams, make_random_ergodic, make_two_cluster
from delmdp.errors import ValidationError
from delmdp.mdp import GapTable, Mdp, delta_star, delta_star_restricted, solve_optimal
from delmdp.structure import (
    StructureSpec,
    _covering_term,
    build_constraints,
    build_lip_lp,
    build_unstructured,
    check_membership,
    constraint_residual,
    covering_bounds,
    eta_unstructured,
    k_un_bound,
    lip_weight,
    lipschitz_membership,
    lipschitz_violations,
    lower_bound,
    objective_value,
    solve_exploration,
    unstructured_membership,
)
from oracles import lp_vertex_oracle


def m2_gaps(mdp=None):
    mdp = mdp or make_m2()
    return delta_star(mdp, solve_optimal(mdp))


def lip(L, Lp=None, mdp=None):
    mdp = mdp or make_m2()
    return StructureSpec.lipschitz(L, L if Lp is None else Lp, 1.0, 1.0, mdp)


def k_lip(spec, gaps):
    return solve_exploration(build_lip_lp(spec, gaps), gaps).objective


# -- unstructured closed form ----------------------------------------------------


def test_eta_unstructured_m2():
    rates = eta_unstructured(m2_gaps())
    assert rates.feasible
    assert rates.eta[0, STAY] == pytest.approx(12.5, abs=1e-12)
    assert rates.eta[1, GO] == pytest.approx(200 / 81, abs=1e-12)
    assert rates.eta[0, GO] == 0.0 and rates.eta[1, STAY] == 0.0
    assert rates.objective == pytest.approx(130 / 9, abs=1e-12)
    assert objective_value(rates.eta, m2_gaps()) == pytest.approx(rates.objective, abs=1e-8)


def test_eta_unstructured_all_optimal():
    base = make_random_ergodic(3, 1, seed=2)
    mdp = Mdp(np.repeat(base.transitions, 2, axis=1), np.repeat(base.reward_means, 2, axis=1))
    gaps = delta_star(mdp, solve_optimal(mdp))
    rates = eta_unstructured(gaps)
    assert rates.feasible and rates.objective == 0.0
    assert np.all(rates.eta == 0.0)


def test_eta_unstructured_restricted_empty_set():
    # with C(1) = {go} the restricted optimum makes (1, stay) suboptimal but its gap is -1 -> 0
    m2 = make_m2()
    gaps = delta_star_restricted(m2, np.array([[True, True], [False, True]]), 0.0)
    rates = eta_unstructured(gaps, restricted=True)
    assert not rates.feasible
    assert rates.infeasible_reason == (1, STAY)
    assert np.all(np.isinf(rates.eta[gaps.delta == 0]))
    assert np.all(rates.eta[gaps.delta > 0] == 0.0)


def test_eta_unstructured_constraints_active():
    mdp = make_random_ergodic(5, 3, seed=11)
    gaps = delta_star(mdp, solve_optimal(mdp))
    rates = eta_unstructured(gaps)
    sub = gaps.delta > 0
    lhs = rates.eta[sub] * (gaps.delta[sub] / (gaps.span + 1)) ** 2
    np.testing.assert_allclose(lhs, 2.0, atol=1e-10)


# -- Lipschitz weights and programs -----------------------------------------------


def test_lip_weight_examples():
    gaps = m2_gaps()
    assert lip_weight(lip(0.1), gaps, (0, STAY), (0, STAY)) == pytest.approx((0.8 / 2) ** 2)
    assert lip_weight(lip(0.1), gaps, (0, STAY), (1, GO)) == 0.0
    assert lip_weight(lip(0.05), gaps, (0, STAY), (1, GO)) == pytest.approx(0.04, abs=1e-15)


def test_build_lip_lp_zero_constants():
    gaps = m2_gaps()
    cs = build_lip_lp(lip(0.0), gaps)
    assert cs.rows.size == 2 and cs.variables.size == 2
    expected = np.array([[0.16, 0.16], [0.81, 0.81]])
    np.testing.assert_allclose(cs.weights, expected, atol=1e-15)


def test_build_lip_lp_huge_constants_is_diagonal():
    gaps = m2_gaps()
    cs = build_lip_lp(lip(1e6), gaps)
    np.testing.assert_allclose(cs.weights, build_unstructured(gaps).weights, atol=0)


def test_structurally_infeasible_restricted_set():
    gaps = delta_star_restricted(make_m2(), np.array([[True, True], [False, True]]), 0.0)
    cs = build_lip_lp(lip(0.0), gaps, restricted=True)
    assert cs.structurally_infeasible
    rates = solve_exploration(cs, gaps)
    assert not rates.feasible


def test_build_lip_requires_embeddings():
    with pytest.raises(ValidationError):
        StructureSpec.lipschitz(1, 1, 1, 1, make_m2(embed=False))
    with pytest.raises(ValidationError):
        build_lip_lp(StructureSpec.unstructured(), m2_gaps())
    with pytest.raises(ValidationError):
        StructureSpec.lipschitz(1, 1, 1, 1).penalty_matrix()


def test_solve_exploration_limits():
    gaps = m2_gaps()
    rates = solve_exploration(build_lip_lp(lip(0.0), gaps), gaps)
    assert rates.objective == pytest.approx(10.0, abs=1e-10)
    np.testing.assert_allclose(rates.eta, [[12.5, 0.0], [0.0, 0.0]], atol=1e-10)
    assert k_lip(lip(1e6), gaps) == pytest.approx(130 / 9, abs=1e-10)


def test_solve_exploration_unstructured_matches_closed_form():
    mdp = make_random_ergodic(4, 3, seed=8)
    gaps = delta_star(mdp, solve_optimal(mdp))
    rates = solve_exploration(build_unstructured(gaps), gaps)
    assert rates.objective == pytest.approx(eta_unstructured(gaps).objective, rel=1e-10)


def test_restricted_forced_pairs_are_infinite():
    mdp, spec = make_two_cluster(TwoClusterParams(4, seed=1))
    gaps = delta_star(mdp, solve_optimal(mdp))
    cs = build_lip_lp(spec, gaps, restricted=True)
    rates = solve_exploration(cs, gaps)
    assert np.all(np.isinf(rates.eta[gaps.delta == 0]))
    assert np.all(np.isfinite(rates.eta[gaps.delta > 0]))


def test_warm_start_reuses_basis():
    mdp, spec = make_two_cluster(TwoClusterParams(8, seed=2))
    gaps = delta_star(mdp, solve_optimal(mdp))
    cs = build_lip_lp(spec, gaps)
    cold = solve_exploration(cs, gaps)
    warm = solve_exploration(cs, gaps, warm=cold.basis)
    assert warm.objective == pytest.approx(cold.objective, abs=1e-12)


# -- membership --------------------------------------------------------------------


def test_membership_examples():
    gaps = m2_gaps()
    cs = build_unstructured(gaps)
    rates = eta_unstructured(gaps)
    assert check_membership(rates.eta, cs)
    assert not check_membership(0.5 * rates.eta, cs)
    empty = build_unstructured(GapTable(np.zeros((2, 2)), math.inf, 0.0, np.ones((2, 2), bool)))
    assert check_membership(np.zeros((2, 2)), empty)


def test_membership_lipschitz_shares_samples():
    # with L = 0 one sample budget on the cheapest pair covers both rows
    gaps = m2_gaps()
    cs = build_lip_lp(lip(0.0), gaps)
    assert check_membership(np.array([[12.5, 0.0], [0.0, 0.0]]), cs)
    assert not check_membership(np.array([[12.0, 0.0], [0.0, 0.0]]), cs)


# -- covering bounds --------------------------------------------------------------


def test_covering_two_cluster():
    mdp, spec = make_two_cluster(TwoClusterParams(4, 0.1, 0.1, seed=0))
    gaps = delta_star(mdp, solve_optimal(mdp))
    cov = covering_bounds(spec, gaps)
    assert cov.s_lip == 4 and cov.a_lip == 2
    # on the unit interval the state covering term is (4/9) / (8 * 2 * 14/9) = 1/56 -> 57
    unit = StructureSpec.lipschitz(2, 2, 1, 1).bind(Mdp(mdp.transitions, mdp.reward_means, [[0.0], [0.5], [0.7], [1.0]], [[0.0], [1.0]]))
    assert _covering_term(2.0, 1.0, 1, 1.0, gaps.delta_min, gaps.span) == pytest.approx(57.0)
    assert covering_bounds(unit, gaps).s_lip == 4


def test_covering_tiny_constant_and_zero_constant():
    gaps = m2_gaps()
    # a large constant shrinks the covering radius until the count clamps at S
    cov = covering_bounds(lip(1e3), gaps)
    assert cov.s_lip == 2 and cov.a_lip == 2
    # a tiny constant makes a single ball cover everything
    assert covering_bounds(lip(1e-9), gaps).s_lip == pytest.approx(1.0, abs=1e-6)
    cov0 = covering_bounds(lip(0.0), gaps)
    assert (cov0.s_lip, cov0.a_lip) == (2, 2)
    assert cov0.k_upper == pytest.approx(400.0, abs=1e-9)


def test_covering_needs_finite_gap():
    table = GapTable(np.zeros((2, 2)), math.inf, 0.0, np.ones((2, 2), bool))
    with pytest.raises(ValidationError):
        covering_bounds(lip(1.0), table)


def test_k_un_bound_m2():
    assert k_un_bound(m2_gaps()) == pytest.approx(40.0)


def test_lower_bound_dispatch():
    gaps = m2_gaps()
    assert lower_bound(StructureSpec.unstructured(), gaps).objective == pytest.approx(130 / 9)
    assert lower_bound(lip(0.0), gaps).objective == pytest.approx(10.0)


# -- Lipschitz certification -------------------------------------------------------


@pytest.mark.parametrize("S", [4, 8, 12, 16, 20])
def test_two_cluster_is_lipschitz(S):
    mdp, spec = make_two_cluster(TwoClusterParams(S, seed=S))
    assert lipschitz_violations(mdp, spec) == []


def test_violations_detected():
    mdp = make_m2()
    bad = lipschitz_violations(mdp, lip(0.1))
    kinds = {v[0] for v in bad}
    assert kinds == {"transition", "reward"}


# -- randomized properties ---------------------------------------------------------


def random_lip_instance(S, A, seed, L):
    mdp = make_random_ergodic(S, A, seed, embedding_dims=(2, 1))
    gaps = delta_star(mdp, solve_optimal(mdp))
    return mdp, gaps, StructureSpec.lipschitz(L, L, 1.0, 1.0, mdp)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5), st.integers(2, 3), st.integers(0, 10_000), st.floats(0.0, 3.0))
def test_lipschitz_bounds(S, A, seed, L):
    mdp, gaps, spec = random_lip_instance(S, A, seed, L)
    if not math.isfinite(gaps.delta_min):
        return
    cs = build_lip_lp(spec, gaps)
    rates = solve_exploration(cs, gaps)
    k_un = eta_unstructured(gaps).objective
    assert rates.feasible
    assert rates.objective <= k_un + 1e-8
    assert k_un <= k_un_bound(gaps) + 1e-6
    assert rates.objective <= covering_bounds(spec, gaps).k_upper + 1e-6
    assert constraint_residual(rates.eta, cs) <= 1e-9
    assert objective_value(rates.eta, gaps) == pytest.approx(rates.objective, abs=1e-8)
    assert np.all(rates.eta[gaps.optimal] == 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_k_lip_monotone_in_constants(S, seed, L1, dL):
    mdp, gaps, spec = random_lip_instance(S, 2, seed, L1)
    if not math.isfinite(gaps.delta_min):
        return
    spec2 = StructureSpec.lipschitz(L1 + dL, L1 + dL, 1.0, 1.0, mdp)
    assert k_lip(spec, gaps) <= k_lip(spec2, gaps) + 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 3), st.integers(0, 10_000), st.floats(0.0, 2.0))
def test_k_lip_matches_vertex_oracle(S, seed, L):
    mdp, gaps, spec = random_lip_instance(S, 2, seed, L)
    if not math.isfinite(gaps.delta_min):
        return
    cs = build_constraints(spec, gaps)
    status, val = lp_vertex_oracle(gaps.delta.reshape(-1)[cs.variables], cs.weights, np.full(cs.rows.size, 2.0))
    assert status == "optimal"
    assert k_lip(spec, gaps) == pytest.approx(val, abs=1e-8)


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 5), st.integers(0, 10_000), st.floats(0.0, 2.0), st.floats(0.0, 0.5))
def test_direct_membership_matches_constraint_set(S, seed, L, zeta):
    mdp = make_random_ergodic(S, 2, seed, embedding_dims=(1, 1))
    rng = np.random.default_rng(seed)
    C = rng.random((S, 2)) < 0.7
    C[np.arange(S), rng.integers(0, 2, S)] = True
    gaps = delta_star_restricted(mdp, C, zeta)
    spec = lip(L, mdp=mdp)
    pen = spec.penalty_matrix()
    for scale in (0.0, 1.0, 10.0, 1e3):
        rates = rng.integers(0, 50, (S, 2)) * scale
        assert lipschitz_membership(rates, gaps, pen) == check_membership(
            rates, build_lip_lp(spec, gaps, restricted=True, penalty=pen)
        )
        assert unstructured_membership(rates, gaps) == check_membership(rates, build_unstructured(gaps, restricted=True))
