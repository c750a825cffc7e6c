import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delmdp.lp import LpProblem, LpStatus, solve_lp
from oracles import lp_vertex_oracle


def test_single_binding_constraint():
    sol = solve_lp(LpProblem([1, 1], [[1, 0]], [2]))
    assert sol.status is LpStatus.OPTIMAL
    np.testing.assert_allclose(sol.x, [2, 0])
    assert sol.objective == pytest.approx(2)


def test_two_variable_polytope():
    sol = solve_lp(LpProblem([1, 2], [[1, 1], [0, 1]], [2, 1]))
    assert sol.status is LpStatus.OPTIMAL
    np.testing.assert_allclose(sol.x, [1, 1], atol=1e-12)
    assert sol.objective == pytest.approx(3, abs=1e-12)
    assert lp_vertex_oracle([1, 2], [[1, 1], [0, 1]], [2, 1]) == ("optimal", pytest.approx(3))


def test_zero_row_infeasible():
    sol = solve_lp(LpProblem([1, 1], [[0, 0]], [1]))
    assert sol.status is LpStatus.INFEASIBLE
    assert sol.infeasible_row == 0


def test_unbounded():
    sol = solve_lp(LpProblem([-1, 0], [[1, 1]], [1]))
    assert sol.status is LpStatus.UNBOUNDED


def test_no_constraints():
    assert solve_lp(LpProblem([1, 0], np.zeros((0, 2)), [])).objective == 0.0
    assert solve_lp(LpProblem([-1, 0], np.zeros((0, 2)), [])).status is LpStatus.UNBOUNDED


def test_negative_rhs_and_mixed_signs():
    # -x1 >= -3 (x1 <= 3), x1 - x2 >= -1; min -x1 - x2 -> x1 = 3, x2 = 4
    sol = solve_lp(LpProblem([-1, -1], [[-1, 0], [1, -1]], [-3, -1]))
    assert sol.status is LpStatus.OPTIMAL
    np.testing.assert_allclose(sol.x, [3, 4], atol=1e-12)


def test_redundant_rows():
    sol = solve_lp(LpProblem([1, 1], [[1, 1], [1, 1], [2, 2]], [1, 1, 2]))
    assert sol.status is LpStatus.OPTIMAL
    assert sol.objective == pytest.approx(1)


def test_degenerate_cycling_prone_instance():
    # Beale's classic cycling example rewritten as G x >= b (max -> min, <= -> >=)
    c = [-0.75, 150, -0.02, 6]
    G = -np.array([[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]])
    b = -np.array([0, 0, 1])
    sol = solve_lp(LpProblem(c, G, b))
    status, val = lp_vertex_oracle(c, G, b)
    assert sol.status.value == status
    assert sol.objective == pytest.approx(val, abs=1e-8)


def test_invalid_input():
    with pytest.raises(ValueError):
        LpProblem([1, 1], [[1, 1, 1]], [1])
    with pytest.raises(ValueError):
        LpProblem([np.inf, 1], [[1, 1]], [1])


def test_deterministic():
    rng = np.random.default_rng(4)
    c, G, b = rng.uniform(0, 1, 5), rng.normal(size=(4, 5)), rng.normal(size=4)
    a, bb = solve_lp(LpProblem(c, G, b)), solve_lp(LpProblem(c, G, b))
    assert a.status is bb.status
    np.testing.assert_array_equal(a.x, bb.x)


def test_warm_start_matches_cold():
    rng = np.random.default_rng(7)
    G = rng.uniform(0, 1, size=(5, 6))
    c = rng.uniform(0.1, 1, 6)
    cold = solve_lp(LpProblem(c, G, np.full(5, 2.0)))
    G2 = G + rng.uniform(0, 0.01, size=G.shape)
    warm = solve_lp(LpProblem(c, G2, np.full(5, 2.0)), basis=cold.basis)
    ref = solve_lp(LpProblem(c, G2, np.full(5, 2.0)))
    assert warm.objective == pytest.approx(ref.objective, abs=1e-10)
    # an unusable basis falls back to the two-phase method
    bad = solve_lp(LpProblem(c, G2, np.full(5, 2.0)), basis=[0, 0, 0, 0, 0])
    assert bad.objective == pytest.approx(ref.objective, abs=1e-10)


@st.composite
def small_lps(draw):
    n = draw(st.integers(1, 6))
    m = draw(st.integers(0, 6))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    # small integers give plenty of degenerate and tied vertices
    c = rng.integers(-1, 4, size=n).astype(float)
    G = rng.integers(-2, 4, size=(m, n)).astype(float)
    b = rng.integers(-2, 4, size=m).astype(float)
    return c, G, b


@settings(max_examples=300, deadline=None)
@given(small_lps())
def test_matches_vertex_enumeration(lp):
    c, G, b = lp
    sol = solve_lp(LpProblem(c, G, b))
    status, val = lp_vertex_oracle(c, G, b)
    assert sol.status.value == status
    if status == "optimal":
        assert sol.objective == pytest.approx(val, abs=1e-8)
        assert np.all(G @ sol.x >= b - 1e-9)
        assert np.all(sol.x >= -1e-12)
