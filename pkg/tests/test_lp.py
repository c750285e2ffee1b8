import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from branchforge.lp import (
    Infeasible, LpStatus, TooLarge, VarStatus, dual_objective, effective_bounds, fractional_indices, solve_lp,
    vertex_oracle,
)
from branchforge.milp import MilpInstance, canonicalize, gen_set_cover
from oracles import random_lp


def _box(obj, rows=(), sense=(), rhs=(), lb=None, ub=None):
    n = len(obj)
    return MilpInstance(tuple(map(float, obj)), tuple(lb or [0.0] * n), tuple(ub or [1.0] * n), (False,) * n,
                        tuple(tuple(r) for r in rows), tuple(sense), tuple(map(float, rhs)))


def test_box_optimum_without_rows():
    sol = solve_lp(_box([-1, -1]))
    assert sol.optimal and sol.objective == -2.0
    np.testing.assert_array_equal(sol.x, [1.0, 1.0])


def test_forced_bound_override():
    assert solve_lp(_box([-1, -1]), {0: (0.0, 0.0)}).objective == -1.0


def test_contradictory_rows_are_infeasible():
    inst = _box([1], rows=[[(0, 1.0)], [(0, 1.0)]], sense=["GE", "LE"], rhs=[2, 1], ub=[3.0])
    assert solve_lp(inst).status is LpStatus.INFEASIBLE
    with pytest.raises(Infeasible):
        vertex_oracle(inst)


def test_oracle_size_limit():
    with pytest.raises(TooLarge):
        vertex_oracle(_box([1] * 9))


def test_known_small_lp():
    # min -x - 2y  s.t. x + y <= 1.5, x - y >= -0.5, box [0, 1]
    inst = _box([-1, -2], rows=[[(0, 1.0), (1, 1.0)], [(0, 1.0), (1, -1.0)]], sense=["LE", "GE"], rhs=[1.5, -0.5])
    sol = solve_lp(inst)
    np.testing.assert_allclose(sol.x, [0.5, 1.0], atol=1e-12)
    assert sol.objective == pytest.approx(-2.5)
    assert vertex_oracle(inst) == pytest.approx(-2.5)


def _check_optimality_conditions(inst, sol, overrides=None):
    lb, ub = effective_bounds(inst, overrides)
    a = inst.dense_matrix()
    act = a @ sol.x
    for i, (s, b) in enumerate(zip(inst.sense, inst.rhs)):
        if s in ("LE", "EQ"):
            assert act[i] <= b + 1e-7
        if s in ("GE", "EQ"):
            assert act[i] >= b - 1e-7
        # complementary slackness: a nonzero dual needs a tight row, with the right sign
        assert abs(sol.duals[i] * (b - act[i])) <= 1e-7
        if s == "LE":
            assert sol.duals[i] <= 1e-7
        if s == "GE":
            assert sol.duals[i] >= -1e-7
    assert np.all(sol.x >= lb - 1e-9) and np.all(sol.x <= ub + 1e-9)
    for j, st_ in enumerate(sol.basis):
        d = sol.reduced_costs[j]
        if st_ is VarStatus.BASIC:
            assert abs(d) <= 1e-7
        elif lb[j] < ub[j]:
            assert (d >= -1e-7) if st_ is VarStatus.AT_LOWER else (d <= 1e-7)
    np.testing.assert_allclose(sol.reduced_costs, np.array(inst.obj) - a.T @ sol.duals, atol=1e-7)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5), m=st.integers(0, 6))
def test_simplex_matches_vertex_enumeration(seed, n, m):
    inst = random_lp(np.random.default_rng(seed), n, m)
    sol = solve_lp(inst)
    try:
        ref = vertex_oracle(inst)
    except Infeasible:
        assert sol.status is LpStatus.INFEASIBLE
        return
    assert sol.optimal
    assert abs(sol.objective - ref) <= 1e-6
    _check_optimality_conditions(inst, sol)
    assert abs(dual_objective(inst, sol) - sol.objective) <= 1e-6


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 5), m=st.integers(1, 5), data=st.data())
def test_tightening_a_bound_never_lowers_the_bound(seed, n, m, data):
    inst = random_lp(np.random.default_rng(seed), n, m)
    parent = solve_lp(inst)
    if not parent.optimal:
        return
    j = data.draw(st.integers(0, n - 1))
    lo, hi = inst.var_lb[j], inst.var_ub[j]
    new_lo = data.draw(st.floats(lo, hi))
    child = solve_lp(inst, {j: (new_lo, hi)})
    if child.optimal:
        assert child.objective >= parent.objective - 1e-7
        _check_optimality_conditions(inst, child, {j: (new_lo, hi)})


def test_equality_rows_and_free_slack():
    inst = _box([1, 1, 1], rows=[[(0, 1.0), (1, 1.0), (2, 1.0)]], sense=["EQ"], rhs=[2.5], ub=[1.0, 1.0, 1.0])
    sol = solve_lp(inst)
    assert sol.objective == pytest.approx(2.5)
    assert sol.slacks[0] == pytest.approx(0.0, abs=1e-12)


def test_set_cover_root_is_fractional_and_weakly_dual():
    inst = gen_set_cover(0, 10, 20, 0.3)
    sol = solve_lp(inst)
    assert sol.optimal
    assert sol.iterations <= 50 * (inst.n_vars + inst.n_cons)
    assert dual_objective(inst, sol) == pytest.approx(sol.objective, abs=1e-6)


def test_fractional_indices_tolerance():
    inst = canonicalize({"obj": [0, 0, 0, 0], "rows": [], "sense": [], "rhs": []})
    x = np.array([0.5, 1.0, 0.3, 0.9999995])
    assert fractional_indices(inst, x) == [0, 2]


def test_degenerate_lp_terminates():
    # many identical tight rows make most pivots degenerate
    rows = [[(0, 1.0), (1, 1.0), (2, 1.0)]] * 6
    inst = _box([-1, -1, -1], rows=rows, sense=["LE"] * 6, rhs=[1.0] * 6)
    sol = solve_lp(inst)
    assert sol.optimal and sol.objective == pytest.approx(-1.0)
