import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from zslrac import _backend, _pyfallback
from zslrac.errors import NumericalError
from zslrac.transport import (Marginals, _spanning_trees, brute_force_transportation,
                              reduced_costs, solve_transportation)


def test_marginals_validation():
    with pytest.raises(ValueError, match="unbalanced"):
        Marginals([1.0, 1.0], [1.0])
    with pytest.raises(ValueError, match="positive"):
        Marginals([0.0, 2.0], [1.0, 1.0])


def test_correspondence_marginals_scale_to_integers():
    supply, demand, div = Marginals.correspondence(3, 5).integer_scaled()
    assert supply.tolist() == [5, 5, 5] and demand.tolist() == [3] * 5 and div == 5


def test_rational_marginals_scale_by_common_denominator():
    supply, demand, div = Marginals([0.5, 1.25], [1.0, 0.75]).integer_scaled()
    assert div == 4 and supply.tolist() == [2, 5] and demand.tolist() == [4, 3]


def test_irrational_marginals_are_rejected():
    with pytest.raises(ValueError, match="rationals"):
        Marginals([np.pi], [np.pi]).integer_scaled()


@pytest.mark.parametrize("n,m,count", [(1, 4, 1), (2, 2, 4), (2, 3, 12), (3, 3, 81), (3, 4, 432)])
def test_spanning_tree_counts(n, m, count):
    # complete bipartite graph: n^(m-1) * m^(n-1)
    assert len(_spanning_trees(n, m)) == count


def test_hand_instance():
    cost = np.array([[1.0, 3.0], [2.0, 1.0]])
    plan = solve_transportation(cost, Marginals([2.0, 1.0], [1.0, 2.0]))
    np.testing.assert_allclose(plan.values, [[1.0, 1.0], [0.0, 1.0]])
    assert plan.objective == pytest.approx(5.0)


def test_single_row_is_forced():
    cost = np.array([[4.0, -1.0, 2.0]])
    plan = solve_transportation(cost, Marginals.correspondence(1, 3))
    np.testing.assert_allclose(plan.values, [[1 / 3, 1 / 3, 1 / 3]])


def test_assignment_case_is_a_permutation(rng):
    cost = rng.standard_normal((4, 4))
    plan = solve_transportation(cost, Marginals.correspondence(4, 4))
    assert set(np.unique(plan.values)) <= {0.0, 1.0}
    from itertools import permutations
    best = min(sum(cost[i, p[i]] for i in range(4)) for p in permutations(range(4)))
    assert plan.objective == pytest.approx(best, abs=1e-12)


def test_reduced_costs_certify_optimality(rng):
    for _ in range(30):
        n, o = rng.integers(1, 6, size=2)
        cost = rng.standard_normal((n, o))
        plan = solve_transportation(cost, Marginals.correspondence(n, o))
        assert plan.basis.sum() == n + o - 1
        assert reduced_costs(cost, plan.basis).min() >= -1e-12


def test_scaling_and_shift_equivariance(rng):
    cost = rng.standard_normal((3, 5))
    m = Marginals.correspondence(3, 5)
    base = solve_transportation(cost, m).objective
    assert solve_transportation(7.0 * cost, m).objective == pytest.approx(7.0 * base)
    # adding a per-row constant shifts the objective by that constant times the row mass
    shift = np.array([1.0, -2.0, 0.5])[:, None]
    assert solve_transportation(cost + shift, m).objective == pytest.approx(base - 0.5)


def test_beats_random_feasible_points(rng):
    cost = rng.standard_normal((3, 6))
    m = Marginals.correspondence(3, 6)
    best = solve_transportation(cost, m).objective
    for _ in range(200):
        K = rng.uniform(0.01, 1, size=(3, 6))
        for _ in range(200):
            K /= K.sum(axis=1, keepdims=True)
            K *= 0.5 / K.sum(axis=0, keepdims=True)
        assert np.sum(cost * K) >= best - 1e-9


def test_non_finite_cost_raises():
    with pytest.raises(NumericalError):
        solve_transportation(np.array([[np.nan, 1.0]]), Marginals.correspondence(1, 2))


def test_wrong_cost_shape_raises():
    with pytest.raises(ValueError):
        solve_transportation(np.zeros((2, 2)), Marginals.correspondence(2, 3))


def test_pivot_cap_raises(rng):
    with pytest.raises(NumericalError, match="pivot cap"):
        solve_transportation(rng.standard_normal((6, 6)), Marginals.correspondence(6, 6), max_iter=1)


def test_brute_force_size_guard():
    with pytest.raises(ValueError, match="limited"):
        brute_force_transportation(np.zeros((3, 7)), Marginals.correspondence(3, 7))


def test_degenerate_ties_terminate():
    # all-equal costs are maximally degenerate
    plan = solve_transportation(np.ones((5, 9)), Marginals.correspondence(5, 9))
    assert plan.objective == pytest.approx(5.0)


@pytest.mark.skipif(_backend.BACKEND != "cython", reason="compiled core not built")
def test_backends_agree_exactly(rng):
    from zslrac import _core
    for _ in range(50):
        n, o = rng.integers(1, 12, size=2)
        cost = np.round(rng.standard_normal((n, o)), 1)  # rounding forces ties
        supply = np.full(n, o, dtype=np.int64)
        demand = np.full(o, n, dtype=np.int64)
        f1, b1, i1 = _core.network_simplex(cost, supply, demand, 100000)
        f2, b2, i2 = _pyfallback.network_simplex(cost, supply, demand, 100000)
        np.testing.assert_array_equal(f1, f2)
        np.testing.assert_array_equal(b1, b2)
        assert i1 == i2


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.data())
def test_property_matches_brute_force(n, o, data):
    cost = data.draw(arrays(np.float64, (n, o), elements=st.floats(-10, 10, allow_nan=False)))
    m = Marginals.correspondence(n, o)
    plan = solve_transportation(cost, m)
    oracle = brute_force_transportation(cost, m)
    assert plan.objective == pytest.approx(oracle.objective, abs=1e-9)
    np.testing.assert_allclose(plan.values.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(plan.values.sum(axis=0), n / o, atol=1e-12)
    assert plan.support_size <= n + o - 1
