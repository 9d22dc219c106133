import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linear_sum_assignment

from slidepair._kernels import BACKENDS
from slidepair.assignment import hungarian
from slidepair.errors import NonFiniteCost


def brute_force(cost):
    n, m = cost.shape
    if n <= m:
        return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))
    return min(sum(cost[p[j], j] for j in range(m)) for p in itertools.permutations(range(n), m))


def test_diagonal(backend):
    res = hungarian(1 - np.eye(3))
    assert res.pairs == [(0, 0), (1, 1), (2, 2)] and res.total_cost == 0


def test_outer_product(backend):
    res = hungarian([[1, 2, 3], [2, 4, 6], [3, 6, 9]])
    assert res.pairs == [(0, 2), (1, 1), (2, 0)] and res.total_cost == 10


def test_wide(backend):
    res = hungarian([[5, 1, 9], [1, 9, 9]])
    assert res.pairs == [(0, 1), (1, 0)] and res.total_cost == 2


def test_tall(backend):
    res = hungarian(np.array([[5, 1, 9], [1, 9, 9]]).T)
    assert sorted(res.pairs) == [(0, 1), (1, 0)] and res.total_cost == 2


def test_single_cell(backend):
    assert hungarian([[3.5]]) == ([(0, 0)], 3.5)


@pytest.mark.parametrize("n", range(2, 6))
def test_against_brute_force_rectangular(backend, n):
    rng = np.random.default_rng(n)
    for _ in range(20):
        m = int(rng.integers(1, 7))
        cost = rng.integers(0, 20, (n, m)).astype(float)
        res = hungarian(cost)
        assert len(res.pairs) == min(n, m)
        assert res.total_cost == brute_force(cost)
        assert len({r for r, _ in res.pairs}) == len({c for _, c in res.pairs}) == len(res.pairs)


def test_against_scipy_large(backend):
    rng = np.random.default_rng(1)
    for shape in [(40, 40), (30, 55), (60, 25)]:
        cost = rng.random(shape) * 100
        r, c = linear_sum_assignment(cost)
        assert hungarian(cost).total_cost == pytest.approx(cost[r, c].sum(), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(0, 1000)))
def test_permutation_invariance(cost):
    rng = np.random.default_rng(0)
    pr, pc = rng.permutation(cost.shape[0]), rng.permutation(cost.shape[1])
    assert hungarian(cost[pr][:, pc]).total_cost == pytest.approx(hungarian(cost).total_cost, abs=1e-9)


def test_non_finite():
    with pytest.raises(NonFiniteCost):
        hungarian([[1.0, np.nan]])
    with pytest.raises(NonFiniteCost):
        hungarian([[np.inf]])


def test_bad_shape_and_negative():
    with pytest.raises(ValueError):
        hungarian(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        hungarian([[-1.0]])


def test_backends_agree_exactly():
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 30))
        cost = rng.integers(0, 5, (n, n)).astype(float)  # many ties
        outs = [BACKENDS[b].hungarian_square(cost) for b in BACKENDS]
        assert all(np.array_equal(outs[0], o) for o in outs[1:])


def test_tied_costs_deterministic(backend):
    cost = np.ones((5, 5))
    assert hungarian(cost) == hungarian(cost.copy())
