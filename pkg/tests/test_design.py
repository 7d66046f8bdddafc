import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smbandit.design import (DesignError, DesignProblem, build_agent_design,
                             build_assortment_design, build_pair_design, leverages,
                             reduce_support, solve_g_optimal, subset_family)
from smbandit.estimation import centered_feature, centered_features


def test_orthonormal_symmetry():
    w = solve_g_optimal(DesignProblem.from_vectors(np.eye(2), 1e-6))
    assert np.allclose(w.weights, [0.5, 0.5], atol=1e-6)
    assert abs(w.max_leverage - 2) < 0.1


def test_single_unit():
    w = solve_g_optimal(DesignProblem.from_vectors([[0.6, 0.8]], 1e-6))
    assert w.support == [0] and w.weights[0] == 1.0
    assert w.max_leverage <= 1 + 1e-6


def test_dominated_unit_gets_no_mass():
    prob = DesignProblem.from_vectors([[1.0], [0.5]], 1e-6)
    w = solve_g_optimal(prob)
    # grid oracle over pi(e1) at resolution 1e-4
    grid = np.linspace(0, 1, 10001)
    g = np.maximum(1 / (grid + 0.25 * (1 - grid) + 1e-6), 0.25 / (grid + 0.25 * (1 - grid) + 1e-6))
    best = grid[np.argmin(g)]
    assert best == 1.0
    assert w.as_dict() == {0: 1.0}
    assert abs(w.max_leverage - 1) < 1e-5


def test_design_problem_validation():
    with pytest.raises(ValueError):
        DesignProblem.from_vectors([[1.0]], 0.0)
    with pytest.raises(ValueError):
        DesignProblem.from_vectors([[np.nan]], 1.0)
    with pytest.raises(ValueError):
        solve_g_optimal(DesignProblem((), (), 1.0, 2))


def test_failure_carries_best_leverage(rng):
    prob = DesignProblem.from_vectors(rng.normal(size=(30, 5)), 1e-9)
    with pytest.raises(DesignError) as err:
        solve_g_optimal(prob, max_iters=1, tol=1e-9)
    assert err.value.best_leverage is not None and err.value.best_leverage > 5


def test_agent_design_builder():
    Z = np.array([[1.0, 0.0, 0.6], [0.0, 1.0, 0.8]])
    with pytest.raises(ValueError):
        build_agent_design([], Z, 10.0)
    one = build_agent_design([2], Z, 10.0)
    assert one.units == (2,) and np.allclose(one.factors[0][:, 0], Z[:, 2])
    assert np.isclose(one.regularizer, 1 / (2 * 10.0))
    full = build_agent_design([0, 1, 2], Z, 10.0, lam=3.0)
    assert len(full.units) == 3 and np.isclose(full.regularizer, 3.0 / 20.0)


def test_assortment_design_builder():
    Z = np.eye(2)
    th = np.array([0.3, -0.2])
    one = build_assortment_design([0], th, Z, 1, 5.0, 1.0)
    p = 1 / (1 + np.exp(-0.3))
    zt = centered_feature(0, (0,), th, Z)
    assert one.units == ((0,),)
    assert np.allclose(one.moment(0), p * np.outer(zt, zt))
    two = build_assortment_design([0, 1], th, Z, 2, 5.0, 1.0)
    assert two.units == ((0,), (1,), (0, 1))


def test_assortment_moments_uniform_probabilities():
    Z = np.eye(3)
    prob = build_assortment_design([0, 1, 2], np.zeros(3), Z, 3, 5.0, 1.0)
    for J, M in zip(prob.units, (prob.moment(i) for i in range(len(prob.units)))):
        p = 1 / (1 + len(J))
        expected = np.zeros((3, 3))
        for n in J:
            zt = Z[:, n] - p * Z[:, list(J)].sum(axis=1)
            expected += p * np.outer(zt, zt)
        assert np.allclose(M, expected)


def test_pair_design_builder(rng):
    Z = rng.normal(size=(2, 3))
    th = rng.normal(size=2)
    one = build_pair_design([0], th, Z, 1, 5.0, 1.0)
    assert one.units == ((0, (0,)),)
    two = build_pair_design([0, 1], th, Z, 2, 5.0, 1.0)
    assert set(two.units) == {(0, (0,)), (1, (1,)), (0, (0, 1)), (1, (0, 1))}
    for (n, J), F in zip(two.units, two.factors):
        assert np.array_equal(F[:, 0], centered_feature(n, J, th, Z))


def test_family_cap():
    assert subset_family([0, 1, 2], 2) == [(0,), (1,), (2,), (0, 1), (0, 2), (1, 2)]
    with pytest.raises(DesignError, match="assortment design too large"):
        subset_family(range(20), 10, cap=1000)


def test_pi_tilde_leverage_trace_form(rng):
    Z = rng.normal(size=(3, 4))
    th = rng.normal(size=3)
    prob = build_assortment_design([0, 1, 2, 3], th, Z, 2, 3.0, 1.0)
    w = solve_g_optimal(prob)
    lev = leverages(prob, w)
    A = prob.regularizer * np.eye(3)
    for J, x in zip(w.support, w.weights):
        A += x * prob.moment(prob.units.index(J))
    Ainv = np.linalg.inv(A)
    for i, J in enumerate(prob.units):
        Zt, p = centered_features(J, th, Z)
        direct = sum(p[j] * Zt[:, j] @ Ainv @ Zt[:, j] for j in range(len(J)))
        assert abs(lev[i] - direct) < 1e-9


def test_logdet_monotone_and_certificate(rng):
    for _ in range(20):
        r = int(rng.integers(2, 6))
        prob = DesignProblem.from_vectors(rng.normal(size=(int(rng.integers(r, 30)), r)), 1e-4)
        w = solve_g_optimal(prob, record_history=True)
        h = np.array(w.logdet_history)
        # the objective only drops at the final prune/reduction step
        assert np.all(np.diff(h[:-2]) >= -1e-10) if len(h) > 2 else True
        assert leverages(prob, w).max() <= r * 1.05


def test_reduce_support_preserves_moment(rng):
    r = 3
    prob = DesignProblem.from_vectors(rng.normal(size=(25, r)), 1e-3)
    pi = rng.dirichlet(np.ones(25))
    red = reduce_support(prob, pi)
    M = lambda p: sum(p[i] * prob.moment(i) for i in range(25))
    assert np.allclose(M(pi), M(red), atol=1e-10)
    assert np.count_nonzero(red) <= r * (r + 1) // 2 + 1
    assert abs(red.sum() - 1) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 50), st.integers(0, 10_000))
def test_certificate_property(r, units, seed):
    rng = np.random.default_rng(seed)
    prob = DesignProblem.from_vectors(rng.normal(size=(units, r)), 1e-6)
    w = solve_g_optimal(prob)
    assert leverages(prob, w).max() <= r * 1.05
    assert abs(w.weights.sum() - 1) < 1e-9
    assert len(set(w.support)) == len(w.support)
    assert w.weights.min() >= 1e-6
    assert len(w.support) <= r * (r + 1) // 2 + 5
    again = solve_g_optimal(prob)
    assert np.array_equal(w.weights, again.weights) and w.support == again.support
