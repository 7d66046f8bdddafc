import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from smbandit.estimation import (OUTSIDE, ArmDataset, ConvergenceError, MleConfig,
                                 ball_quadratic_min, centered_feature, centered_features,
                                 dataset_from, design_matrix, fit_mle, local_gram, nll,
                                 nll_gradient, omd_update, projection_residual)
from smbandit.mnl import choice_probs


def random_data(rng, n_obs=20, N=5, r=3, L=3, theta=None):
    Z = rng.normal(size=(r, N))
    Z /= np.linalg.norm(Z, axis=0)
    theta = rng.normal(size=r) if theta is None else theta
    ds = ArmDataset(0)
    for t in range(1, n_obs + 1):
        size = int(rng.integers(1, L + 1))
        S = tuple(sorted(rng.choice(N, size=size, replace=False)))
        p = choice_probs(S, theta, Z)
        i = rng.choice(len(p), p=p)
        ds.add(t, S, S[i] if i < len(S) else OUTSIDE)
    return ds, Z


def fd_gradient(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_nll_closed_forms():
    Z = np.eye(2)
    assert nll(np.zeros(2), ArmDataset(0), Z, 1.0) == 0.0
    one = dataset_from(0, [(1, (0,), OUTSIDE)])
    assert math.isclose(nll(np.zeros(2), one, Z, 1.0), math.log(2))
    pair = dataset_from(0, [(1, (0, 1), 0)])
    assert math.isclose(nll(np.zeros(2), pair, Z, 0.0), math.log(3))


def test_gradient_empty_is_theta(rng):
    th = rng.normal(size=3)
    assert np.allclose(nll_gradient(th, ArmDataset(0), np.eye(3), 1.0), th)


def test_gradient_finite_differences(rng):
    for _ in range(10):
        ds, Z = random_data(rng)
        th = rng.normal(size=3)
        fd = fd_gradient(lambda x: nll(x, ds, Z, 1.0), th)
        assert np.max(np.abs(fd - nll_gradient(th, ds, Z, 1.0))) <= 1e-6


def test_local_gram_is_hessian(rng):
    ds, Z = random_data(rng, n_obs=8)
    th = rng.normal(size=3) * 0.5
    H = local_gram(th, ds, Z, 0.7)
    num = np.column_stack([fd_gradient(lambda x: nll_gradient(x, ds, Z, 0.0)[i], th)
                           for i in range(3)])
    assert np.allclose(H - 0.7 * np.eye(3), num, atol=1e-4)
    assert np.allclose(H, H.T)


def test_local_gram_examples(rng):
    Z = np.eye(2)
    assert np.allclose(local_gram(np.zeros(2), ArmDataset(0), Z, 1.0), np.eye(2))
    one = dataset_from(0, [(1, (0,), OUTSIDE)])
    assert np.allclose(local_gram(np.zeros(2), one, Z, 1.0), np.diag([1.25, 1.0]))
    # dominance: H - lam I <= sum z z^T
    ds, Z = random_data(rng, n_obs=30)
    H = local_gram(rng.normal(size=3), ds, Z, 1.0)
    V = design_matrix(ds, Z)
    assert np.linalg.eigvalsh((V - np.eye(3)) - (H - np.eye(3))).min() >= -1e-10
    assert np.linalg.eigvalsh(H).min() >= 1.0 - 1e-10


def test_design_matrix():
    Z = np.eye(2)
    assert np.allclose(design_matrix(ArmDataset(0), Z), np.eye(2))
    one = dataset_from(0, [(1, (0,), OUTSIDE)])
    assert np.allclose(design_matrix(one, Z), np.diag([2.0, 1.0]))


def test_design_matrix_additive(rng):
    ds, Z = random_data(rng, n_obs=20)
    a = ArmDataset(0, ds.observations[:8])
    b = ArmDataset(0, ds.observations[8:])
    assert np.allclose(design_matrix(a.extend(b), Z),
                       design_matrix(a, Z) + design_matrix(b, Z) - np.eye(3))


def test_centered_feature_examples(rng):
    Z = np.eye(2)
    assert np.allclose(centered_feature(0, (0,), np.zeros(2), Z), [0.5, 0.0])
    assert np.allclose(centered_feature(0, (0, 1), np.zeros(2), Z),
                       np.array([1.0, 0.0]) - np.array([1.0, 1.0]) / 3)
    Z = rng.normal(size=(3, 5))
    Z /= np.linalg.norm(Z, axis=0)
    th = rng.normal(size=3)
    S = (0, 2, 3)
    Zt, p = centered_features(S, th, Z)
    mean = Z[:, list(S)] @ p
    assert np.allclose(Zt @ p, (1 - p.sum()) * mean)
    assert np.all(np.linalg.norm(Zt, axis=0) <= 2 + 1e-12)
    for i, n in enumerate(S):
        assert np.allclose(Zt[:, i], centered_feature(n, S, th, Z))


def test_fit_empty_is_zero():
    assert np.allclose(fit_mle(ArmDataset(0), np.eye(3)), 0)


def test_fit_scalar_root():
    # one observation: {agent 0} offered, outside chosen; optimum solves sigmoid(t) + t = 0
    t_star = brentq(lambda t: 1 / (1 + math.exp(-t)) + t, -2, 2)
    th = fit_mle(dataset_from(0, [(1, (0,), OUTSIDE)]), np.eye(3))
    assert abs(t_star + 0.4011) < 1e-4
    assert np.allclose(th, [t_star, 0, 0], atol=1e-9)


def test_fit_consistency(rng):
    truth = np.array([0.6, -0.4, 0.3])
    ds, Z = random_data(rng, n_obs=10_000, theta=truth)
    th = fit_mle(ds, Z)
    assert np.linalg.norm(th - truth) <= 0.1


def test_fit_constrained_on_boundary(rng):
    truth = np.array([2.5, 0.0, 0.0])
    ds, Z = random_data(rng, n_obs=3000, theta=truth)
    cfg = MleConfig(norm_cap=1.0)
    th = fit_mle(ds, Z, cfg)
    assert np.linalg.norm(th) <= 1.0 + 1e-12
    assert projection_residual(th, nll_gradient(th, ds, Z, 1.0), 1.0) <= 1e-8


def test_fit_deterministic(rng):
    ds, Z = random_data(rng, n_obs=50)
    assert np.array_equal(fit_mle(ds, Z), fit_mle(ds, Z))


def test_fit_nonconvergence_carries_gradient(rng):
    ds, Z = random_data(rng, n_obs=200)
    with pytest.raises(ConvergenceError) as err:
        fit_mle(ds, Z, MleConfig(max_iters=1, grad_tol=1e-14))
    assert err.value.grad_norm > 0


def test_mle_config_validation():
    with pytest.raises(ValueError):
        MleConfig(grad_tol=0)
    with pytest.raises(ValueError):
        MleConfig(max_iters=0)


def test_dataset_rounds_increasing():
    ds = ArmDataset(0)
    ds.add(3, (0,), OUTSIDE)
    with pytest.raises(ValueError):
        ds.add(3, (0,), 0)
    with pytest.raises(ValueError):
        dataset_from(0, [(1, (0, 1), 2)])  # outcome not offered


def test_ball_quadratic_min_matches_grid():
    H = np.diag([1.0, 4.0])
    b = np.array([-3.0, 1.0])
    x = ball_quadratic_min(H, b, 1.0)
    angles = np.linspace(0, 2 * np.pi, 200001)
    pts = np.column_stack([np.cos(angles), np.sin(angles)])
    vals = 0.5 * np.einsum("ij,jk,ik->i", pts, H, pts) + pts @ b
    assert 0.5 * x @ H @ x + b @ x <= vals.min() + 1e-9
    assert abs(np.linalg.norm(x) - 1) < 1e-12


def test_omd_examples():
    th = np.array([0.2, -0.1])
    assert np.allclose(omd_update(th, np.zeros(2), np.eye(2), 1.0), th)
    assert np.allclose(omd_update(np.zeros(2), np.array([1.0, 0]), np.eye(2), 1.0, norm_cap=None),
                       [-1.0, 0])
    out = omd_update(np.zeros(2), np.array([2.0, 0]), np.eye(2), 1.0, norm_cap=1.0)
    assert np.allclose(out, [-1.0, 0])
    with pytest.raises(np.linalg.LinAlgError):
        omd_update(np.zeros(2), np.ones(2), np.zeros((2, 2)), 1.0)


def test_omd_projection_is_g_norm_closest(rng):
    G = np.array([[3.0, 1.0], [1.0, 2.0]])
    th_prev = np.array([0.3, 0.2])
    g = np.array([4.0, -3.0])
    out = omd_update(th_prev, g, G, 1.0, norm_cap=1.0)
    u = th_prev - np.linalg.solve(G, g)
    angles = np.linspace(0, 2 * np.pi, 200001)
    pts = np.column_stack([np.cos(angles), np.sin(angles)])
    d = np.einsum("ij,jk,ik->i", pts - u, G, pts - u)
    assert (out - u) @ G @ (out - u) <= d.min() + 1e-8


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_nll_convexity(seed):
    rng = np.random.default_rng(seed)
    ds, Z = random_data(rng, n_obs=10)
    a, b = rng.normal(size=3) * 2, rng.normal(size=3) * 2
    mid = nll((a + b) / 2, ds, Z, 1.0)
    assert mid <= (nll(a, ds, Z, 1.0) + nll(b, ds, Z, 1.0)) / 2 + 1e-12
