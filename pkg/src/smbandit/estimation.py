"""Regularized MNL maximum likelihood and the curvature matrices built on it.

Datasets are grouped by offered assortment before any numerical work: the
log-likelihood only depends on how often each outcome was observed for each
distinct assortment, so Newton iterations cost O(#distinct assortments)
instead of O(#rounds).
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .mnl import choice_probs

OUTSIDE = -1


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, grad_norm: float):
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class ChoiceObservation:
    round: int
    members: tuple[int, ...]
    outcome: int  # agent index or OUTSIDE

    def __post_init__(self):
        members = tuple(sorted(self.members))
        object.__setattr__(self, "members", members)
        if self.outcome != OUTSIDE and self.outcome not in members:
            raise ValueError(f"outcome {self.outcome} not offered in {members}")


@dataclass
class ArmDataset:
    arm: int
    observations: list[ChoiceObservation] = field(default_factory=list)

    def __post_init__(self):
        rounds = [o.round for o in self.observations]
        if any(b <= a for a, b in zip(rounds, rounds[1:])):
            raise ValueError("observation rounds must be strictly increasing")

    def __len__(self):
        return len(self.observations)

    def add(self, round: int, members: Sequence[int], outcome: int) -> None:
        if self.observations and round <= self.observations[-1].round:
            raise ValueError("observation rounds must be strictly increasing")
        self.observations.append(ChoiceObservation(round, tuple(members), outcome))
        self.__dict__.pop("groups", None)

    def extend(self, other: "ArmDataset") -> "ArmDataset":
        return ArmDataset(self.arm, self.observations + other.observations)

    @cached_property
    def groups(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per distinct nonempty assortment: (members, counts).

        ``counts`` has one entry per member plus a trailing outside count.
        Empty assortments carry no likelihood information and are dropped.
        """
        table: OrderedDict[tuple[int, ...], np.ndarray] = OrderedDict()
        for obs in self.observations:
            if not obs.members:
                continue
            counts = table.get(obs.members)
            if counts is None:
                counts = table[obs.members] = np.zeros(len(obs.members) + 1)
            if obs.outcome == OUTSIDE:
                counts[-1] += 1
            else:
                counts[obs.members.index(obs.outcome)] += 1
        return [(np.array(m, dtype=int), c) for m, c in table.items()]


@dataclass(frozen=True)
class MleConfig:
    ridge_weight: float = 1.0
    norm_cap: float | None = None
    max_iters: int = 100
    grad_tol: float = 1e-8

    def __post_init__(self):
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.ridge_weight < 0:
            raise ValueError("ridge_weight must be nonnegative")


def _group_terms(theta, data, Z):
    for members, counts in data.groups:
        Zs = Z[:, members]
        p = choice_probs(members, theta, Z)
        yield Zs, p, counts


def nll(theta: np.ndarray, data: ArmDataset, Z: np.ndarray, ridge_weight: float = 1.0) -> float:
    theta = np.asarray(theta, dtype=float)
    total = 0.5 * ridge_weight * float(theta @ theta)
    for Zs, p, counts in _group_terms(theta, data, Z):
        total -= float(counts @ np.log(p))
    return total


def nll_gradient(theta: np.ndarray, data: ArmDataset, Z: np.ndarray,
                 ridge_weight: float = 1.0) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    g = ridge_weight * theta.copy()
    for Zs, p, counts in _group_terms(theta, data, Z):
        g += Zs @ (counts.sum() * p[:-1] - counts[:-1])
    return g


def _curvature(theta, data, Z) -> np.ndarray:
    r = Z.shape[0]
    H = np.zeros((r, r))
    for Zs, p, counts in _group_terms(theta, data, Z):
        q = p[:-1]
        mean = Zs @ q
        H += counts.sum() * ((Zs * q) @ Zs.T - np.outer(mean, mean))
    return H


def local_gram(theta_hat: np.ndarray, data: ArmDataset, Z: np.ndarray, lam: float) -> np.ndarray:
    """Curvature-weighted Gram matrix: Hessian of the unregularized loss plus lam*I."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    H = _curvature(np.asarray(theta_hat, dtype=float), data, Z)
    H += lam * np.eye(Z.shape[0])
    return 0.5 * (H + H.T)


def design_matrix(data: ArmDataset, Z: np.ndarray) -> np.ndarray:
    """V = sum over rounds of sum_{n in S_t} z_n z_n^T, plus the identity."""
    r = Z.shape[0]
    V = np.eye(r)
    for members, counts in data.groups:
        Zs = Z[:, members]
        V += counts.sum() * (Zs @ Zs.T)
    return V


def centered_feature(n: int, members: Sequence[int], theta_hat: np.ndarray, Z: np.ndarray) -> np.ndarray:
    members = list(members)
    p = choice_probs(members, theta_hat, Z)[:-1]
    return Z[:, n] - Z[:, members] @ p


def centered_features(members: Sequence[int], theta_hat: np.ndarray, Z: np.ndarray):
    """Centered features of every member at once, plus their choice probabilities.

    Returns (r x |S| matrix of z_tilde columns, probability vector over S).
    """
    members = list(members)
    Zs = Z[:, members]
    p = choice_probs(members, theta_hat, Z)[:-1]
    return Zs - (Zs @ p)[:, None], p


def ball_quadratic_min(H: np.ndarray, b: np.ndarray, cap: float, tol: float = 1e-12) -> np.ndarray:
    """Minimize 0.5 x^T H x + b^T x over the Euclidean ball ||x|| <= cap.

    H must be symmetric positive definite. The boundary case is solved through
    the secular equation ||(H + mu I)^{-1} b|| = cap with mu >= 0.
    """
    w, Q = np.linalg.eigh(H)
    if w[0] <= 0:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    c = Q.T @ b
    x = -Q @ (c / w)
    if cap is None or np.linalg.norm(x) <= cap:
        return x

    def excess(mu):
        return np.linalg.norm(c / (w + mu)) - cap

    hi = max(1.0, np.linalg.norm(c) / cap)
    while excess(hi) > 0:
        hi *= 2.0
    mu = brentq(excess, 0.0, hi, xtol=tol, rtol=1e-15, maxiter=500)
    x = -Q @ (c / (w + mu))
    norm = np.linalg.norm(x)
    if norm > cap:
        x *= cap / norm
    return x


def projection_residual(theta: np.ndarray, grad: np.ndarray, cap: float | None) -> float:
    """||theta - P(theta - grad)||: zero exactly at constrained stationary points."""
    step = theta - grad
    if cap is not None:
        norm = np.linalg.norm(step)
        if norm > cap:
            step = step * (cap / norm)
    return float(np.linalg.norm(theta - step))


def _residual(theta, data, Z, ridge, cap) -> float:
    g = nll_gradient(theta, data, Z, ridge)
    return projection_residual(theta, g, cap) if cap is not None else float(np.linalg.norm(g))


def fit_mle(data: ArmDataset, Z: np.ndarray, config: MleConfig = MleConfig(),
            theta0: np.ndarray | None = None) -> np.ndarray:
    """Damped Newton on the regularized MNL negative log-likelihood.

    With ``norm_cap`` set, each Newton model is minimized exactly over the
    ball and the iterate moves along the feasible segment with Armijo
    backtracking; convergence is declared on the projected-gradient residual.
    """
    r = Z.shape[0]
    cap = config.norm_cap
    theta = np.zeros(r) if theta0 is None else np.array(theta0, dtype=float)
    if cap is not None and np.linalg.norm(theta) > cap:
        theta *= cap / np.linalg.norm(theta)
    ridge = config.ridge_weight
    f = nll(theta, data, Z, ridge)
    for _ in range(config.max_iters):
        g = nll_gradient(theta, data, Z, ridge)
        resid = projection_residual(theta, g, cap) if cap is not None else float(np.linalg.norm(g))
        if resid <= config.grad_tol:
            return theta
        H = _curvature(theta, data, Z) + max(ridge, 1e-12) * np.eye(r)
        if cap is None:
            direction = -np.linalg.solve(H, g)
        else:
            target = ball_quadratic_min(H, g - H @ theta, cap)
            direction = target - theta
        slope = float(g @ direction)
        if slope >= 0:
            # numerically stationary: the model cannot improve further
            return theta
        step = 1.0
        while True:
            cand = theta + step * direction
            f_cand = nll(cand, data, Z, ridge)
            if f_cand <= f + 1e-4 * step * slope or step < 1e-12:
                break
            if abs(f_cand - f) <= 1e-12 * max(1.0, abs(f)) and _residual(cand, data, Z, ridge, cap) < resid:
                # below the resolution of f: judge progress by the residual instead
                break
            step *= 0.5
        theta, f = cand, f_cand
    g = nll_gradient(theta, data, Z, ridge)
    resid = projection_residual(theta, g, cap) if cap is not None else float(np.linalg.norm(g))
    if resid <= config.grad_tol:
        return theta
    raise ConvergenceError(f"MLE did not converge in {config.max_iters} iterations", resid)


def omd_update(theta_prev: np.ndarray, grad_prev: np.ndarray, gram_tilde: np.ndarray,
               eta: float, norm_cap: float | None = 1.0) -> np.ndarray:
    """One mirror-descent step in the metric of ``gram_tilde``.

    Minimizes g^T theta + ||theta - theta_prev||^2_G / (2 eta) over the ball of
    radius ``norm_cap``: an unconstrained Newton-like step followed by a
    projection in the G-norm.
    """
    G = 0.5 * (gram_tilde + gram_tilde.T)
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("gram matrix is singular or indefinite") from exc
    theta_prev = np.asarray(theta_prev, dtype=float)
    u = theta_prev - eta * np.linalg.solve(G, grad_prev)
    if norm_cap is None or np.linalg.norm(u) <= norm_cap:
        return u
    # argmin ||theta - u||_G^2 over the ball
    return ball_quadratic_min(G, -G @ u, norm_cap, tol=1e-14)


def mnl_gram_term(members: Sequence[int], theta: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Per-round curvature sum_n p z z^T - (sum_n p z)(sum_n p z)^T."""
    members = list(members)
    r = Z.shape[0]
    if not members:
        return np.zeros((r, r))
    Zs = Z[:, members]
    q = choice_probs(members, theta, Z)[:-1]
    mean = Zs @ q
    return (Zs * q) @ Zs.T - np.outer(mean, mean)


def round_gradient(members: Sequence[int], outcome: int, theta: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Gradient of one round's log-loss: sum_n (p_n - y_n) z_n."""
    members = list(members)
    if not members:
        return np.zeros(Z.shape[0])
    p = choice_probs(members, theta, Z)[:-1]
    y = np.array([1.0 if m == outcome else 0.0 for m in members])
    return Z[:, members] @ (p - y)


def dataset_from(arm: int, records: Iterable[tuple[int, Sequence[int], int]]) -> ArmDataset:
    ds = ArmDataset(arm)
    for t, members, outcome in records:
        ds.add(t, members, outcome)
    return ds
