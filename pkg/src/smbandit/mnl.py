"""Multinomial-logit choice model primitives.

Agents are 0-indexed throughout. An assortment is a sorted tuple of agent
indices; a matching holds one assortment per arm. Utilities are evaluated as
plain inner products: features and parameters are bounded so |z^T theta| <= 2
and no log-sum-exp shift is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

RANK_TOL = 1e-9


@dataclass(frozen=True)
class Instance:
    """Ground-truth market.

    X is d x N (one column per agent), theta is K x d (one row per arm) and
    rewards is N x K.
    """

    X: np.ndarray
    theta: np.ndarray
    rewards: np.ndarray
    L: int
    seed: int | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        rewards = np.asarray(self.rewards, dtype=float)
        d, N = X.shape
        K = theta.shape[0]
        if theta.shape[1] != d:
            raise ValueError(f"theta has dimension {theta.shape[1]}, features have {d}")
        if rewards.shape != (N, K):
            raise ValueError(f"rewards must be {N}x{K}, got {rewards.shape}")
        if not 1 <= self.L <= N:
            raise ValueError(f"capacity L={self.L} outside [1, {N}]")
        if np.any(np.linalg.norm(X, axis=0) > 1 + 1e-9):
            raise ValueError("agent features must have norm <= 1")
        if np.any(np.linalg.norm(theta, axis=1) > 1 + 1e-9):
            raise ValueError("arm parameters must have norm <= 1")
        if np.any(rewards < 0) or np.any(rewards > 1):
            raise ValueError("rewards must lie in [0, 1]")
        for arr in (X, theta, rewards):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "rewards", rewards)

    @property
    def d(self) -> int:
        return self.X.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    def utilities(self) -> np.ndarray:
        """N x K matrix of true utilities x_n^T theta_k."""
        return self.X.T @ self.theta.T


@dataclass(frozen=True)
class ProjectedFeatures:
    rank: int
    U: np.ndarray  # d x r
    Z: np.ndarray  # r x N

    def project(self, theta: np.ndarray) -> np.ndarray:
        """Map a d-space parameter into the r-dimensional feature space."""
        return self.U.T @ np.asarray(theta, dtype=float)


def project_features(X: np.ndarray, tol: float = RANK_TOL) -> ProjectedFeatures:
    """Reduce features to their column space via a thin SVD.

    Singular values at or below ``tol * sigma_max`` count as zero.
    """
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix must be finite")
    if tol <= 0:
        raise ValueError("tol must be positive")
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("rank zero feature matrix")
    rank = int(np.sum(s > tol * s[0]))
    Ur = U[:, :rank].copy()
    Z = Ur.T @ X
    return ProjectedFeatures(rank=rank, U=Ur, Z=Z)


@dataclass(frozen=True, order=True)
class Assortment:
    arm: int
    members: tuple[int, ...] = ()

    def __post_init__(self):
        members = tuple(sorted(int(m) for m in self.members))
        if len(set(members)) != len(members):
            raise ValueError(f"duplicate agents in assortment {members}")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class Matching:
    """K assortments, one per arm; ``sets[k]`` is the sorted member tuple of arm k."""

    sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        sets = tuple(tuple(sorted(int(m) for m in s)) for s in self.sets)
        object.__setattr__(self, "sets", sets)

    @classmethod
    def empty(cls, K: int) -> "Matching":
        return cls(tuple(() for _ in range(K)))

    @property
    def K(self) -> int:
        return len(self.sets)

    @property
    def assortments(self) -> tuple[Assortment, ...]:
        return tuple(Assortment(k, s) for k, s in enumerate(self.sets))

    def encoding(self) -> tuple[tuple[int, ...], ...]:
        """Canonical key used for deterministic tie-breaking."""
        return self.sets

    def validate(self, N: int, L: int, active: Sequence[Sequence[int]] | None = None) -> None:
        """Raise ValueError unless the matching is feasible."""
        seen: set[int] = set()
        for k, s in enumerate(self.sets):
            if len(s) > L:
                raise ValueError(f"arm {k} assortment {s} exceeds capacity {L}")
            if len(set(s)) != len(s):
                raise ValueError(f"arm {k} assortment {s} has duplicates")
            for n in s:
                if not 0 <= n < N:
                    raise ValueError(f"agent {n} out of range")
                if n in seen:
                    raise ValueError(f"agent {n} assigned to more than one arm")
                seen.add(n)
            if active is not None and not set(s) <= set(active[k]):
                raise ValueError(f"arm {k} assortment {s} leaves its active set")

    def is_feasible(self, N: int, L: int, active=None) -> bool:
        try:
            self.validate(N, L, active)
        except ValueError:
            return False
        return True


def choice_probs(members: Sequence[int], theta: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """MNL probabilities for each offered agent followed by the outside option.

    Returns a vector of length ``len(members) + 1``; the last entry is the
    probability that the arm accepts nobody.
    """
    members = list(members)
    if not members:
        return np.ones(1)
    w = np.exp(Z[:, members].T @ theta)
    denom = 1.0 + w.sum()
    return np.append(w / denom, 1.0 / denom)


def expected_revenue(members: Sequence[int], theta: np.ndarray, Z: np.ndarray,
                     rewards: np.ndarray) -> float:
    """R(S) = sum_n r_n p(n | S, theta); ``rewards`` is indexed by agent."""
    members = list(members)
    if not members:
        return 0.0
    p = choice_probs(members, theta, Z)[:-1]
    return float(np.dot(np.asarray(rewards)[members], p))


def revenue_from_utilities(members: Sequence[int], util: np.ndarray, rewards: np.ndarray) -> float:
    """Expected revenue given precomputed utilities (indexed by agent)."""
    members = list(members)
    if not members:
        return 0.0
    w = np.exp(util[members])
    return float(np.dot(rewards[members], w) / (1.0 + w.sum()))


def total_revenue(matching: Matching, instance: Instance) -> float:
    """Sum of true per-arm expected revenues; infeasible matchings raise."""
    if matching.K != instance.K:
        raise ValueError(f"matching has {matching.K} arms, instance has {instance.K}")
    matching.validate(instance.N, instance.L)
    util = instance.utilities()
    return sum(revenue_from_utilities(s, util[:, k], instance.rewards[:, k])
               for k, s in enumerate(matching.sets))


def kappa_lower_bound(L: int) -> float:
    """Lower bound on inf p(n|S,theta) p(n0|S,theta) over ||theta|| <= 2, |S| <= L."""
    if L < 1:
        raise ValueError("capacity must be at least 1")
    e2 = math.exp(2.0)
    return math.exp(-2.0) / (1.0 + L * e2) ** 2
