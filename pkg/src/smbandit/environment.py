"""Synthetic markets, MNL feedback simulation and the clairvoyant oracle."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assortment import IndexTable, exact_argmax
from .mnl import Instance, Matching, project_features, revenue_from_utilities

OUTSIDE = -1
ORACLE_CAP = 10**8


def _generator(*key: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def generate_instance(N: int, K: int, d: int, L: int, seed: int) -> Instance:
    """Features and arm parameters uniform on [-1, 1]^d then scaled to unit norm; rewards U[0, 1]."""
    rng = _generator(seed, 0)
    X = rng.uniform(-1.0, 1.0, size=(d, N))
    X /= np.linalg.norm(X, axis=0, keepdims=True)
    theta = rng.uniform(-1.0, 1.0, size=(K, d))
    theta /= np.linalg.norm(theta, axis=1, keepdims=True)
    rewards = rng.uniform(0.0, 1.0, size=(N, K))
    return Instance(X=X, theta=theta, rewards=rewards, L=L, seed=seed)


def sample_choice(members, util: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from the MNL over ``members`` plus the outside option.

    ``util`` holds the arm's utilities indexed by agent. One uniform variate is
    consumed per call, even for an empty assortment.
    """
    u = rng.random()
    members = list(members)
    if not members:
        return OUTSIDE
    w = np.exp(util[members])
    cdf = np.cumsum(w) / (1.0 + w.sum())
    i = int(np.searchsorted(cdf, u, side="right"))
    return members[i] if i < len(members) else OUTSIDE


@dataclass(frozen=True)
class Feedback:
    outcomes: tuple[int, ...]                    # per arm: agent or OUTSIDE
    indicators: tuple[dict[int, int], ...]       # per arm: offered agent -> y

    @classmethod
    def from_outcomes(cls, matching: Matching, outcomes) -> "Feedback":
        ind = tuple({n: int(n == o) for n in s} for s, o in zip(matching.sets, outcomes))
        return cls(tuple(outcomes), ind)


@dataclass(frozen=True)
class OracleSolution:
    matching: Matching
    value: float


def revenue_table(instance: Instance) -> IndexTable:
    util = instance.utilities()
    N, K, L = instance.N, instance.K, instance.L
    B = np.array([[(m >> n) & 1 for n in range(N)] for m in range(1 << N)], dtype=float)
    vals = np.empty((K, 1 << N))
    for k in range(K):
        w = np.exp(util[:, k])
        vals[k] = (B @ (instance.rewards[:, k] * w)) / (1.0 + B @ w)
    vals[:, B.sum(axis=1) > L] = -np.inf
    return IndexTable(vals, L)


def oracle_matching(instance: Instance) -> OracleSolution:
    """Optimal matching under the true parameters, by exhaustive enumeration."""
    N, K = instance.N, instance.K
    if (K + 1) ** N > ORACLE_CAP:
        raise ValueError(f"instance too large for the exact oracle: {(K + 1) ** N} assignments")
    m, v = exact_argmax(revenue_table(instance), [tuple(range(N))] * K, instance.L, N=N)
    return OracleSolution(m, v)


class Environment:
    """Stochastic MNL market: one Philox stream per arm for feedback."""

    def __init__(self, instance: Instance, run_seed: int = 0):
        self.instance = instance
        self.util = instance.utilities()
        key = instance.seed if instance.seed is not None else 0
        self.rngs = [_generator(key, 1, run_seed, k) for k in range(instance.K)]
        self._oracle: OracleSolution | None = None
        self._revenue_cache: dict[Matching, float] = {}

    @property
    def oracle(self) -> OracleSolution:
        if self._oracle is None:
            self._oracle = oracle_matching(self.instance)
        return self._oracle

    def expected_revenue(self, matching: Matching) -> float:
        v = self._revenue_cache.get(matching)
        if v is None:
            matching.validate(self.instance.N, self.instance.L)
            v = sum(revenue_from_utilities(s, self.util[:, k], self.instance.rewards[:, k])
                    for k, s in enumerate(matching.sets))
            self._revenue_cache[matching] = v
        return v

    def step(self, matching: Matching) -> Feedback:
        if matching.K != self.instance.K:
            raise ValueError("matching arm count mismatch")
        outcomes = tuple(sample_choice(s, self.util[:, k], self.rngs[k])
                         for k, s in enumerate(matching.sets))
        return Feedback.from_outcomes(matching, outcomes)

    def realized_reward(self, feedback: Feedback) -> float:
        R = self.instance.rewards
        return float(sum(R[o, k] for k, o in enumerate(feedback.outcomes) if o != OUTSIDE))


def uniform_policy_regret(instance: Instance, T: int) -> float:
    """Expected regret of offering a uniformly random feasible matching each round."""
    N, K, L = instance.N, instance.K, instance.L
    table = revenue_table(instance)
    from .assortment import _assignment_chunks, _restricted

    vals = _restricted(table, [tuple(range(N))] * K, None)
    total, count = 0.0, 0
    for _, masks in _assignment_chunks(N, K):
        score = sum(vals[k, masks[:, k]] for k in range(K))
        ok = np.isfinite(score)
        total += float(score[ok].sum())
        count += int(ok.sum())
    opt = oracle_matching(instance).value
    return T * (opt - total / count)


# ---------------------------------------------------------------- JSON

def instance_to_dict(instance: Instance) -> dict:
    return {
        "N": instance.N, "K": instance.K, "L": instance.L, "d": instance.d,
        "r": project_features(instance.X).rank,
        "seed": instance.seed,
        "X": instance.X.tolist(),
        "Theta": instance.theta.tolist(),
        "Rewards": instance.rewards.tolist(),
    }


def instance_from_dict(doc: dict) -> Instance:
    try:
        X = np.array(doc["X"], dtype=float)
        theta = np.array(doc["Theta"], dtype=float)
        rewards = np.array(doc["Rewards"], dtype=float)
        L = int(doc["L"])
    except KeyError as exc:
        raise ValueError(f"instance document missing field {exc}") from None
    inst = Instance(X=X, theta=theta, rewards=rewards, L=L, seed=doc.get("seed"))
    for key, value in (("N", inst.N), ("K", inst.K), ("d", inst.d)):
        if key in doc and int(doc[key]) != value:
            raise ValueError(f"field {key}={doc[key]} disagrees with matrix shapes ({value})")
    return inst


def save_instance(instance: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance), indent=2))


def load_instance(path) -> Instance:
    return instance_from_dict(json.loads(Path(path).read_text()))
