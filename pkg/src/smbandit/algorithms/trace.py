"""Per-round bookkeeping for a single run."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..assortment import OptimizerStats
from ..environment import Environment, Feedback
from ..mnl import Matching


@dataclass
class RunTrace:
    algorithm: str
    T: int
    seed: int | None
    opt_value: float
    epoch: np.ndarray
    matching_id: np.ndarray
    matchings: list[Matching]
    outcomes: np.ndarray
    realized: np.ndarray
    expected: np.ndarray
    regret: np.ndarray
    seconds: np.ndarray
    opt_calls: np.ndarray
    epochs: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    stats: OptimizerStats = field(default_factory=OptimizerStats)

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def cum_seconds(self) -> np.ndarray:
        return np.cumsum(self.seconds)

    @property
    def n_epochs(self) -> int:
        return int(self.epoch.max()) if self.epoch.size else 0

    @property
    def total_seconds(self) -> float:
        return float(self.seconds.sum())

    def matching(self, t: int) -> Matching:
        """Matching offered at round t (1-based)."""
        return self.matchings[self.matching_id[t - 1]]

    def gamma_regret(self, gamma: float) -> np.ndarray:
        """Cumulative gamma-regret: sum_t gamma * OPT - R(S_t)."""
        return np.cumsum(gamma * self.opt_value - self.expected)


class Recorder:
    """Plays matchings against the environment until the horizon is reached.

    Wall-clock time elapsed since the previous round (including any planning
    done in between) is charged to the next round offered.
    """

    def __init__(self, env: Environment, T: int, algorithm: str, stats: OptimizerStats):
        if T < 1:
            raise ValueError("horizon T must be >= 1")
        self.env = env
        self.T = T
        self.algorithm = algorithm
        self.stats = stats
        self.t = 0
        K = env.instance.K
        self.opt = env.oracle
        self._ids: dict[Matching, int] = {}
        self._matchings: list[Matching] = []
        self.epoch = np.zeros(T, dtype=int)
        self.matching_id = np.zeros(T, dtype=int)
        self.outcomes = np.zeros((T, K), dtype=int)
        self.realized = np.zeros(T)
        self.expected = np.zeros(T)
        self.seconds = np.zeros(T)
        self.opt_calls = np.zeros(T, dtype=int)
        self.epochs: list[dict] = []
        self.notes: list[str] = []
        self._mark = time.perf_counter()

    @property
    def done(self) -> bool:
        return self.t >= self.T

    @property
    def remaining(self) -> int:
        return self.T - self.t

    def offer(self, matching: Matching, epoch: int = 0) -> Feedback | None:
        if self.done:
            return None
        fb = self.env.step(matching)
        i = self.t
        mid = self._ids.get(matching)
        if mid is None:
            mid = self._ids[matching] = len(self._matchings)
            self._matchings.append(matching)
        self.epoch[i] = epoch
        self.matching_id[i] = mid
        self.outcomes[i] = fb.outcomes
        self.realized[i] = self.env.realized_reward(fb)
        self.expected[i] = self.env.expected_revenue(matching)
        self.opt_calls[i] = self.stats.calls
        now = time.perf_counter()
        self.seconds[i] = now - self._mark
        self._mark = now
        self.t += 1
        return fb

    def finish(self) -> RunTrace:
        regret = self.opt.value - self.expected
        return RunTrace(
            algorithm=self.algorithm, T=self.T, seed=self.env.instance.seed,
            opt_value=self.opt.value, epoch=self.epoch, matching_id=self.matching_id,
            matchings=self._matchings, outcomes=self.outcomes, realized=self.realized,
            expected=self.expected, regret=regret, seconds=self.seconds,
            opt_calls=self.opt_calls, epochs=self.epochs, notes=self.notes, stats=self.stats,
        )
