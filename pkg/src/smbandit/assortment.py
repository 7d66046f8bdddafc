"""Combinatorial optimization over feasible matchings, revenue indices, elimination.

Every per-arm index is tabulated over agent subsets encoded as bitmasks
(bit n set <=> agent n offered). The exact optimizer enumerates all (K+1)^N
agent-to-arm-or-unassigned vectors and scores them by table lookups, so the
index itself is evaluated once per (arm, subset) regardless of how many
constrained searches reuse it.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence, Union

import numpy as np

from .design import subset_family
from .estimation import centered_features
from .mnl import Matching, choice_probs

TIE_TOL = 1e-12
FULL_CACHE_LIMIT = 1 << 22
CHUNK = 1 << 20

IndexFn = Callable[[tuple, int], float]


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class Pin:
    """Force ``agent`` into arm ``arm``'s assortment."""
    agent: int
    arm: int


@dataclass(frozen=True)
class Fix:
    """Force arm ``arm``'s assortment to equal ``members`` exactly."""
    members: tuple[int, ...]
    arm: int

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(sorted(self.members)))


Constraint = Union[Pin, Fix, None]


@dataclass
class OptimizerStats:
    """Instrumentation shared by every optimizer call of a run."""
    calls: int = 0
    assignments: int = 0
    seconds: float = 0.0
    call_seconds: list[float] = field(default_factory=list)

    def record(self, assignments: int, seconds: float) -> None:
        self.calls += 1
        self.assignments += assignments
        self.seconds += seconds
        self.call_seconds.append(seconds)


# ---------------------------------------------------------------- bitmasks

@lru_cache(maxsize=None)
def membership(N: int) -> np.ndarray:
    """2^N x N boolean matrix; row m flags the agents in subset m."""
    masks = np.arange(1 << N)
    return ((masks[:, None] >> np.arange(N)) & 1).astype(bool)


@lru_cache(maxsize=None)
def popcounts(N: int) -> np.ndarray:
    return membership(N).sum(axis=1)


def to_mask(members: Sequence[int]) -> int:
    m = 0
    for n in members:
        m |= 1 << int(n)
    return m


def from_mask(mask: int) -> tuple[int, ...]:
    out, n = [], 0
    while mask:
        if mask & 1:
            out.append(n)
        mask >>= 1
        n += 1
    return tuple(out)


@lru_cache(maxsize=8)
def _full_enumeration(N: int, K: int):
    digits, masks = _decode(np.arange((K + 1) ** N, dtype=np.int64), N, K)
    digits.setflags(write=False)
    masks.setflags(write=False)
    return digits, masks


def _decode(idx: np.ndarray, N: int, K: int):
    base = K + 1
    digits = np.empty((idx.size, N), dtype=np.int8)
    rest = idx.copy()
    for n in range(N):
        digits[:, n] = rest % base
        rest //= base
    masks = np.zeros((idx.size, K), dtype=np.int64)
    for n in range(N):
        for k in range(K):
            masks[:, k] |= (digits[:, n] == k + 1).astype(np.int64) << n
    return digits, masks


def _assignment_chunks(N: int, K: int):
    total = (K + 1) ** N
    if total <= FULL_CACHE_LIMIT:
        yield _full_enumeration(N, K)
        return
    for start in range(0, total, CHUNK):
        yield _decode(np.arange(start, min(total, start + CHUNK), dtype=np.int64), N, K)


def _matching_from_digits(row: np.ndarray, K: int) -> Matching:
    return Matching(tuple(tuple(int(n) for n in np.flatnonzero(row == k + 1)) for k in range(K)))


# ---------------------------------------------------------------- tables

class IndexTable:
    """Per-arm index values for every agent subset (shape K x 2^N).

    Entries for subsets larger than L are -inf; the empty subset scores 0.
    """

    def __init__(self, values: np.ndarray, L: int):
        self.values = np.asarray(values, dtype=float)
        self.K, size = self.values.shape
        self.N = int(round(math.log2(size)))
        self.L = L

    @classmethod
    def from_fn(cls, fn: IndexFn, N: int, K: int, L: int,
                active: Sequence[Sequence[int]] | None = None) -> "IndexTable":
        values = np.full((K, 1 << N), -np.inf)
        values[:, 0] = 0.0
        for k in range(K):
            pool = range(N) if active is None else active[k]
            for J in subset_family(pool, L, cap=1 << N):
                values[k, to_mask(J)] = fn(J, k)
        return cls(values, L)

    def __call__(self, members: Sequence[int], arm: int) -> float:
        return float(self.values[arm, to_mask(members)])


def _restricted(table: IndexTable, active: Sequence[Sequence[int]] | None,
                constraint: Constraint) -> np.ndarray:
    N, K = table.N, table.K
    vals = table.values.copy()
    vals[:, popcounts(N) > table.L] = -np.inf
    if active is not None:
        allm = np.arange(1 << N)
        for k in range(K):
            vals[k, (allm & ~to_mask(active[k])) != 0] = -np.inf
    if isinstance(constraint, Pin):
        n, k = constraint.agent, constraint.arm
        vals[k, ~membership(N)[:, n]] = -np.inf
    elif isinstance(constraint, Fix):
        k = constraint.arm
        keep = to_mask(constraint.members)
        row = np.full(1 << N, -np.inf)
        row[keep] = vals[k, keep]
        vals[k] = row
    return vals


def _as_table(index, N, K, L, active) -> IndexTable:
    if isinstance(index, IndexTable):
        return index
    return IndexTable.from_fn(index, N, K, L, active)


def exact_argmax(index: Union[IndexTable, IndexFn], active: Sequence[Sequence[int]], L: int,
                 constraint: Constraint = None, N: int | None = None,
                 stats: OptimizerStats | None = None) -> tuple[Matching, float]:
    """Exhaustive maximization of sum_k index(S_k, k) over feasible matchings.

    ``active[k]`` lists the agents arm k may receive. Ties within 1e-12 go to
    the lexicographically smallest canonical encoding.
    """
    t0 = time.perf_counter()
    K = len(active)
    if N is None:
        N = index.N if isinstance(index, IndexTable) else 1 + max((max(a) for a in active if a), default=-1)
    table = _as_table(index, N, K, L, active)
    vals = _restricted(table, active, constraint)
    best, cands, raw = -np.inf, [], 0
    for digits, masks in _assignment_chunks(N, K):
        raw += digits.shape[0]
        score = vals[0, masks[:, 0]].copy()
        for k in range(1, K):
            score += vals[k, masks[:, k]]
        top = score.max()
        if not np.isfinite(top) or top < best - TIE_TOL:
            continue
        if top > best + TIE_TOL:
            cands = []
        best = max(best, top)
        cands.extend(_matching_from_digits(row, K) for row in digits[score >= best - TIE_TOL])
    if stats is not None:
        stats.record(raw, time.perf_counter() - t0)
    if not np.isfinite(best):
        raise InfeasibleError(f"no feasible matching under constraint {constraint}")
    cands = [m for m in cands if _value(vals, m) >= best - TIE_TOL]
    choice = min(cands, key=Matching.encoding)
    return choice, _value(vals, choice)


def _value(vals: np.ndarray, m: Matching) -> float:
    return float(sum(vals[k, to_mask(s)] for k, s in enumerate(m.sets)))


def greedy_oracle(index: Union[IndexTable, IndexFn], active: Sequence[Sequence[int]], L: int,
                  constraint: Constraint = None, N: int | None = None,
                  stats: OptimizerStats | None = None) -> tuple[Matching, float]:
    """Best-insertion greedy: add the (agent, arm) with the largest positive gain until none."""
    t0 = time.perf_counter()
    K = len(active)
    if N is None:
        N = index.N if isinstance(index, IndexTable) else 1 + max((max(a) for a in active if a), default=-1)
    table = _as_table(index, N, K, L, active)
    vals = _restricted(table, active, None)
    masks = [0] * K
    frozen = [False] * K
    if isinstance(constraint, Pin):
        masks[constraint.arm] = 1 << constraint.agent
    elif isinstance(constraint, Fix):
        masks[constraint.arm] = to_mask(constraint.members)
        frozen[constraint.arm] = True
    if any(not np.isfinite(vals[k, masks[k]]) for k in range(K)):
        if stats is not None:
            stats.record(0, time.perf_counter() - t0)
        raise InfeasibleError(f"no feasible matching under constraint {constraint}")
    evaluated = 0
    while True:
        used = 0
        for m in masks:
            used |= m
        moves = []
        for n in range(N):
            if used >> n & 1:
                continue
            for k in range(K):
                if frozen[k]:
                    continue
                new = masks[k] | (1 << n)
                evaluated += 1
                if np.isfinite(vals[k, new]):
                    moves.append((vals[k, new] - vals[k, masks[k]], k, new))
        if not moves:
            break
        top = max(g for g, _, _ in moves)
        if top <= TIE_TOL:
            break

        def key(move):
            trial = list(masks)
            trial[move[1]] = move[2]
            return tuple(from_mask(m) for m in trial)

        _, k, new = min((mv for mv in moves if mv[0] >= top - TIE_TOL), key=key)
        masks[k] = new
    if stats is not None:
        stats.record(evaluated, time.perf_counter() - t0)
    m = Matching(tuple(from_mask(x) for x in masks))
    return m, _value(vals, m)


# ---------------------------------------------------------------- indices

@dataclass
class IndexParams:
    """Everything an upper/lower revenue index needs for one epoch (or round).

    variant is one of "bsmb", "bsmb_plus", "baseline". Matrices are indexed by arm.
    """
    variant: str
    Z: np.ndarray
    rewards: np.ndarray            # N x K
    theta: np.ndarray              # K x r current estimates
    beta: float = 0.0              # bsmb width scale
    V: np.ndarray | None = None    # K x r x r (bsmb)
    zeta: float = 0.0              # bsmb_plus
    H: np.ndarray | None = None    # K x r x r (bsmb_plus)
    theta_prev: np.ndarray | None = None
    gamma: float = 0.0             # baseline
    G: np.ndarray | None = None    # K x r x r (baseline)
    _inv: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.variant not in ("bsmb", "bsmb_plus", "baseline"):
            raise ValueError(f"unknown index variant {self.variant}")
        mats = {"bsmb": self.V, "bsmb_plus": self.H, "baseline": self.G}[self.variant]
        if mats is None:
            raise ValueError(f"{self.variant} index needs its Gram matrices")
        if min(self.beta, self.zeta, self.gamma) < 0:
            raise ValueError("confidence scales must be nonnegative")
        self._inv = np.linalg.inv(mats)
        if self.variant == "bsmb_plus" and self.theta_prev is None:
            self.theta_prev = np.zeros_like(self.theta)

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    def agent_norms(self, k: int) -> np.ndarray:
        """||z_n||_{M_k^{-1}} for every agent."""
        Ainv = self._inv[k]
        return np.sqrt(np.einsum("in,ij,jn->n", self.Z, Ainv, self.Z))

    def _plus_bonus(self, members, k) -> float:
        if not members:
            return 0.0
        Hinv = self._inv[k]
        z_norm2 = self.agent_norms(k)[list(members)] ** 2
        Zt, _ = centered_features(members, self.theta[k], self.Z)
        zt_norm2 = np.einsum("in,ij,jn->n", Zt, Hinv, Zt)
        p_prev = choice_probs(members, self.theta_prev[k], self.Z)[:-1]
        z2 = self.zeta ** 2
        return (6.5 * z2 * z_norm2.max() + 2.0 * z2 * zt_norm2.max()
                + self.zeta * float(p_prev @ np.sqrt(zt_norm2)))

    def tables(self, L: int, lower: bool = True) -> tuple[IndexTable, IndexTable | None]:
        """(ucb, lcb) tables over all subsets of at most L agents; lcb is None if not ``lower``."""
        N, K = self.Z.shape[1], self.K
        B = membership(N).astype(float)
        big = popcounts(N) > L
        ucb = np.empty((K, 1 << N))
        lcb = np.empty((K, 1 << N))
        for k in range(K):
            r_k = self.rewards[:, k]
            if self.variant == "baseline":
                norms = self.agent_norms(k)
                base = self.Z.T @ self.theta[k]
                for sign, out in ((1.0, ucb), (-1.0, lcb))[:2 if lower else 1]:
                    w = np.exp(base + sign * self.gamma * norms)
                    out[k] = (B @ (r_k * w)) / (1.0 + B @ w)
                continue
            w = np.exp(self.Z.T @ self.theta[k])
            mean = (B @ (r_k * w)) / (1.0 + B @ w)
            if self.variant == "bsmb":
                width = 2.0 * self.beta * (B * self.agent_norms(k)).max(axis=1)
            else:
                width = np.zeros(1 << N)
                for mask in np.flatnonzero(~big):
                    width[mask] = self._plus_bonus(from_mask(int(mask)), k)
            ucb[k] = mean + width
            lcb[k] = mean - width
        ucb[:, big] = -np.inf
        lcb[:, big] = -np.inf
        return IndexTable(ucb, L), (IndexTable(lcb, L) if lower else None)


def _mean_revenue(members, k, params: IndexParams) -> float:
    p = choice_probs(members, params.theta[k], params.Z)[:-1]
    return float(params.rewards[list(members), k] @ p)


def _bound(members, k, params: IndexParams, sign: float) -> float:
    members = tuple(sorted(members))
    if not members:
        return 0.0
    if params.variant == "baseline":
        Ginv = params._inv[k]
        Zs = params.Z[:, list(members)]
        h = Zs.T @ params.theta[k] + sign * params.gamma * np.sqrt(np.einsum("in,ij,jn->n", Zs, Ginv, Zs))
        w = np.exp(h)
        return float(params.rewards[list(members), k] @ w / (1.0 + w.sum()))
    mean = _mean_revenue(members, k, params)
    if params.variant == "bsmb":
        Vinv = params._inv[k]
        Zs = params.Z[:, list(members)]
        width = 2.0 * params.beta * float(np.sqrt(np.einsum("in,ij,jn->n", Zs, Vinv, Zs)).max())
    else:
        width = params._plus_bonus(members, k)
    return mean + sign * width


def ucb_index(members: Sequence[int], arm: int, params: IndexParams) -> float:
    return _bound(members, arm, params, 1.0)


def lcb_index(members: Sequence[int], arm: int, params: IndexParams) -> float:
    return _bound(members, arm, params, -1.0)


# ---------------------------------------------------------------- elimination

@dataclass
class EliminationResult:
    active: tuple[tuple[int, ...], ...]
    lcb_best: tuple[Matching, float]
    pinned: dict = field(default_factory=dict)     # (n, k) -> (Matching, ucb value)
    fixed: dict = field(default_factory=dict)      # (J, k) -> (Matching, ucb value)
    agent_pass: tuple[tuple[int, ...], ...] | None = None


def eliminate(active_prev: Sequence[Sequence[int]], L: int, ucb, lcb, mode: str = "bsmb",
              alpha: float = 1.0, N: int | None = None,
              stats: OptimizerStats | None = None) -> EliminationResult:
    """Drop agent-arm pairs whose best optimistic matching loses to the best pessimistic one.

    mode "bsmb": exact pinned searches; "bsmb_plus": adds the subset pass over
    fixed assortments; "alpha": greedy searches on both sides with the
    comparison alpha * LCB(S^beta) <= UCB(S^{alpha,(n,k)}).
    """
    if mode not in ("bsmb", "bsmb_plus", "alpha"):
        raise ValueError(f"unknown elimination mode {mode}")
    active_prev = tuple(tuple(sorted(a)) for a in active_prev)
    K = len(active_prev)
    if N is None:
        N = ucb.N
    search = greedy_oracle if mode == "alpha" else exact_argmax
    scale = alpha if mode == "alpha" else 1.0
    lcb_best = search(lcb, active_prev, L, None, N=N, stats=stats)
    threshold = scale * lcb_best[1] - TIE_TOL
    pinned = {}
    for k in range(K):
        for n in active_prev[k]:
            pinned[(n, k)] = search(ucb, active_prev, L, Pin(n, k), N=N, stats=stats)
    agent_pass = tuple(tuple(n for n in active_prev[k] if pinned[(n, k)][1] >= threshold)
                       for k in range(K))
    if mode != "bsmb_plus":
        return EliminationResult(agent_pass, lcb_best, pinned)
    fixed = {}
    for k in range(K):
        for J in subset_family(active_prev[k], L, cap=1 << N):
            fixed[(J, k)] = search(ucb, active_prev, L, Fix(J, k), N=N, stats=stats)
    survivors = []
    for k in range(K):
        keep = set()
        for J in subset_family(agent_pass[k], L, cap=1 << N):
            if fixed[(J, k)][1] >= threshold:
                keep.update(J)
        survivors.append(tuple(sorted(keep)))
    return EliminationResult(tuple(survivors), lcb_best, pinned, fixed, agent_pass)


def measure_greedy_ratio(n_instances: int = 100, N: int = 5, K: int = 3, L: int = 2,
                         d: int = 5, seed: int = 0) -> dict:
    """Empirical greedy/exact value ratio on true-revenue objectives of random instances."""
    from .environment import generate_instance

    ratios = []
    for i in range(n_instances):
        inst = generate_instance(N, K, d, L, seed=seed + i)
        util = inst.utilities()

        def fn(S, k, util=util, inst=inst):
            w = np.exp(util[list(S), k])
            return float(inst.rewards[list(S), k] @ w / (1.0 + w.sum()))

        table = IndexTable.from_fn(fn, N, K, L)
        active = [tuple(range(N))] * K
        _, exact = exact_argmax(table, active, L)
        _, greedy = greedy_oracle(table, active, L)
        ratios.append(greedy / exact if exact > 0 else 1.0)
    ratios = np.array(ratios)
    return {"min": float(ratios.min()), "median": float(np.median(ratios)),
            "mean": float(ratios.mean()), "ratios": ratios}
