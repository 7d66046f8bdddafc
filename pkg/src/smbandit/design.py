"""G/D-optimal experimental design by Frank-Wolfe with away steps.

A design unit contributes a PSD moment matrix M_u = F_u F_u^T, where F_u is
an r x m_u factor (m_u = 1 for single vectors). The leverage of a unit under
weights pi is tr(F_u^T A(pi)^{-1} F_u) with A(pi) = sum_u pi_u M_u + rho I.
Maximizing log det A(pi) drives the maximum leverage down to at most r
(Kiefer-Wolfowitz), which is the certificate checked on exit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Hashable, Sequence

import numpy as np
from scipy.optimize import brentq

from .estimation import centered_features

DEFAULT_TOL = 0.05
PRUNE_BELOW = 1e-6
DEFAULT_UNIT_CAP = 100_000


class DesignError(RuntimeError):
    def __init__(self, message: str, best_leverage: float | None = None):
        if best_leverage is not None:
            message = f"{message} (best max leverage {best_leverage:.6g})"
        super().__init__(message)
        self.best_leverage = best_leverage


@dataclass(frozen=True)
class DesignProblem:
    units: tuple[Hashable, ...]
    factors: tuple[np.ndarray, ...]  # each r x m_u
    regularizer: float
    dimension: int

    def __post_init__(self):
        if self.regularizer <= 0:
            raise ValueError("regularizer must be positive")
        if len(self.units) != len(self.factors):
            raise ValueError("one factor per unit required")
        if len(set(self.units)) != len(self.units):
            raise ValueError("design units must be distinct")
        for F in self.factors:
            if F.shape[0] != self.dimension or not np.all(np.isfinite(F)):
                raise ValueError("factor has wrong dimension or non-finite entries")

    @classmethod
    def from_vectors(cls, vectors: Sequence[Sequence[float]], regularizer: float,
                     units: Sequence[Hashable] | None = None) -> "DesignProblem":
        vecs = [np.asarray(v, dtype=float).reshape(-1, 1) for v in vectors]
        if not vecs:
            raise ValueError("design needs at least one unit")
        units = tuple(range(len(vecs))) if units is None else tuple(units)
        return cls(units, tuple(vecs), float(regularizer), vecs[0].shape[0])

    def moment(self, i: int) -> np.ndarray:
        F = self.factors[i]
        return F @ F.T


@dataclass
class DesignWeights:
    support: list
    weights: np.ndarray
    max_leverage: float
    iterations: int
    logdet_history: list[float] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.weights.tolist()))

    def weight_of(self, unit) -> float:
        try:
            return float(self.weights[self.support.index(unit)])
        except ValueError:
            return 0.0


class _Leverage:
    """Vectorized leverage evaluation over all units."""

    def __init__(self, problem: DesignProblem):
        self.cols = np.hstack(problem.factors)
        self.owner = np.concatenate([np.full(F.shape[1], i) for i, F in enumerate(problem.factors)])
        self.n_units = len(problem.factors)
        r = problem.dimension
        self.moments = np.stack([problem.moment(i) for i in range(self.n_units)]) if self.n_units else np.zeros((0, r, r))

    def __call__(self, Ainv: np.ndarray) -> np.ndarray:
        quad = np.einsum("ij,ij->j", self.cols, Ainv @ self.cols)
        return np.bincount(self.owner, weights=quad, minlength=self.n_units)


def _line_search(S: np.ndarray, M: np.ndarray, A: np.ndarray, lo: float, hi: float) -> float:
    """Exact maximizer of log det(A + g (M - S)) over g in [lo, hi]."""
    w, Q = np.linalg.eigh(A)
    root = Q / np.sqrt(w)
    b = np.linalg.eigvalsh(root.T @ (M - S) @ root)

    def slope(g):
        return float(np.sum(b / (1.0 + g * b)))

    if slope(hi) >= 0:
        return hi
    if slope(lo) <= 0:
        return lo
    return brentq(slope, lo, hi, xtol=1e-14, maxiter=200)


def _sym_vec(M: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(M.shape[0])
    return M[iu]


def reduce_support(problem: DesignProblem, pi: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Caratheodory reduction keeping sum_u pi_u M_u and sum_u pi_u fixed.

    Leaves at most r(r+1)/2 + 1 units in the support, so every leverage value
    (hence the certificate) is unchanged.
    """
    pi = pi.copy()
    while True:
        support = np.flatnonzero(pi > 0)
        W = np.array([np.append(_sym_vec(problem.moment(i)), 1.0) for i in support]).T
        if support.size <= 1:
            return pi
        _, s, Vt = np.linalg.svd(W)
        rank = int(np.sum(s > tol * max(s[0], 1.0)))
        if support.size <= rank:
            return pi
        c = Vt[-1]
        if c.max() <= 0:
            c = -c
        pos = c > 1e-15
        ratios = pi[support[pos]] / c[pos]
        j = int(np.argmin(ratios))
        t = ratios[j]
        pi[support] -= t * c
        pi[support[pos][j]] = 0.0
        pi[pi < 1e-15] = 0.0
        pi /= pi.sum()


def solve_g_optimal(problem: DesignProblem, max_iters: int | None = None,
                    tol: float = DEFAULT_TOL, prune: float = PRUNE_BELOW,
                    record_history: bool = False) -> DesignWeights:
    """Frank-Wolfe (with away steps) on log det; returns certified weights.

    The returned design satisfies max leverage <= r (1 + tol) over every unit,
    has no weight below ``prune`` and support of at most r(r+1)/2 + 1 units.
    """
    r = problem.dimension
    n = len(problem.units)
    if n == 0:
        raise ValueError("design needs at least one unit")
    if max_iters is None:
        max_iters = max(10 * r * r, 1000)
    target = r * (1.0 + tol)
    lev_fn = _Leverage(problem)
    M = lev_fn.moments
    rho = problem.regularizer
    eye = np.eye(r)

    pi = np.full(n, 1.0 / n)
    best = math.inf
    history: list[float] = []
    it = 0
    reduced = False
    while True:
        S = np.einsum("u,uij->ij", pi, M)
        A = S + rho * eye
        Ainv = np.linalg.inv(A)
        lev = lev_fn(Ainv)
        gmax = float(lev.max())
        best = min(best, gmax)
        if record_history:
            history.append(float(np.linalg.slogdet(A)[1]))
        if gmax <= target:
            if reduced:
                break
            pi[pi < prune] = 0.0
            pi /= pi.sum()
            pi = reduce_support(problem, pi)
            pi[pi < prune] = 0.0
            pi /= pi.sum()
            reduced = True
            continue
        reduced = False
        if it >= max_iters:
            raise DesignError(f"design not certified within {max_iters} iterations", best)
        it += 1
        u = int(np.argmax(lev))
        avg = float(pi @ lev)
        supp = np.flatnonzero(pi > 0)
        v = int(supp[np.argmin(lev[supp])])
        if lev[u] - avg >= avg - lev[v] or pi[v] >= 1.0:
            g = _line_search(S, M[u], A, 0.0, 1.0)
            target_unit = u
        else:
            lo = -pi[v] / (1.0 - pi[v])
            g = _line_search(S, M[v], A, lo, 0.0)
            target_unit = v
            if g <= lo * (1 - 1e-12):
                g = lo
        pi *= (1.0 - g)
        pi[target_unit] += g
        if target_unit == v and g == lo:
            pi[v] = 0.0
        pi[pi < 0] = 0.0
        pi /= pi.sum()

    support = [problem.units[i] for i in np.flatnonzero(pi > 0)]
    weights = pi[pi > 0]
    return DesignWeights(support, weights / weights.sum(), gmax, it, history)


def leverages(problem: DesignProblem, weights: DesignWeights) -> np.ndarray:
    """Leverage of every unit of ``problem`` under ``weights``."""
    index = {u: i for i, u in enumerate(problem.units)}
    r = problem.dimension
    A = problem.regularizer * np.eye(r)
    for unit, w in zip(weights.support, weights.weights):
        A += w * problem.moment(index[unit])
    return _Leverage(problem)(np.linalg.inv(A))


def _regularizer(r: int, T_tau: float, lam: float | None) -> float:
    return (1.0 if lam is None else lam) / (r * T_tau)


def build_agent_design(active: Sequence[int], Z: np.ndarray, T_tau: float,
                       lam: float | None = None) -> DesignProblem:
    """One unit per active agent; rho = 1/(r T) without ``lam``, lam/(r T) with it."""
    active = sorted(active)
    if not active:
        raise ValueError("agent design over an empty active set")
    r = Z.shape[0]
    return DesignProblem(tuple(active), tuple(Z[:, [n]] for n in active),
                         _regularizer(r, T_tau, lam), r)


def subset_family(active: Sequence[int], L: int, cap: int = DEFAULT_UNIT_CAP) -> list[tuple[int, ...]]:
    """All nonempty subsets of ``active`` of size <= L, by size then lexicographically."""
    active = sorted(active)
    count = sum(math.comb(len(active), j) for j in range(1, min(L, len(active)) + 1))
    if count > cap:
        raise DesignError(f"assortment design too large: {count} subsets exceed cap {cap}; "
                          "reduce N or L")
    return [J for j in range(1, min(L, len(active)) + 1) for J in combinations(active, j)]


def build_assortment_design(active: Sequence[int], theta_hat: np.ndarray, Z: np.ndarray, L: int,
                            T_tau: float, lam: float, cap: int = DEFAULT_UNIT_CAP) -> DesignProblem:
    """One unit per assortment J; moment sum_{n in J} p(n|J) z~_n(J) z~_n(J)^T."""
    family = subset_family(active, L, cap)
    if not family:
        raise ValueError("assortment design over an empty active set")
    factors = []
    for J in family:
        Zt, p = centered_features(J, theta_hat, Z)
        factors.append(Zt * np.sqrt(p))
    r = Z.shape[0]
    return DesignProblem(tuple(family), tuple(factors), _regularizer(r, T_tau, lam), r)


def build_pair_design(active: Sequence[int], theta_hat: np.ndarray, Z: np.ndarray, L: int,
                      T_tau: float, lam: float, cap: int = DEFAULT_UNIT_CAP) -> DesignProblem:
    """One unit per (agent, assortment containing it), vector z~_n(J)."""
    family = subset_family(active, L, cap)
    if sum(len(J) for J in family) > cap:
        raise DesignError(f"pair design too large; exceeds cap {cap}; reduce N or L")
    if not family:
        raise ValueError("pair design over an empty active set")
    units, factors = [], []
    for J in family:
        Zt, _ = centered_features(J, theta_hat, Z)
        for i, n in enumerate(J):
            units.append((n, J))
            factors.append(Zt[:, [i]])
    r = Z.shape[0]
    return DesignProblem(tuple(units), tuple(factors), _regularizer(r, T_tau, lam), r)
