"""Fast invariant checks runnable from the command line."""
from __future__ import annotations

import itertools
import math

import numpy as np

from .algorithms import AlgoConfig, run
from .design import DesignProblem, leverages, solve_g_optimal
from .environment import Environment, generate_instance, oracle_matching
from .mnl import Matching, choice_probs, total_revenue


def _expect(cond):
    if not cond:
        raise AssertionError("invariant violated")


def _all_matchings(N, K, L):
    for assign in itertools.product(range(K + 1), repeat=N):
        sets = tuple(tuple(n for n in range(N) if assign[n] == k + 1) for k in range(K))
        if all(len(s) <= L for s in sets):
            yield Matching(sets)


def _check_probs():
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(3, 5))
    p = choice_probs((0, 2, 4), rng.normal(size=3), Z)
    _expect(abs(p.sum() - 1) < 1e-12 and np.all(p > 0))


def _check_oracle():
    for seed in range(5):
        inst = generate_instance(4, 2, 3, 2, seed)
        best = max(total_revenue(m, inst) for m in _all_matchings(4, 2, 2))
        _expect(abs(oracle_matching(inst).value - best) < 1e-12)


def _check_design():
    rng = np.random.default_rng(1)
    for _ in range(5):
        r = int(rng.integers(2, 5))
        prob = DesignProblem.from_vectors(rng.normal(size=(12, r)), 1e-6)
        w = solve_g_optimal(prob)
        _expect(leverages(prob, w).max() <= r * 1.05)
        _expect(len(w.support) <= r * (r + 1) // 2 + 1)


def _check_runs():
    inst = generate_instance(3, 2, 4, 2, 7)
    for algo in ("bsmb", "bsmb_plus", "baseline", "bsmb_alpha"):
        cfg = AlgoConfig(algo, T=300, M=2, C3=0.01)
        tr = run(Environment(inst, 0), cfg)
        _expect(tr.regret.min() >= -1e-9)
        _expect(len(tr.regret) == 300)
        for mid in set(tr.matching_id.tolist()):
            tr.matchings[mid].validate(inst.N, inst.L)
        if algo != "baseline":
            _expect(tr.n_epochs <= cfg.M)
        else:
            _expect(tr.stats.calls == 300)


def _check_kappa():
    from .mnl import kappa_lower_bound
    _expect(math.isclose(kappa_lower_bound(1), math.exp(-2) / (1 + math.e ** 2) ** 2))


CHECKS = [("choice probabilities", _check_probs), ("oracle vs enumeration", _check_oracle),
          ("design certificate", _check_design), ("policy invariants", _check_runs),
          ("kappa bound", _check_kappa)]


def run_selftest(verbose: bool = True) -> list[str]:
    failures = []
    for name, fn in CHECKS:
        try:
            fn()
            ok = True
        except Exception as exc:  # report every check, keep going
            ok = False
            failures.append(f"{name}: {type(exc).__name__}: {exc}")
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return failures
