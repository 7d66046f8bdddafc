"""Per-round optimistic MNL baseline with online mirror descent updates."""
from __future__ import annotations

import math

import numpy as np

from ..assortment import IndexParams, OptimizerStats, exact_argmax
from ..environment import Environment
from ..estimation import mnl_gram_term, omd_update, round_gradient
from ..mnl import project_features
from .batched import AlgoConfig, _initial_theta
from .trace import Recorder, RunTrace


def baseline_gamma(t: int, C4: float, d: int, K: int, L: int, T: int) -> float:
    """gamma_t = C4 log L sqrt(d log t log KT), logs floored at log 2."""
    return C4 * math.log(max(L, 2)) * math.sqrt(d * math.log(max(t, 2)) * math.log(max(K * T, 2)))


def run_baseline(env: Environment, cfg: AlgoConfig) -> RunTrace:
    inst = env.instance
    N, K, L, T, d = inst.N, inst.K, inst.L, cfg.T, inst.d
    proj = project_features(inst.X)
    Z, r = proj.Z, proj.rank
    lam = cfg.C5 * d * math.log(max(K, 2))
    eta = cfg.C6 * math.log(max(K, 2))
    eye = np.eye(r)

    stats = OptimizerStats()
    rec = Recorder(env, T, cfg.name, stats)
    theta = _initial_theta(cfg, proj, K)
    G_sum = np.zeros((K, r, r))     # sum of per-round curvature up to t-2
    G_last = np.zeros((K, r, r))    # curvature of round t-1 at its own estimate
    g_last = np.zeros((K, r))       # gradient of round t-1 at its own estimate
    full = [tuple(range(N))] * K
    for t in range(1, T + 1):
        if cfg.learn:
            for k in range(K):
                G_tilde = lam * eye + G_sum[k] + eta * G_last[k]
                theta[k] = omd_update(theta[k], g_last[k], G_tilde, eta, norm_cap=1.0)
        G = lam * eye + G_sum + G_last
        params = IndexParams("baseline", Z, inst.rewards, theta,
                             gamma=baseline_gamma(t, cfg.C4, d, K, L, T), G=G)
        ucb, _ = params.tables(L, lower=False)
        matching, _ = exact_argmax(ucb, full, L, N=N, stats=stats)
        fb = rec.offer(matching, epoch=t)
        for k, S in enumerate(matching.sets):
            G_sum[k] += G_last[k]
            G_last[k] = mnl_gram_term(S, theta[k], Z)
            g_last[k] = round_gradient(S, fb.outcomes[k], theta[k], Z)
    rec.notes.append(f"baseline lambda={lam:.4g} eta={eta:.4g}")
    return rec.finish()
