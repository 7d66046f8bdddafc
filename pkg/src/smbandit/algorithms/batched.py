"""Batched elimination policies: B-SMB, B-SMB+ and the approximation-oracle variant."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..assortment import IndexParams, OptimizerStats, eliminate
from ..design import (DEFAULT_TOL, DEFAULT_UNIT_CAP, build_agent_design,
                      build_assortment_design, build_pair_design, solve_g_optimal)
from ..environment import Environment
from ..estimation import (ArmDataset, MleConfig, design_matrix, fit_mle, local_gram)
from ..mnl import Matching, kappa_lower_bound, project_features
from .schedule import batch_schedule
from .trace import Recorder, RunTrace

ALGORITHMS = ("bsmb", "bsmb_plus", "baseline", "bsmb_alpha")

# Smallest greedy/exact value ratio seen by measure_greedy_ratio() with its
# defaults (100 instances, N=5, K=3, L=2); used as nominal alpha and beta.
DEFAULT_GREEDY_RATIO = 0.829


@dataclass
class AlgoConfig:
    algorithm: str
    T: int
    M: int = 3
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 1.0
    C3_warm: float = 1.0
    C4: float = 1.0
    C5: float = 1.0
    C6: float = 1.0
    zeta_scale: float = 1.0
    kappa: float | None = None
    mle: MleConfig | None = None
    design_tol: float = DEFAULT_TOL
    unit_cap: int = DEFAULT_UNIT_CAP
    warmup_cap_fraction: float = 0.1
    alpha: float | None = None
    theta_init: np.ndarray | None = None
    learn: bool = True
    label: str | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.T < 1:
            raise ValueError("horizon T must be >= 1")
        if self.M < 1:
            raise ValueError("batch budget M must be >= 1")
        if self.kappa is not None and self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if not 0 < self.warmup_cap_fraction <= 1:
            raise ValueError("warmup_cap_fraction must lie in (0, 1]")
        if self.alpha is not None and self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        for name in ("C1", "C2", "C3", "C3_warm", "C4", "C5", "C6", "zeta_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def name(self) -> str:
        return self.label or self.algorithm

    @property
    def nominal_alpha(self) -> float:
        return DEFAULT_GREEDY_RATIO if self.alpha is None else self.alpha


# ---------------------------------------------------------------- warm-up

def warmup_assortment(t: int, N: int, L: int) -> tuple[int, ...]:
    """Round-robin chunk for local warm-up round t >= 1 (0-indexed agents).

    Chunks of i = min(L, N) consecutive agents, wrapping past the last agent.
    """
    i = min(L, N)
    a = (i * (t - 1) + 1) % N or N
    b = (i * t) % N or N
    if a <= b:
        picked = range(a, b + 1)
    else:
        picked = list(range(1, b + 1)) + list(range(a, N + 1))
    return tuple(sorted(n - 1 for n in picked))


def warmup_length(N: int, L: int, r: int, K: int, T: int, kappa: float,
                  lam_min: float, C3_warm: float) -> int:
    """Uncapped warm-up length ceil(C N / (i kappa^2 lam_min log TK) (r + log TK)^2)."""
    i = min(L, N)
    log_tk = math.log(max(T * K, 2))
    return math.ceil(C3_warm * N / (i * kappa ** 2 * lam_min * log_tk) * (r + log_tk) ** 2)


def run_warmup(rec: Recorder, arm: int, N: int, L: int, r: int, lam_min: float,
               kappa: float, C3_warm: float, T: int, cap: int, epoch: int = 0):
    """Offer round-robin chunks to ``arm`` (empty elsewhere) and collect its feedback.

    Returns (dataset, rounds used, whether the cap was binding).
    """
    if lam_min <= 0:
        raise ValueError("warm-up needs a full-rank feature Gram matrix")
    K = rec.env.instance.K
    wanted = warmup_length(N, L, r, K, T, kappa, lam_min, C3_warm)
    length = min(wanted, cap)
    data = ArmDataset(arm)
    used = 0
    for t in range(1, length + 1):
        S = warmup_assortment(t, N, L)
        sets = [()] * K
        sets[arm] = S
        fb = rec.offer(Matching(tuple(sets)), epoch)
        if fb is None:
            break
        data.add(rec.t, S, fb.outcomes[arm])
        used += 1
    return data, used, wanted > cap


# ---------------------------------------------------------------- shared loop

def _explore(rec: Recorder, matching: Matching, rounds: int, arm: int,
             data: ArmDataset, epoch: int) -> int:
    S = matching.sets[arm]
    used = 0
    for _ in range(rounds):
        fb = rec.offer(matching, epoch)
        if fb is None:
            break
        data.add(rec.t, S, fb.outcomes[arm])
        used += 1
    return used


def _zeta(lam: float, r: int, K: int, T: int, L: int, t_start: int) -> float:
    inner = 1.0 + 2.0 * (t_start - 1) * L / (r * lam)
    return 0.5 * math.sqrt(lam) + (2.0 * r / math.sqrt(lam)) * math.log(4.0 * K * T * inner)


def _initial_theta(cfg: AlgoConfig, proj, K: int) -> np.ndarray:
    if cfg.theta_init is None:
        return np.zeros((K, proj.rank))
    # given in the original d-dimensional feature space, one row per arm
    theta = np.atleast_2d(np.asarray(cfg.theta_init, dtype=float))
    return theta @ proj.U


def _run_batched(env: Environment, cfg: AlgoConfig, variant: str) -> RunTrace:
    inst = env.instance
    N, K, L, T = inst.N, inst.K, inst.L, cfg.T
    proj = project_features(inst.X)
    Z, r = proj.Z, proj.rank
    plus = variant == "bsmb_plus"
    mode = {"bsmb": "bsmb", "bsmb_plus": "bsmb_plus", "bsmb_alpha": "alpha"}[variant]
    alpha = cfg.nominal_alpha if variant == "bsmb_alpha" else 1.0

    stats = OptimizerStats()
    rec = Recorder(env, T, cfg.name, stats)
    sched = batch_schedule(T, r, K, cfg.M, "bsmb_plus" if plus else "bsmb", L, cfg.C3)
    kappa = cfg.kappa if cfg.kappa is not None else kappa_lower_bound(L)
    beta = cfg.C1 / kappa * math.sqrt(math.log(T * N * K))
    lam = cfg.C2 * r * math.log(max(K, 2))
    lam_min = float(np.linalg.eigvalsh(Z @ Z.T).min())
    mle = cfg.mle or MleConfig(norm_cap=1.0 if plus else None)
    warm_cap = max(1, int(cfg.warmup_cap_fraction * T) // K)
    if not plus:
        rec.notes.append(f"warm-up capped at {warm_cap} rounds per arm per epoch")

    active = tuple(tuple(range(N)) for _ in range(K))
    data = [ArmDataset(k) for k in range(K)]
    theta = _initial_theta(cfg, proj, K)
    theta_prev = theta.copy()
    tau = 0
    while not rec.done:
        tau += 1
        T_tau = sched.length(tau)
        t_start = rec.t + 1
        if cfg.learn and tau > 1:
            theta = np.stack([fit_mle(data[k], Z, mle, theta0=theta[k]) for k in range(K)])
        if plus:
            H = np.stack([local_gram(theta[k], data[k], Z, lam) for k in range(K)])
            zeta = cfg.zeta_scale * _zeta(lam, r, K, T, L, t_start)
            params = IndexParams("bsmb_plus", Z, inst.rewards, theta, zeta=zeta, H=H,
                                 theta_prev=theta_prev)
        else:
            V = np.stack([design_matrix(data[k], Z) for k in range(K)])
            params = IndexParams("bsmb", Z, inst.rewards, theta, beta=beta, V=V)
        ucb, lcb = params.tables(L)
        calls_before = stats.calls
        elim = eliminate(active, L, ucb, lcb, mode, alpha=alpha, N=N, stats=stats)
        record = {
            "epoch": tau, "T_tau": T_tau, "start": t_start, "theta": theta.copy(),
            "active_before": active, "active": elim.active, "agent_pass": elim.agent_pass,
            "opt_calls": stats.calls - calls_before, "designs": [], "warmup_rounds": [],
            "warmup_capped": [], "fill_rounds": [0] * K,
        }
        rec.epochs.append(record)
        new_data = [ArmDataset(k) for k in range(K)]
        for k in range(K):
            if rec.done:
                break
            if not plus:
                wd, used, capped = run_warmup(rec, k, N, L, r, lam_min, kappa, cfg.C3_warm,
                                              T, warm_cap, tau)
                new_data[k] = wd
                record["warmup_rounds"].append(used)
                record["warmup_capped"].append(capped)
            if not elim.active[k]:
                # nothing left to explore for this arm: play the safe matching instead
                n_fill = math.ceil(r * T_tau)
                for _ in range(n_fill):
                    if rec.offer(elim.lcb_best[0], tau) is None:
                        break
                record["fill_rounds"][k] = n_fill
                record["designs"].append(None)
                continue
            agent = solve_g_optimal(build_agent_design(elim.active[k], Z, T_tau,
                                                       lam if plus else None),
                                    tol=cfg.design_tol)
            designs = {"agents": agent.as_dict()}
            for n, w in zip(agent.support, agent.weights):
                _explore(rec, elim.pinned[(n, k)][0], math.ceil(r * w * T_tau), k, new_data[k], tau)
            if plus:
                sets = solve_g_optimal(build_assortment_design(
                    elim.active[k], theta[k], Z, L, T_tau, lam, cfg.unit_cap), tol=cfg.design_tol)
                for J, w in zip(sets.support, sets.weights):
                    _explore(rec, elim.fixed[(J, k)][0], math.ceil(r * w * T_tau), k, new_data[k], tau)
                pairs = solve_g_optimal(build_pair_design(
                    elim.active[k], theta[k], Z, L, T_tau, lam, cfg.unit_cap), tol=cfg.design_tol)
                for (n, J), w in zip(pairs.support, pairs.weights):
                    _explore(rec, elim.fixed[(J, k)][0], math.ceil(r * w * T_tau), k, new_data[k], tau)
                designs["assortments"] = sets.as_dict()
                designs["pairs"] = pairs.as_dict()
            record["designs"].append(designs)
        active = elim.active
        data = new_data
        theta_prev = theta.copy()
    return rec.finish()


def run_bsmb(env: Environment, cfg: AlgoConfig) -> RunTrace:
    return _run_batched(env, cfg, "bsmb")


def run_bsmb_plus(env: Environment, cfg: AlgoConfig) -> RunTrace:
    return _run_batched(env, cfg, "bsmb_plus")


def run_bsmb_alpha(env: Environment, cfg: AlgoConfig) -> RunTrace:
    return _run_batched(env, cfg, "bsmb_alpha")
