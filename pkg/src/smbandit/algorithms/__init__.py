"""End-to-end bandit policies."""
from .baseline import run_baseline
from .batched import (ALGORITHMS, DEFAULT_GREEDY_RATIO, AlgoConfig, run_bsmb, run_bsmb_alpha,
                      run_bsmb_plus, run_warmup, warmup_assortment, warmup_length)
from .schedule import BatchSchedule, batch_schedule, eta_T, simulate_epochs
from .trace import Recorder, RunTrace

RUNNERS = {"bsmb": run_bsmb, "bsmb_plus": run_bsmb_plus,
           "baseline": run_baseline, "bsmb_alpha": run_bsmb_alpha}


def run(env, cfg: AlgoConfig) -> RunTrace:
    return RUNNERS[cfg.algorithm](env, cfg)
