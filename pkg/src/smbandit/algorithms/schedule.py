"""Epoch-length schedule shared by the batched policies."""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BatchSchedule:
    M: int
    eta: float
    T1: float

    def length(self, tau: int) -> float:
        """Real-valued T_tau; rounds are ceil'd only when allocated."""
        T = self.T1
        for _ in range(tau - 1):
            T = self.eta * math.sqrt(T)
        return max(T, 1.0)

    def lengths(self, count: int) -> list[float]:
        return [self.length(tau) for tau in range(1, count + 1)]


def eta_T(T: int, r: int, K: int, M: int) -> float:
    if M < 1:
        raise ValueError("batch budget M must be >= 1")
    return (T / (r * K)) ** (1.0 / (2.0 * (1.0 - 2.0 ** (-M))))


def batch_schedule(T: int, r: int, K: int, M: int, variant: str = "bsmb",
                   L: int = 1, C3: float = 1.0) -> BatchSchedule:
    """T_1 = eta_T for B-SMB; max(eta_T, C3 log T log^2(TKL)) for B-SMB+.

    Taking the max keeps the B-SMB+ epochs at least as long as B-SMB's, which
    is what bounds the epoch count by M.
    """
    eta = eta_T(T, r, K, M)
    if variant == "bsmb_plus":
        first = C3 * math.log(max(T, 2)) * math.log(max(T * K * L, 2)) ** 2
        return BatchSchedule(M, eta, max(eta, first))
    return BatchSchedule(M, eta, eta)


def simulate_epochs(schedule: BatchSchedule, T: int, r: int, K: int) -> int:
    """Epochs needed to exhaust T rounds when each uses exactly K*ceil(r*T_tau) rounds."""
    used, tau = 0, 0
    while used < T:
        tau += 1
        used += K * math.ceil(r * schedule.length(tau))
    return tau
