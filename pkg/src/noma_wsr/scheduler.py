"""Proportional fair scheduling over one frame of T slots."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import Instance
from .multi_carrier import SolveReport, ftpc, jspa

RATE_FLOOR = 1e3  # bit/s; keeps 1/avg_rate finite for users starved in warm-up


@dataclass
class SchedulerState:
    t: int
    avg_rate: np.ndarray
    history: list = field(default_factory=list)  # per-slot rate vectors

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / self.avg_rate


def pf_update(state: SchedulerState, rates, T: int) -> SchedulerState:
    """Exponential moving average with window ``T``; weights follow as 1/avg."""
    if T < 1:
        raise ValueError("T must be at least 1")
    rates = np.asarray(rates, dtype=float)
    if np.any(rates < 0):
        raise ValueError("rates must be non-negative")
    avg = (1.0 - 1.0 / T) * state.avg_rate + rates / T
    return SchedulerState(t=state.t + 1, avg_rate=avg, history=state.history + [rates])


def fairness_index(mean_rates) -> float:
    """Mean natural log of the per-user mean rates."""
    mean_rates = np.asarray(mean_rates, dtype=float)
    if np.any(mean_rates <= 0):
        raise ValueError("fairness index undefined: some user has zero mean rate")
    return float(np.mean(np.log(mean_rates)))


SOLVERS: dict[str, Callable[..., SolveReport]] = {"jspa": jspa, "ftpc": ftpc}


@dataclass
class FrameResult:
    solver: str
    mean_rates: np.ndarray
    fairness: float
    sum_rate: float
    slots: list  # (t, rates, avg_rate before update, weights used)
    converged: bool


def run_frame(
    inst: Instance,
    solver: str | Callable[[Instance], SolveReport] = "jspa",
    T: int = 20,
    floor: float = RATE_FLOOR,
    epsilon: float = 1e-4,
    init: str = "constant",
) -> FrameResult:
    """Schedule ``T`` slots on a fixed channel; the instance's weights are ignored.

    ``init="constant"`` starts every average rate at ``floor`` (equal initial
    weights).  ``init="warmup"`` runs one extra solve with unit weights and
    starts from its rates, floored at ``floor``.
    """
    if init not in ("constant", "warmup"):
        raise ValueError("init must be 'constant' or 'warmup'")
    name = solver if isinstance(solver, str) else getattr(solver, "__name__", "custom")
    solve = SOLVERS[solver] if isinstance(solver, str) else solver
    kwargs = {"epsilon": epsilon} if solve is jspa else {}

    converged = True
    if init == "warmup":
        warm = solve(inst.with_weights(np.ones(inst.K)), **kwargs)
        state = SchedulerState(t=1, avg_rate=np.maximum(warm.user_rates, floor))
        converged = warm.converged
    else:
        state = SchedulerState(t=1, avg_rate=np.full(inst.K, float(floor)))
    slots = []
    for t in range(1, T + 1):
        weights = state.weights
        report = solve(inst.with_weights(weights), **kwargs)
        converged &= report.converged
        rates = report.user_rates
        slots.append((t, rates, state.avg_rate, weights))
        state = pf_update(state, rates, T)
    mean_rates = np.mean(state.history, axis=0)
    fair = fairness_index(mean_rates) if np.all(mean_rates > 0) else -math.inf
    return FrameResult(name, mean_rates, fair, float(mean_rates.sum()), slots, converged)
