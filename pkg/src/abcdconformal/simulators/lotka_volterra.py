"""Stochastic Lotka-Volterra predator-prey jump process.

State (X1, X2) with transitions
    prey birth      (X1, X2) -> (X1+1, X2)    at rate c1 * X1
    predation       (X1, X2) -> (X1-1, X2+1)  at rate c2 * X1 * X2
    predator death  (X1, X2) -> (X1, X2-1)    at rate c3 * X2
from (50, 100), observed every 2 time units on [0, 36].  Trajectories
where either species dies out inside the window are reported as
``Extinct``; the prior makes explosive prey growth possible, so both
simulation methods enforce an event budget.

The inner loops are numba-compiled; they draw from the numpy Generator
passed in, so streams are bit-identical to a pure-python port using the
same seed (the test suite exploits this).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "LvParams",
    "LvTrajectory",
    "Extinct",
    "EventBudgetExceeded",
    "OBS_INTERVAL",
    "T_END",
    "INITIAL_STATE",
    "LOG_PRIOR_LOW",
    "LOG_PRIOR_HIGH",
    "hazards",
    "sample_prior",
    "simulate",
]

OBS_INTERVAL = 2.0
T_END = 36.0
INITIAL_STATE = (50, 100)
LOG_PRIOR_LOW = -6.0
LOG_PRIOR_HIGH = 2.0
DEFAULT_MAX_EVENTS = 10_000_000
DEFAULT_TAU = 0.01

_OK, _EXTINCT, _BUDGET = 0, 1, 2


class EventBudgetExceeded(RuntimeError):
    """Trajectory exceeded the event budget (explosive growth regime)."""


@dataclass(frozen=True)
class LvParams:
    c1: float
    c2: float
    c3: float

    def __post_init__(self):
        for c in (self.c1, self.c2, self.c3):
            if not (c >= 0.0 and math.isfinite(c)):
                raise ValueError("rate coefficients must be finite and nonnegative")

    @staticmethod
    def from_log(log_c1: float, log_c2: float, log_c3: float) -> "LvParams":
        for v in (log_c1, log_c2, log_c3):
            if not LOG_PRIOR_LOW <= v <= LOG_PRIOR_HIGH:
                raise ValueError(f"log rate {v} outside prior support [-6, 2]")
        return LvParams(math.exp(log_c1), math.exp(log_c2), math.exp(log_c3))

    def as_array(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.c3])


@dataclass(frozen=True)
class LvTrajectory:
    prey: np.ndarray       # (n_obs,) int64
    predators: np.ndarray  # (n_obs,) int64

    def __post_init__(self):
        if self.prey.shape != self.predators.shape:
            raise ValueError("species series have different lengths")
        if np.any(self.prey < 0) or np.any(self.predators < 0):
            raise ValueError("populations must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.stack([self.prey, self.predators])

    @property
    def n_obs(self) -> int:
        return self.prey.shape[0]


@dataclass(frozen=True)
class Extinct:
    """Either species hit zero at this time, inside the window."""

    time: float


def hazards(state: tuple[int, int], params: LvParams) -> tuple[float, float, float]:
    x1, x2 = state
    return (params.c1 * x1, params.c2 * x1 * x2, params.c3 * x2)


def sample_prior(rng: np.random.Generator) -> LvParams:
    logs = rng.uniform(LOG_PRIOR_LOW, LOG_PRIOR_HIGH, size=3)
    return LvParams.from_log(*logs)


@njit(cache=True)
def _exact_kernel(rng, c1, c2, c3, x1, x2, obs_interval, n_obs, max_events, out):
    t = 0.0
    out[0, 0] = x1
    out[1, 0] = x2
    next_obs = 1
    events = 0
    while next_obs < n_obs:
        r1 = c1 * x1
        r2 = c2 * x1 * x2
        r3 = c3 * x2
        total = r1 + r2 + r3
        if total == 0.0:
            for j in range(next_obs, n_obs):
                out[0, j] = x1
                out[1, j] = x2
            return _OK, 0.0, events
        dt = rng.exponential(1.0 / total)
        while next_obs < n_obs and t + dt >= next_obs * obs_interval:
            out[0, next_obs] = x1
            out[1, next_obs] = x2
            next_obs += 1
        if next_obs >= n_obs:
            break
        t += dt
        u = rng.random() * total
        if u < r1:
            x1 += 1
        elif u < r1 + r2:
            x1 -= 1
            x2 += 1
        else:
            x2 -= 1
        events += 1
        if events > max_events:
            return _BUDGET, t, events
        if x1 == 0 or x2 == 0:
            return _EXTINCT, t, events
    return _OK, 0.0, events


@njit(cache=True)
def _tau_leap_kernel(rng, c1, c2, c3, x1, x2, tau, steps_per_obs, n_obs, max_events, out):
    out[0, 0] = x1
    out[1, 0] = x2
    events = 0
    total_steps = (n_obs - 1) * steps_per_obs
    for s in range(1, total_steps + 1):
        r1 = c1 * x1
        r2 = c2 * x1 * x2
        r3 = c3 * x2
        # expected step load already past the budget: bail before the
        # Poisson sampler sees an astronomical rate
        if events + (r1 + r2 + r3) * tau > 2.0 * max_events:
            return _BUDGET, s * tau, events
        n1 = rng.poisson(r1 * tau)
        n2 = rng.poisson(r2 * tau)
        n3 = rng.poisson(r3 * tau)
        x1 += n1 - n2
        x2 += n2 - n3
        if x1 < 0:
            x1 = 0
        if x2 < 0:
            x2 = 0
        events += n1 + n2 + n3
        if events > max_events:
            return _BUDGET, s * tau, events
        if x1 == 0 or x2 == 0:
            return _EXTINCT, s * tau, events
        if s % steps_per_obs == 0:
            out[0, s // steps_per_obs] = x1
            out[1, s // steps_per_obs] = x2
    return _OK, 0.0, events


def simulate(
    params: LvParams,
    rng: np.random.Generator,
    method: str = "tau-leap",
    max_events: int = DEFAULT_MAX_EVENTS,
    t_end: float = T_END,
    tau: float = DEFAULT_TAU,
) -> LvTrajectory | Extinct:
    """One trajectory, or ``Extinct``; raises on a blown event budget."""
    if max_events < 1:
        raise ValueError("event budget must be positive")
    n_obs = int(round(t_end / OBS_INTERVAL)) + 1
    if n_obs < 2 or abs((n_obs - 1) * OBS_INTERVAL - t_end) > 1e-9:
        raise ValueError(f"t_end={t_end} must be a positive multiple of {OBS_INTERVAL}")
    out = np.zeros((2, n_obs), dtype=np.int64)
    x1, x2 = INITIAL_STATE
    if method == "exact":
        status, when, _ = _exact_kernel(
            rng, params.c1, params.c2, params.c3, x1, x2, OBS_INTERVAL, n_obs, max_events, out
        )
    elif method == "tau-leap":
        steps_per_obs = int(round(OBS_INTERVAL / tau))
        if steps_per_obs < 1 or abs(steps_per_obs * tau - OBS_INTERVAL) > 1e-9:
            raise ValueError(f"tau={tau} must divide the observation interval {OBS_INTERVAL}")
        status, when, _ = _tau_leap_kernel(
            rng,
            params.c1,
            params.c2,
            params.c3,
            x1,
            x2,
            tau,
            steps_per_obs,
            n_obs,
            max_events,
            out,
        )
    else:
        raise ValueError(f"unknown simulation method {method!r}")
    if status == _BUDGET:
        raise EventBudgetExceeded(
            f"exceeded {max_events} events at t={when:.3f} for c=({params.c1:.4g}, "
            f"{params.c2:.4g}, {params.c3:.4g})"
        )
    if status == _EXTINCT:
        return Extinct(time=float(when))
    return LvTrajectory(prey=out[0].copy(), predators=out[1].copy())
