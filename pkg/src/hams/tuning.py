"""Burn-in adaptation of the step size from windowed acceptance rates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, NamedTuple, Protocol, Tuple

from .core import RngStream

__all__ = [
    "TuningPolicy",
    "TuningRecord",
    "adapt_step_size",
    "decrease_step",
    "increase_step",
    "tune_chain",
]


@dataclass(frozen=True)
class TuningPolicy:
    """Target acceptance band and adjustment schedule.

    The band is ``target_rate +/- band_halfwidth``. Every ``window``
    iterations the step size moves up or down if the windowed rate falls
    outside the band.
    """

    target_rate: float = 0.70
    band_halfwidth: float = 0.05
    delta: float = 0.2
    window: int = 250

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if not 0.0 < self.target_rate < 1.0:
            raise ValueError("target_rate must lie in (0, 1)")
        if self.band_halfwidth < 0.0:
            raise ValueError("band_halfwidth must be non-negative")
        if int(self.window) < 1:
            raise ValueError("window must be positive")

    @classmethod
    def for_method(cls, method: str, **overrides) -> "TuningPolicy":
        """Default policy: 0.3 for random-walk Metropolis, 0.7 otherwise."""
        rate = 0.30 if method.upper() == "RWM" else 0.70
        return cls(**{"target_rate": rate, **overrides})


def decrease_step(epsilon: float, delta: float) -> float:
    return max(1.0 - math.sqrt(1.0 - epsilon), epsilon / (1.0 + delta))


def increase_step(epsilon: float, delta: float) -> float:
    return epsilon + epsilon * min(1.0 - epsilon, delta)


def adapt_step_size(epsilon: float, observed_rate: float, policy: TuningPolicy) -> float:
    """Move ``epsilon`` toward the acceptance band; stays inside ``(0, 1]``."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if observed_rate < policy.target_rate - policy.band_halfwidth:
        return decrease_step(epsilon, policy.delta)
    if observed_rate > policy.target_rate + policy.band_halfwidth:
        return increase_step(epsilon, policy.delta)
    return epsilon


class TunableSampler(Protocol):
    epsilon: float

    def set_epsilon(self, epsilon: float) -> None: ...

    def step(self, rng: RngStream): ...


class TuningRecord(NamedTuple):
    iteration: int
    epsilon: float
    rate: float


def tune_chain(
    sampler: TunableSampler,
    policy: TuningPolicy,
    burn_in: int,
    rng: RngStream,
) -> Tuple[float, List[TuningRecord]]:
    """Run ``burn_in`` iterations, adapting the step size after each window.

    Returns the frozen step size and one record per window holding the step
    size used during the window and the acceptance rate it achieved.
    Leftover iterations after the last full window run without adaptation.
    """
    if burn_in < policy.window:
        raise ValueError("burn_in must cover at least one window")
    trace: List[TuningRecord] = []
    accepted = 0
    for it in range(1, burn_in + 1):
        accepted += bool(sampler.step(rng).accepted)
        if it % policy.window == 0:
            rate = accepted / policy.window
            trace.append(TuningRecord(it, sampler.epsilon, rate))
            sampler.set_epsilon(adapt_step_size(sampler.epsilon, rate, policy))
            accepted = 0
    return sampler.epsilon, trace
