"""Threshold schedules: stepwise, cosine-curve, fixed, and batch-adaptive.

Manual schedules map an epoch index (0-based) to a similarity threshold;
the adaptive strategy instead derives the threshold from the pooled
off-diagonal similarities of the current batch as mean + k * std.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BadConfig, EmptyBatch

KINDS = ("step", "cos", "adaptive", "fixed")


@dataclass
class ThresholdSchedule:
    kind: str
    start: float = 0.9
    floor: float = 0.1
    step_down: float = 0.1
    period_epochs: int = 100
    total_epochs: int = 100
    sigma_multiplier: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BadConfig(f"schedule kind must be one of {KINDS}, got {self.kind!r}")
        if self.start < self.floor:
            raise BadConfig(f"start ({self.start}) must be >= floor ({self.floor})")
        if self.kind == "step" and self.step_down <= 0:
            raise BadConfig("step_down must be > 0 for the step schedule")
        if self.period_epochs < 1:
            raise BadConfig("period_epochs must be >= 1")
        if self.kind == "cos" and self.total_epochs < 1:
            raise BadConfig("total_epochs must be >= 1 for the cos schedule")
        if self.sigma_multiplier <= 0:
            raise BadConfig("sigma_multiplier must be > 0")


def default_step_period(total_epochs: int) -> int:
    """Step period convention: 25 for short (<= 100 epoch) runs, else 100."""
    return 25 if total_epochs <= 100 else 100


def step_threshold(s: ThresholdSchedule, epoch: int) -> float:
    if s.kind != "step":
        raise BadConfig(f"step_threshold called on a {s.kind!r} schedule")
    return max(s.floor, s.start - s.step_down * (epoch // s.period_epochs))


def cosine_threshold(s: ThresholdSchedule, epoch: int) -> float:
    if s.kind != "cos":
        raise BadConfig(f"cosine_threshold called on a {s.kind!r} schedule")
    frac = min(epoch, s.total_epochs) / s.total_epochs
    return s.floor + (s.start - s.floor) * (1.0 + math.cos(math.pi * frac)) / 2.0


def adaptive_threshold(batch_sims, sigma_multiplier: float = 2.0) -> float:
    """Mean plus sigma_multiplier population standard deviations of the
    pooled off-diagonal similarities. May legally exceed 1; combined with
    strict-inequality masks that simply yields empty memberships."""
    values = np.asarray(batch_sims, dtype=np.float64).ravel()
    if values.size == 0:
        raise EmptyBatch("adaptive threshold needs at least one similarity")
    mean = float(values.mean())
    std = float(np.sqrt(((values - mean) ** 2).mean()))
    return mean + sigma_multiplier * std


def threshold_for_epoch(s: ThresholdSchedule, epoch: int) -> Optional[float]:
    """Scheduled threshold for manual kinds; None for adaptive (the value
    is batch-dependent and must come from adaptive_threshold)."""
    if s.kind == "step":
        return step_threshold(s, epoch)
    if s.kind == "cos":
        return cosine_threshold(s, epoch)
    if s.kind == "fixed":
        return s.start
    return None
