from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class CurriculumSchedule:
    """Base-anchored weight ``lambda_t = 1 - t / T``, annealed once per optimizer step."""

    total_steps: int
    step: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")

    @property
    def value(self) -> float:
        return curriculum_lambda(self)

    def advance(self) -> None:
        self.step += 1


def curriculum_lambda(sched: CurriculumSchedule) -> float:
    if sched.step < 0:
        raise ValueError("curriculum step must be non-negative")
    if sched.step > sched.total_steps:
        log.warning("curriculum step %d past horizon %d; clamping lambda to 0", sched.step, sched.total_steps)
        return 0.0
    return 1.0 - sched.step / sched.total_steps


def position_weights(gamma: int) -> np.ndarray:
    """``w_k = exp(-k / gamma)`` for ``k = 0 .. gamma - 1``."""
    if gamma < 1:
        raise ValueError("gamma must be at least 1")
    return np.exp(-np.arange(gamma) / gamma)

