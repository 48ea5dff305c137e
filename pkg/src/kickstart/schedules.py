"""Distillation-weight schedules and the hyperparameters PBT evolves."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List

from .errors import ConfigError

SCHEDULE_KINDS = ("constant", "linear", "pbt")


@dataclass
class HyperParams:
    """Learning dynamics knobs of one population member.

    The effective distillation weight for teacher ``i`` is
    ``distill_global * distill_per_teacher[i]``, so scaling the global factor
    moves every teacher's weight at once.
    """

    learning_rate: float = 5e-4
    entropy_cost: float = 0.01
    distill_global: float = 1.0
    distill_per_teacher: List[float] = field(default_factory=lambda: [1.0])

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.entropy_cost < 0:
            raise ConfigError(f"entropy_cost must be non-negative, got {self.entropy_cost}")
        if self.distill_global < 0 or any(r < 0 for r in self.distill_per_teacher):
            raise ConfigError("distillation scales must be non-negative")
        self.distill_per_teacher = [float(r) for r in self.distill_per_teacher]

    def effective_lambdas(self) -> List[float]:
        return [self.distill_global * r for r in self.distill_per_teacher]

    def copy(self) -> "HyperParams":
        return replace(self, distill_per_teacher=list(self.distill_per_teacher))


@dataclass(frozen=True)
class Schedule:
    """Rule producing the distillation weight from the learner's frame counter.

    ``constant`` uses ``value``; ``linear`` decays from ``value`` to zero at
    ``end_frame``; ``pbt`` reads the weight from the member's hyperparameters
    (``per_teacher`` selects the factorised per-teacher form).
    """

    kind: str = "constant"
    value: float = 0.0
    end_frame: int = 1
    per_teacher: bool = False

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.value < 0:
            raise ConfigError(f"schedule value must be non-negative, got {self.value}")
        if self.end_frame <= 0:
            raise ConfigError(f"end_frame must be positive, got {self.end_frame}")


def lambda_at(schedule: Schedule, frames: int, hypers: HyperParams, teacher_index: int = 0) -> float:
    if frames < 0:
        raise ValueError(f"frames must be non-negative, got {frames}")
    if schedule.kind == "constant":
        return float(schedule.value)
    if schedule.kind == "linear":
        return schedule.value * max(0.0, 1.0 - frames / schedule.end_frame)
    if schedule.per_teacher:
        if not 0 <= teacher_index < len(hypers.distill_per_teacher):
            raise ConfigError(
                f"teacher index {teacher_index} out of range for "
                f"{len(hypers.distill_per_teacher)} per-teacher scales"
            )
        return hypers.distill_global * hypers.distill_per_teacher[teacher_index]
    return float(hypers.distill_global)


def lambdas_at(schedule: Schedule, frames: int, hypers: HyperParams, num_teachers: int) -> List[float]:
    """Distillation weight for every teacher index."""
    return [lambda_at(schedule, frames, hypers, i) for i in range(num_teachers)]
