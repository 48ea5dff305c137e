"""Unroll containers passed from actors to the learner."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np


@dataclass
class Trajectory:
    """One fixed-length unroll of ``T`` steps.

    ``observations`` has ``T + 1`` rows; the last one is the bootstrap
    observation. After a terminal step the next row is the first observation
    of the following episode. ``teacher_logits`` come from the teacher routed
    to ``task_id`` (index ``teacher_index``) evaluated on the same observations.
    """

    task_id: str
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    behaviour_logits: Optional[np.ndarray]
    terminals: np.ndarray
    param_version: int = 0
    teacher_logits: Optional[np.ndarray] = None
    teacher_index: Optional[int] = None
    actor_id: int = 0
    episode_returns: List[float] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.actions)

    def __post_init__(self):
        t = len(self.actions)
        if self.observations.shape[0] != t + 1:
            raise ValueError(f"expected {t + 1} observations, got {self.observations.shape[0]}")
        if len(self.rewards) != t or len(self.terminals) != t:
            raise ValueError("rewards/terminals length must equal number of actions")
        for name in ("behaviour_logits", "teacher_logits"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != t:
                raise ValueError(f"{name} must have {t} rows, got {arr.shape[0]}")


@dataclass
class Batch:
    """``B`` trajectories stacked along a leading axis."""

    observations: np.ndarray  # (B, T+1, D)
    actions: np.ndarray  # (B, T)
    rewards: np.ndarray  # (B, T)
    behaviour_logits: Optional[np.ndarray]  # (B, T, A)
    terminals: np.ndarray  # (B, T)
    teacher_logits: Optional[np.ndarray] = None  # (B, T, A)
    teacher_index: Optional[np.ndarray] = None  # (B,) int, -1 = no teacher
    task_ids: Sequence[str] = ()

    @property
    def size(self) -> int:
        return self.actions.shape[0]

    @property
    def length(self) -> int:
        return self.actions.shape[1]

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory]) -> "Batch":
        if not trajs:
            raise ValueError("cannot build an empty batch")
        if any(t.behaviour_logits is None for t in trajs):
            behaviour = None
        else:
            behaviour = np.stack([t.behaviour_logits for t in trajs])
        has_teacher = [t.teacher_logits is not None for t in trajs]
        if any(has_teacher):
            a = trajs[0].actions.shape[0]
            num_actions = next(t.teacher_logits.shape[1] for t in trajs if t.teacher_logits is not None)
            teacher = np.stack([
                t.teacher_logits if t.teacher_logits is not None else np.zeros((a, num_actions))
                for t in trajs
            ])
            index = np.array([
                -1 if t.teacher_index is None or t.teacher_logits is None else t.teacher_index
                for t in trajs
            ])
        else:
            teacher = None
            index = None
        return cls(
            observations=np.stack([t.observations for t in trajs]),
            actions=np.stack([t.actions for t in trajs]),
            rewards=np.stack([t.rewards for t in trajs]),
            behaviour_logits=behaviour,
            terminals=np.stack([t.terminals for t in trajs]),
            teacher_logits=teacher,
            teacher_index=index,
            task_ids=[t.task_id for t in trajs],
        )


def as_batch(data) -> Batch:
    if isinstance(data, Batch):
        return data
    if isinstance(data, Trajectory):
        return Batch.from_trajectories([data])
    return Batch.from_trajectories(list(data))
