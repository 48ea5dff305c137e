"""Frozen teacher policies: training, persistence and per-task routing."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import nets
from .errors import ConfigError
from .schedules import HyperParams

TEACHER_MAGIC = b"KSTE"
TEACHER_VERSION = 1


@dataclass
class Teacher:
    net: nets.PolicyValueNet
    trained_tasks: List[str]
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trained_tasks:
            raise ConfigError("a teacher must list at least one trained task")
        if any(p.flags.writeable for p in self.net.parameters()):
            self.net = self.net.frozen()

    def digest(self) -> str:
        return hashlib.sha256(nets.checkpoint_bytes(self.net, HyperParams())).hexdigest()


def teacher_logits(teacher: Teacher, observation) -> np.ndarray:
    """Policy logits of the frozen teacher for one observation or a batch."""
    logits, _ = nets.forward(teacher.net, observation)
    return logits


def teacher_bytes(teacher: Teacher) -> bytes:
    """``KSTE`` magic, u32 version, u32 header length, UTF-8 JSON provenance, then a KSRL checkpoint."""
    header = json.dumps(
        {"trained_tasks": teacher.trained_tasks, **teacher.provenance}, sort_keys=True
    ).encode("utf-8")
    return b"".join([
        TEACHER_MAGIC,
        struct.pack("<II", TEACHER_VERSION, len(header)),
        header,
        nets.checkpoint_bytes(teacher.net, HyperParams()),
    ])


def save_teacher(path, teacher: Teacher) -> None:
    with open(path, "wb") as f:
        f.write(teacher_bytes(teacher))


def load_teacher(path) -> Teacher:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != TEACHER_MAGIC:
        raise ConfigError(f"{path}: not a teacher file")
    version, n = struct.unpack_from("<II", data, 4)
    if version != TEACHER_VERSION:
        raise ConfigError(f"{path}: unsupported teacher version {version}")
    header = json.loads(data[12:12 + n].decode("utf-8"))
    net, _, end = nets.checkpoint_from_bytes(data, 12 + n)
    if end != len(data):
        raise ConfigError(f"{path}: trailing bytes after teacher checkpoint")
    tasks = header.pop("trained_tasks")
    return Teacher(net.frozen(), tasks, header)


class TeacherRouter:
    """Maps each task to the index of the teacher that supervises it."""

    def __init__(self, mapping: Mapping[str, int], num_teachers: int, task_ids: Sequence[str]):
        self.mapping = dict(mapping)
        self.num_teachers = num_teachers
        missing = [t for t in task_ids if t not in self.mapping]
        if missing:
            raise ConfigError(f"no teacher routed for tasks {missing}")
        bad = {t: i for t, i in self.mapping.items() if not 0 <= i < num_teachers}
        if bad:
            raise ConfigError(f"routes point at unknown teachers: {bad}")

    @classmethod
    def from_teachers(cls, teachers: Sequence[Teacher], task_ids: Sequence[str]) -> "TeacherRouter":
        """Route every task to the first teacher that was trained on it."""
        mapping = {}
        for i, teacher in enumerate(teachers):
            for t in teacher.trained_tasks:
                mapping.setdefault(t, i)
        return cls({t: mapping[t] for t in task_ids if t in mapping}, len(teachers), task_ids)

    @classmethod
    def single(cls, task_ids: Sequence[str]) -> "TeacherRouter":
        return cls({t: 0 for t in task_ids}, 1, task_ids)


def route(router: TeacherRouter, task_id: str) -> int:
    try:
        return router.mapping[task_id]
    except KeyError:
        raise ConfigError(f"task {task_id!r} has no teacher") from None


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def train_expert(tasks, budget: int, seed: int = 0, settings=None, hidden: Optional[Sequence[int]] = None,
                 on_record=None, **run_kwargs) -> Teacher:
    """Train a policy from scratch (no distillation) and freeze it as a teacher.

    ``settings`` is a :class:`kickstart.actor_learner.RunSettings`; ``hidden``
    overrides its hidden layer widths (e.g. for capacity-limited teachers).
    ``on_record`` sees every metric record; ``run_kwargs`` go to ``run_member``.
    """
    from .actor_learner import RunSettings, run_member, new_member
    from .envs import suite

    task_list = suite(tasks)
    settings = settings or RunSettings()
    settings = settings.replace(mode="scratch", frame_budget=budget)
    if hidden is not None:
        settings = settings.replace(hidden=tuple(hidden))
    member = new_member(0, task_list, settings, seed)
    records = []
    for rec in run_member(member, task_list, settings, seed=seed, **run_kwargs):
        records.append(rec)
        if on_record is not None:
            on_record(rec)
    final = records[-1]
    if not np.all([np.all(np.isfinite(p)) for p in member.net.parameters()]):
        raise ConfigError(f"expert training diverged: {final}")
    best = max((r["mean_return"] for r in records if r["mean_return"] is not None), default=None)
    provenance = {
        "frames": int(member.frames),
        "config_hash": config_hash({"tasks": [t.task_id for t in task_list], "seed": seed,
                                    "settings": settings.as_dict(), "budget": budget}),
        "final_return": final["mean_return"],
        "best_return": best,
        "hidden": list(settings.hidden),
    }
    return Teacher(member.net.frozen(), [t.task_id for t in task_list], provenance)
