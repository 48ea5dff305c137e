"""Desk-scale training experiments behind acceptance criteria 5-9.

Results are cached per process so criteria that share runs (6, 7, 8) train
each configuration once.
"""

from __future__ import annotations

import functools
import statistics
from typing import List, Optional, Sequence

import numpy as np

from kickstart import envs, metrics
from kickstart.actor_learner import RunSettings, new_member, run_member, run_population
from kickstart.metrics import ReferenceTable
from kickstart.schedules import Schedule
from kickstart.teachers import Teacher, train_expert

BASE = RunSettings(learning_rate=3e-3, window=10_000, metrics_interval=5_000, hidden=(64,))
EVAL_EPISODES = 1000


def median(xs):
    return statistics.median(xs)


def frames_to_threshold(stream, threshold: float) -> Optional[int]:
    """Consume ``stream`` until a window record reaches ``threshold``; return its frame stamp."""
    for rec in stream:
        if rec["source"] == "window" and metrics.record_score(rec) >= threshold:
            return rec["frames"]
    return None


def final_window_score(records) -> float:
    return metrics.record_score([r for r in records if r["source"] == "window"][-1])


def teacher_return(teacher: Teacher, task: envs.TaskSpec, seed: int = 12345) -> float:
    return float(np.mean(metrics.evaluate_policy(teacher.net, task, EVAL_EPISODES, seed)))


def run(tasks, settings: RunSettings, seed: int, teachers: Sequence[Teacher] = (), refs=None):
    member = new_member(0, tasks, settings, seed, len(teachers))
    return run_member(member, tasks, settings, seed, teachers=teachers, refs=refs)


# -- criterion 5 ------------------------------------------------------------------

SPARSE = envs.make_task("sparse-goal")
C5_TEACHER_BUDGET = 600_000
C5_STUDENT_CAP = 600_000
C5_SEEDS = range(5)


@functools.lru_cache(maxsize=None)
def c5_teacher() -> Teacher:
    return train_expert([SPARSE], C5_TEACHER_BUDGET, seed=100, settings=BASE)


def criterion5():
    teacher = c5_teacher()
    t_ret = teacher_return(teacher, SPARSE)
    threshold = 0.9 * t_ret
    scratch, kick = [], []
    for seed in C5_SEEDS:
        s = BASE.replace(frame_budget=C5_STUDENT_CAP)
        scratch.append(frames_to_threshold(run([SPARSE], s, seed), threshold))
        k = s.replace(mode="kickstart-single", schedule=Schedule("linear", 1.0, 200_000))
        kick.append(frames_to_threshold(run([SPARSE], k, seed, [teacher]), threshold))
    # runs that never cross count as the cap (conservative for the ratio's numerator)
    cap = C5_STUDENT_CAP
    fs = [cap if f is None else f for f in scratch]
    fk = [cap * 10 if f is None else f for f in kick]
    return {"teacher_return": t_ret, "threshold": threshold, "scratch": scratch, "kickstart": kick,
            "ratio": median(fk) / median(fs)}


# -- criteria 6, 7, 8: capacity-limited teacher on tag-3 -------------------------

TAG3 = envs.make_task("tag-3")
C678 = BASE.replace(window=20_000, metrics_interval=100_000)
C678_TEACHER_BUDGET = 1_200_000
C678_TEACHER_HIDDEN = ()  # linear policy: the capacity limit
C678_STUDENT_BUDGET = 800_000
C678_LINEAR_END = 400_000
C678_PBT_POPULATION = 4
C678_PBT_INTERVAL = 100_000
C678_PBT_INIT_SPREAD = 10.0


@functools.lru_cache(maxsize=None)
def c678_teacher() -> Teacher:
    return train_expert([TAG3], C678_TEACHER_BUDGET, seed=100, settings=C678, hidden=C678_TEACHER_HIDDEN)


@functools.lru_cache(maxsize=None)
def c678_teacher_return() -> float:
    return teacher_return(c678_teacher(), TAG3)


def _student(mode: str, schedule: Schedule) -> RunSettings:
    return C678.replace(mode=mode, schedule=schedule, frame_budget=C678_STUDENT_BUDGET)


@functools.lru_cache(maxsize=None)
def c678_final(kind: str, seed: int) -> float:
    """Final windowed return of one student run; ``kind`` is linear, constant or distill."""
    settings = {
        "linear": _student("kickstart-single", Schedule("linear", 1.0, C678_LINEAR_END)),
        "constant": _student("kickstart-single", Schedule("constant", 1.0)),
        "distill": _student("distill-only", Schedule("constant", 1.0)),
    }[kind]
    return final_window_score(list(run([TAG3], settings, seed, [c678_teacher()])))


@functools.lru_cache(maxsize=None)
def c678_pbt_final(seed: int) -> float:
    """Mean final windowed return of the top-3 members of a PBT population."""
    settings = _student("kickstart-single", Schedule("pbt")).replace(
        population_size=C678_PBT_POPULATION, pbt_interval=C678_PBT_INTERVAL,
        pbt_init_spread=C678_PBT_INIT_SPREAD)
    last = {}
    for rec in run_population([TAG3], settings, seed, teachers=[c678_teacher()]):
        if rec["source"] == "window":
            last[rec["member_id"]] = metrics.record_score(rec)
    return float(np.mean(sorted(last.values(), reverse=True)[:3]))


def c678_medians(kind: str, seeds: Sequence[int]) -> List[float]:
    if kind == "pbt":
        return [c678_pbt_final(s) for s in seeds]
    return [c678_final(kind, s) for s in seeds]


# -- criterion 9: multi-teacher transfer to tag-1 --------------------------------

C9_GRID, C9_LIMIT = 13, 80
TAG1_BIG = envs.make_task("tag-1", grid_size=C9_GRID, episode_limit=C9_LIMIT)
TAG3_BIG = envs.make_task("tag-3", grid_size=C9_GRID, episode_limit=C9_LIMIT)
C9 = BASE.replace(window=20_000, metrics_interval=50_000)
C9_EXPERT_BUDGETS = (2_500_000, 2_000_000)
C9_EXPERT_SEEDS = (201, 203)
C9_STUDENT_BUDGET = 450_000
C9_LAMBDA = 3.0
C9_SEEDS = range(5)


@functools.lru_cache(maxsize=None)
def c9_experts():
    return tuple(train_expert([task], budget, seed=seed, settings=C9)
                 for task, budget, seed in zip((TAG1_BIG, TAG3_BIG), C9_EXPERT_BUDGETS, C9_EXPERT_SEEDS))


@functools.lru_cache(maxsize=None)
def c9_refs() -> ReferenceTable:
    return metrics.references_from_experts([TAG1_BIG, TAG3_BIG], list(c9_experts()), seed=0)


def c9_tag1_score(mode: str, seed: int) -> float:
    """Capped normalised tag-1 score of the final window of a multi-task run."""
    tasks = [TAG1_BIG, TAG3_BIG]
    refs = c9_refs()
    if mode == "scratch":
        settings, teachers = C9.replace(frame_budget=C9_STUDENT_BUDGET), []
    else:
        settings = C9.replace(mode="kickstart-multi", schedule=Schedule("constant", C9_LAMBDA),
                              frame_budget=C9_STUDENT_BUDGET)
        teachers = list(c9_experts())
    last = [r for r in run(tasks, settings, seed, teachers, refs) if r["source"] == "window"][-1]
    return metrics.capped_normalised(last["returns"]["tag-1"] or 0.0, "tag-1", refs)
