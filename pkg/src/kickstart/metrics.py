"""Windowed returns, capped reference-normalised scores, and crossing-frame lookups."""

from __future__ import annotations

import logging
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from . import envs, nets
from .errors import ConfigError

log = logging.getLogger(__name__)

TABLE_HEADER = "# kickstart reference table v1"


class ScoreWindow:
    """Episode returns stamped with the learner frame count at which they were consumed.

    Only episodes stamped within the trailing ``window`` frames contribute to
    the windowed return; when a task has no episode in the window its last
    known windowed return is reported instead.
    """

    def __init__(self, window: int, task_ids: Sequence[str]):
        if window <= 0:
            raise ConfigError(f"window must be positive, got {window}")
        self.window = int(window)
        self.task_ids = list(task_ids)
        self._episodes: Dict[str, deque] = {t: deque() for t in self.task_ids}
        self._last: Dict[str, Optional[float]] = {t: None for t in self.task_ids}

    def add(self, task_id: str, episode_return: float, frames: int) -> None:
        self._episodes[task_id].append((int(frames), float(episode_return)))

    def windowed_return(self, task_id: str, frames: int) -> Optional[float]:
        ring = self._episodes[task_id]
        cutoff = frames - self.window
        while ring and ring[0][0] <= cutoff:
            ring.popleft()
        if ring:
            self._last[task_id] = sum(r for _, r in ring) / len(ring)
        return self._last[task_id]

    def returns(self, frames: int) -> Dict[str, Optional[float]]:
        return {t: self.windowed_return(t, frames) for t in self.task_ids}

    def episode_count(self, frames: int) -> int:
        self.returns(frames)
        return sum(len(r) for r in self._episodes.values())

    def copy(self) -> "ScoreWindow":
        other = ScoreWindow(self.window, self.task_ids)
        other._episodes = {t: deque(r) for t, r in self._episodes.items()}
        other._last = dict(self._last)
        return other


@dataclass
class ReferenceTable:
    random_score: Dict[str, float]
    reference_score: Dict[str, float]
    flagged: Dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.random_score) != set(self.reference_score):
            raise ConfigError("random and reference scores must cover the same tasks")
        for t in self.random_score:
            self.flagged.setdefault(t, False)
            if not self.flagged[t] and not self.reference_score[t] > self.random_score[t]:
                raise ConfigError(
                    f"reference score for {t!r} ({self.reference_score[t]}) must exceed "
                    f"random score ({self.random_score[t]})"
                )

    @property
    def task_ids(self) -> List[str]:
        return list(self.random_score)

    def save(self, path) -> None:
        lines = [TABLE_HEADER, "task_id\trandom_score\treference_score\tflagged"]
        for t in self.random_score:
            lines.append(f"{t}\t{self.random_score[t]!r}\t{self.reference_score[t]!r}\t{int(self.flagged[t])}")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ReferenceTable":
        with open(path, encoding="utf-8") as f:
            lines = [ln.rstrip("\n") for ln in f]
        if not lines or lines[0] != TABLE_HEADER:
            raise ConfigError(f"{path}: not a v1 reference table")
        rnd, ref, flagged = {}, {}, {}
        for lineno, line in enumerate(lines[2:], start=3):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ConfigError(f"{path}:{lineno}: expected 4 tab-separated columns")
            t = parts[0]
            rnd[t], ref[t], flagged[t] = float(parts[1]), float(parts[2]), parts[3] == "1"
        return cls(rnd, ref, flagged)


def capped_normalised(task_return: float, task_id: str, refs: ReferenceTable) -> float:
    """Maps the random score to 0 and the reference score to 100, capped above at 100."""
    if task_id not in refs.random_score:
        raise ConfigError(f"task {task_id!r} missing from reference table")
    lo, hi = refs.random_score[task_id], refs.reference_score[task_id]
    if not hi > lo:
        raise ConfigError(f"reference for {task_id!r} does not exceed its random score")
    return min(100.0, 100.0 * (task_return - lo) / (hi - lo))


def suite_score(returns: Mapping[str, Optional[float]], refs: ReferenceTable) -> float:
    """Unweighted mean of per-task capped scores; tasks never scored count as 0."""
    scores = [0.0 if r is None else capped_normalised(r, t, refs) for t, r in returns.items()]
    return math.fsum(scores) / len(scores)


def record_score(record: Mapping) -> Optional[float]:
    """Headline score of a metric record: capped suite score if available, else mean return."""
    s = record.get("mean_capped_score")
    return record.get("mean_return") if s is None else s


def frames_to_score(records: Iterable[Mapping], threshold: float, key=record_score) -> Optional[int]:
    """First frame stamp whose score reaches ``threshold``, or None."""
    for rec in records:
        s = key(rec)
        if s is not None and s >= threshold:
            return int(rec["frames"])
    return None


def score_at_frames(records: Sequence[Mapping], frames: int, key=record_score) -> Optional[float]:
    """Score of the last record stamped at or before ``frames``."""
    best = None
    for rec in records:
        if rec["frames"] > frames:
            break
        s = key(rec)
        if s is not None:
            best = s
    return best


def evaluate_policy(net: nets.PolicyValueNet, task: envs.TaskSpec, episodes: int, seed) -> np.ndarray:
    """Returns of ``episodes`` episodes sampling actions from ``softmax(net logits)``."""
    from .losses import softmax

    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    env_ss, act_ss = ss.spawn(2)
    rng = random.Random(envs.episode_seed(act_ss))
    out = np.empty(episodes)
    for i, child in enumerate(env_ss.spawn(episodes)):
        state, obs = envs.reset(task, child)
        while not state.done:
            logits, _ = nets.forward(net, obs)
            obs = envs.step(state, sample_action(softmax(logits), rng)).observation
        out[i] = state.episode_return
    return out


def sample_action(probs: np.ndarray, rng: random.Random) -> int:
    u = rng.random()
    acc = 0.0
    for a, p in enumerate(probs):
        acc += p
        if u < acc:
            return a
    return len(probs) - 1


def calibrate_references(tasks: Sequence[envs.TaskSpec], budget: int, seed: int, settings=None,
                         random_episodes: int = 1000) -> ReferenceTable:
    """Random-policy and per-task expert scores for normalisation.

    Experts are trained from scratch on one task each for ``budget`` frames;
    their final windowed return is the reference. Tasks whose expert does not
    beat random are flagged and logged.
    """
    from .teachers import train_expert
    from .seeding import substream

    if budget <= 0:
        raise ConfigError(f"calibration budget must be positive, got {budget}")
    experts = [
        train_expert([task], budget, seed=int(substream(seed, "calibrate-expert", i).generate_state(1)[0]),
                     settings=settings)
        for i, task in enumerate(tasks)
    ]
    return references_from_experts(tasks, experts, seed, random_episodes)


def references_from_experts(tasks: Sequence[envs.TaskSpec], experts, seed: int,
                            random_episodes: int = 1000) -> ReferenceTable:
    """Reference table from already trained single-task experts (one per task, same order)."""
    from .seeding import substream

    rnd, ref, flagged = {}, {}, {}
    for i, (task, expert) in enumerate(zip(tasks, experts)):
        rnd[task.task_id] = float(np.mean(envs.random_policy_returns(
            task, random_episodes, substream(seed, "calibrate-random", i))))
        ref[task.task_id] = float(expert.provenance["final_return"])
        flagged[task.task_id] = not ref[task.task_id] > rnd[task.task_id]
        if flagged[task.task_id]:
            log.warning("expert on %s failed to beat random (%.3f <= %.3f)",
                        task.task_id, ref[task.task_id], rnd[task.task_id])
    return ReferenceTable(rnd, ref, flagged)
