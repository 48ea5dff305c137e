"""Decoupled actors and learner.

Actors roll out fixed-length unrolls with an immutable parameter snapshot
(refreshed only between unrolls) and attach the routed teacher's logits. The
learner consumes batches from a bounded FIFO, applies one kickstarting update
per batch and publishes a new snapshot.

Two execution modes run the same logic. ``deterministic=True`` steps actors
round-robin on the calling thread: they fill the queue to capacity, the
learner takes one batch, and so on. That keeps a real but bounded policy lag
and is bit-reproducible. ``deterministic=False`` gives every actor its own
thread.
"""

from __future__ import annotations

import logging
import math
import queue
import random
import threading
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import envs, losses, nets
from .errors import ConfigError, NonFiniteError, QueueTimeout
from .metrics import ReferenceTable, ScoreWindow, evaluate_policy, sample_action, suite_score
from .pbt import DISTILL_BOUNDS, PopulationMember, pbt_round
from .schedules import HyperParams, Schedule, lambdas_at
from .seeding import substream
from .teachers import Teacher, TeacherRouter, route
from .trajectory import Batch, Trajectory

log = logging.getLogger(__name__)

MODES = ("scratch", "kickstart-single", "kickstart-multi", "distill-only")


@dataclass(frozen=True)
class RunSettings:
    """Everything a training run needs besides tasks, teachers and seed."""

    mode: str = "scratch"
    hidden: Tuple[int, ...] = (64,)
    frame_budget: int = 200_000
    unroll_length: int = 20
    batch_size: int = 8
    queue_capacity: int = 16
    actors_per_task: int = 4
    learning_rate: float = 5e-4
    entropy_cost: float = 0.01
    discount: float = 0.95
    value_weight: float = 0.5
    clip_rho: float = 1.0
    clip_c: float = 1.0
    rms_decay: float = 0.99
    rms_epsilon: float = 1e-6
    schedule: Schedule = field(default_factory=Schedule)
    distill_global: float = 1.0
    distill_per_teacher: Tuple[float, ...] = ()
    window: int = 50_000
    metrics_interval: int = 10_000
    eval_episodes: int = 10
    checkpoint_interval: int = 0
    deterministic: bool = True
    queue_timeout: float = 30.0
    population_size: int = 1
    pbt_interval: int = 100_000
    pbt_margin: float = 0.10
    pbt_explore_prob: float = 1.0 / 3.0
    pbt_init_spread: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        for name in ("unroll_length", "batch_size", "queue_capacity", "actors_per_task",
                     "window", "metrics_interval", "pbt_interval"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.frame_budget < 0:
            raise ConfigError("frame_budget must be non-negative")
        if self.batch_size > self.queue_capacity:
            raise ConfigError("batch_size cannot exceed queue_capacity")
        if not 0.0 <= self.discount < 1.0:
            raise ConfigError(f"discount must be in [0, 1), got {self.discount}")
        if not self.pbt_init_spread >= 1.0:
            raise ConfigError(f"pbt_init_spread must be >= 1, got {self.pbt_init_spread}")

    def replace(self, **changes) -> "RunSettings":
        return replace(self, **changes)

    def as_dict(self) -> Dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["distill_per_teacher"] = list(self.distill_per_teacher)
        return d

    @property
    def frames_per_step(self) -> int:
        return self.unroll_length * self.batch_size

    @property
    def uses_teachers(self) -> bool:
        return self.mode != "scratch"


@dataclass(frozen=True)
class Snapshot:
    net: nets.PolicyValueNet
    version: int


class TrajectoryQueue:
    """Bounded FIFO between actors and the learner, with hand-off statistics."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("queue capacity must be >= 1")
        self.capacity = capacity
        self._q: queue.Queue = queue.Queue(maxsize=capacity)
        self.puts = 0
        self.gets = 0
        self.max_size = 0

    def put(self, item, timeout: Optional[float] = None) -> None:
        self._q.put(item, timeout=timeout)
        self.puts += 1
        self.max_size = max(self.max_size, self._q.qsize())

    def put_nowait(self, item) -> None:
        self._q.put_nowait(item)
        self.puts += 1
        self.max_size = max(self.max_size, self._q.qsize())

    def get(self, timeout: Optional[float] = None):
        item = self._q.get(timeout=timeout)
        self.gets += 1
        return item

    def full(self) -> bool:
        return self._q.full()

    def __len__(self) -> int:
        return self._q.qsize()

    def stats(self) -> Dict[str, int]:
        return {"size": len(self), "capacity": self.capacity, "puts": self.puts,
                "gets": self.gets, "max_size": self.max_size}


def _policy_logits(net: nets.PolicyValueNet, obs: np.ndarray) -> np.ndarray:
    h = obs
    for w, b in zip(net.hidden_weights, net.hidden_biases):
        h = np.tanh(h @ w + b)
    return h @ net.policy_w + net.policy_b


def act_unroll(
    env_state: envs.EnvState,
    snapshot: Snapshot,
    teacher: Optional[Teacher],
    unroll_length: int,
    rng: random.Random,
    teacher_index: Optional[int] = None,
    actor_id: int = 0,
) -> Trajectory:
    """Roll ``unroll_length`` steps with the snapshot policy, resetting in place at episode ends."""
    if unroll_length < 1:
        raise ConfigError("unroll_length must be >= 1")
    net = snapshot.net
    T = unroll_length
    obs = envs.observe(env_state)
    observations = np.empty((T + 1, obs.shape[0]))
    behaviour = np.empty((T, net.num_actions))
    actions = np.empty(T, dtype=np.int64)
    rewards = np.empty(T)
    terminals = np.zeros(T, dtype=bool)
    finished = []
    for t in range(T):
        observations[t] = obs
        logits = _policy_logits(net, obs)
        behaviour[t] = logits
        z = np.exp(logits - logits.max())
        a = sample_action(z / z.sum(), rng)
        actions[t] = a
        res = envs.step(env_state, a)
        rewards[t] = res.reward
        if res.terminal:
            terminals[t] = True
            finished.append(env_state.episode_return)
            envs.reset_in_place(env_state)
            obs = envs.observe(env_state)
        else:
            obs = res.observation
    observations[T] = obs
    t_logits = None
    if teacher is not None:
        t_logits, _ = nets.forward(teacher.net, observations[:T])
    return Trajectory(
        task_id=env_state.task.task_id,
        observations=observations,
        actions=actions,
        rewards=rewards,
        behaviour_logits=behaviour,
        terminals=terminals,
        param_version=snapshot.version,
        teacher_logits=t_logits,
        teacher_index=teacher_index if teacher is not None else None,
        actor_id=actor_id,
        episode_returns=finished,
    )


class Actor:
    """Owns one environment instance and its sampling stream."""

    def __init__(self, actor_id: int, task: envs.TaskSpec, env_seed, act_seed,
                 teacher: Optional[Teacher] = None, teacher_index: Optional[int] = None):
        self.actor_id = actor_id
        self.task = task
        self.state, _ = envs.reset(task, env_seed)
        self.rng = random.Random(envs.episode_seed(act_seed))
        self.teacher = teacher
        self.teacher_index = teacher_index

    def unroll(self, snapshot: Snapshot, unroll_length: int) -> Trajectory:
        return act_unroll(self.state, snapshot, self.teacher, unroll_length, self.rng,
                          self.teacher_index, self.actor_id)


def current_lambdas(settings: RunSettings, member: PopulationMember, num_teachers: int) -> List[float]:
    if not settings.uses_teachers:
        return []
    return lambdas_at(settings.schedule, member.frames, member.hypers, num_teachers)


def learner_step(
    trajectories: Sequence[Trajectory],
    member: PopulationMember,
    settings: RunSettings,
    num_teachers: int = 0,
) -> Tuple[losses.LossTerms, List[float], losses.VTraceOutput]:
    """One optimizer update from the mean kickstarting loss of the batch.

    Advances ``member.frames`` by ``B * T``. On a non-finite loss or gradient
    the update is skipped and the error re-raised.
    """
    if not trajectories:
        raise ConfigError("learner_step needs a non-empty batch")
    batch = Batch.from_trajectories(trajectories)
    lambdas = current_lambdas(settings, member, num_teachers)
    hypers = member.hypers
    member.optimizer.learning_rate = hypers.learning_rate
    try:
        terms, grads, vt = losses.kickstart_loss(
            batch, member.net, lambdas, hypers.entropy_cost, settings.value_weight,
            settings.discount, settings.clip_rho, settings.clip_c,
            rl=settings.mode != "distill-only",
        )
        nets.apply_update(member.net, grads, member.optimizer)
    except NonFiniteError as exc:
        log.error("learner step aborted at frame %d: %s (lambdas=%s, lr=%g)",
                  member.frames, exc, lambdas, hypers.learning_rate)
        raise
    member.frames += batch.size * batch.length
    return terms, lambdas, vt


def new_member(member_id: int, tasks: Sequence[envs.TaskSpec], settings: RunSettings, seed: int,
               num_teachers: int = 0) -> PopulationMember:
    obs_dim = tasks[0].obs_dim
    net = nets.init([obs_dim, *settings.hidden], envs.NUM_ACTIONS, substream(seed, "init", member_id))
    rho = list(settings.distill_per_teacher) or [1.0] * max(1, num_teachers)
    if num_teachers and len(rho) != num_teachers:
        raise ConfigError(f"{len(rho)} per-teacher scales given for {num_teachers} teachers")
    hypers = HyperParams(settings.learning_rate, settings.entropy_cost, settings.distill_global, rho)
    opt = nets.RMSProp(settings.learning_rate, settings.rms_decay, settings.rms_epsilon)
    return PopulationMember(member_id, net, opt, hypers,
                            window=ScoreWindow(settings.window, [t.task_id for t in tasks]))


def _mean(values):
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


class MemberRunner:
    """Actor-learner loop for one population member; resumable via :meth:`advance`."""

    def __init__(
        self,
        member: PopulationMember,
        tasks: Sequence[envs.TaskSpec],
        settings: RunSettings,
        seed: int,
        teachers: Sequence[Teacher] = (),
        router: Optional[TeacherRouter] = None,
        refs: Optional[ReferenceTable] = None,
        checkpoint_dir=None,
    ):
        self.member = member
        self.tasks = list(tasks)
        self.settings = settings
        self.seed = seed
        self.teachers = list(teachers)
        self.refs = refs
        self.checkpoint_dir = checkpoint_dir
        task_ids = [t.task_id for t in self.tasks]
        if settings.uses_teachers:
            if not self.teachers:
                raise ConfigError(f"mode {settings.mode} needs at least one teacher")
            if router is None:
                router = (TeacherRouter.single(task_ids) if len(self.teachers) == 1
                          else TeacherRouter.from_teachers(self.teachers, task_ids))
            self.router = router
            for teacher in self.teachers:
                if teacher.net.layer_dims[0] != self.tasks[0].obs_dim:
                    raise ConfigError("teacher input size does not match the suite observation size")
        else:
            self.router = None
        if member.window is None:
            member.window = ScoreWindow(settings.window, task_ids)
        self.actors: List[Actor] = []
        mid = member.member_id
        for ti, task in enumerate(self.tasks):
            t_index = route(self.router, task.task_id) if self.router else None
            teacher = self.teachers[t_index] if t_index is not None else None
            for k in range(settings.actors_per_task):
                aid = len(self.actors)
                self.actors.append(Actor(aid, task, substream(seed, "env", mid, aid),
                                         substream(seed, "actor", mid, aid), teacher, t_index))
        self.queue = TrajectoryQueue(settings.queue_capacity)
        self.version = 0
        self.snapshot = Snapshot(member.net.frozen(), 0)
        self._rr = 0
        self.steps = 0
        self.max_lag = 0
        self.consumed_from: Dict[int, int] = {}
        self.rho_sum = 0.0
        self.rho_count = 0
        self.rho_min = 1.0
        self._pending_terms: List[losses.LossTerms] = []
        self._last_lambdas: List[float] = []
        self._next_metrics = settings.metrics_interval
        self._next_checkpoint = settings.checkpoint_interval or None

    @property
    def num_teachers(self) -> int:
        return len(self.teachers)

    def publish(self) -> None:
        """Publish the member's current parameters as a new immutable snapshot."""
        self.version += 1
        self.snapshot = Snapshot(self.member.net.frozen(), self.version)

    # -- records -----------------------------------------------------------

    def _record(self, returns: Dict[str, Optional[float]], source: str) -> Dict:
        m = self.member
        capped = suite_score(returns, self.refs) if self.refs is not None else None
        # tasks never scored count as 0, as in suite_score
        mean_return = math.fsum(0.0 if r is None else r for r in returns.values()) / len(returns)
        score = capped if capped is not None else mean_return
        m.record_score(m.frames, score)
        if self._pending_terms:
            loss = {
                "policy_gradient": _mean(t.policy_gradient_loss for t in self._pending_terms),
                "value": _mean(t.value_loss for t in self._pending_terms),
                "entropy": _mean(t.entropy_loss for t in self._pending_terms),
                "distill": [float(x) for x in np.mean([t.distill_loss for t in self._pending_terms], axis=0)]
                if self._pending_terms[0].distill_loss.size else [],
                "total": _mean(t.total for t in self._pending_terms),
            }
        else:
            loss = None
        self._pending_terms = []
        return {
            "member_id": m.member_id,
            "frames": m.frames,
            "source": source,
            "returns": returns,
            "mean_return": mean_return,
            "mean_capped_score": capped,
            "lambda": list(current_lambdas(self.settings, m, self.num_teachers)),
            "learning_rate": m.hypers.learning_rate,
            "entropy_cost": m.hypers.entropy_cost,
            "loss": loss,
        }

    def evaluation_record(self) -> Dict:
        returns = {}
        for i, task in enumerate(self.tasks):
            r = evaluate_policy(self.member.net, task, self.settings.eval_episodes,
                                substream(self.seed, "eval", self.member.member_id, i))
            returns[task.task_id] = float(np.mean(r))
        return self._record(returns, "eval")

    def window_record(self) -> Dict:
        return self._record(self.member.window.returns(self.member.frames), "window")

    # -- training ----------------------------------------------------------

    def _consume(self, batch: List[Trajectory]) -> Optional[Dict]:
        for traj in batch:
            lag = self.version - traj.param_version
            if lag < 0:
                raise RuntimeError("trajectory from a future snapshot")
            self.max_lag = max(self.max_lag, lag)
            self.consumed_from[traj.actor_id] = self.consumed_from.get(traj.actor_id, self.steps)
        terms, lambdas, vt = learner_step(batch, self.member, self.settings, self.num_teachers)
        self.steps += 1
        self.rho_sum += float(vt.policy_weights.sum())
        self.rho_count += vt.policy_weights.size
        self.rho_min = min(self.rho_min, float(vt.policy_weights.min()))
        self._pending_terms.append(terms)
        self._last_lambdas = lambdas
        frames = self.member.frames
        for traj in batch:
            for ret in traj.episode_returns:
                self.member.window.add(traj.task_id, ret, frames)
        self.publish()
        if self._next_checkpoint is not None and frames >= self._next_checkpoint:
            self._save_checkpoint()
            while self._next_checkpoint <= frames:
                self._next_checkpoint += self.settings.checkpoint_interval
        if frames >= self._next_metrics:
            while self._next_metrics <= frames:
                self._next_metrics += self.settings.metrics_interval
            return self.window_record()
        return None

    def _save_checkpoint(self) -> None:
        if self.checkpoint_dir is None:
            return
        from pathlib import Path

        path = Path(self.checkpoint_dir) / f"member{self.member.member_id}_{self.member.frames:09d}.ksrl"
        nets.save_checkpoint(path, self.member.net, self.member.hypers)

    def advance(self, target_frames: int) -> Iterator[Dict]:
        """Train until the member has consumed at least ``target_frames`` frames."""
        if self.settings.deterministic:
            yield from self._advance_sequential(target_frames)
        else:
            yield from self._advance_threaded(target_frames)

    def _advance_sequential(self, target_frames):
        B, T = self.settings.batch_size, self.settings.unroll_length
        while self.member.frames < target_frames:
            while not self.queue.full():
                actor = self.actors[self._rr]
                self._rr = (self._rr + 1) % len(self.actors)
                self.queue.put_nowait(actor.unroll(self.snapshot, T))
            rec = self._consume([self.queue.get() for _ in range(B)])
            if rec is not None:
                yield rec

    def _advance_threaded(self, target_frames):
        B, T = self.settings.batch_size, self.settings.unroll_length
        stop = threading.Event()
        errors: List[BaseException] = []

        def work(actor: Actor):
            try:
                while not stop.is_set():
                    traj = actor.unroll(self.snapshot, T)
                    while not stop.is_set():
                        try:
                            self.queue.put(traj, timeout=0.05)
                            break
                        except queue.Full:
                            continue
            except BaseException as exc:  # surfaced by the learner loop
                errors.append(exc)
                stop.set()

        threads = [threading.Thread(target=work, args=(a,), daemon=True) for a in self.actors]
        for th in threads:
            th.start()
        try:
            while self.member.frames < target_frames:
                batch = []
                while len(batch) < B:
                    if errors:
                        raise errors[0]
                    try:
                        batch.append(self.queue.get(timeout=self.settings.queue_timeout))
                    except queue.Empty:
                        raise QueueTimeout(
                            f"no trajectory within {self.settings.queue_timeout}s", self.queue.stats()
                        ) from None
                rec = self._consume(batch)
                if rec is not None:
                    yield rec
        finally:
            stop.set()
            for th in threads:
                th.join()


def run_member(
    member: PopulationMember,
    tasks: Sequence[envs.TaskSpec],
    settings: RunSettings,
    seed: int = 0,
    teachers: Sequence[Teacher] = (),
    router: Optional[TeacherRouter] = None,
    refs: Optional[ReferenceTable] = None,
    checkpoint_dir=None,
    runner_out: Optional[list] = None,
) -> Iterator[Dict]:
    """Train one member to the frame budget, yielding metric records.

    The first record evaluates the initial network; with a zero budget it is
    the only one. The last record is always stamped at the final frame count.
    ``runner_out``, when given, receives the :class:`MemberRunner` for
    inspection.
    """
    runner = MemberRunner(member, tasks, settings, seed, teachers, router, refs, checkpoint_dir)
    if runner_out is not None:
        runner_out.append(runner)
    yield runner.evaluation_record()
    last_frames = member.frames
    for rec in runner.advance(settings.frame_budget):
        last_frames = rec["frames"]
        yield rec
    if member.frames != last_frames:
        yield runner.window_record()
    if checkpoint_dir is not None and settings.checkpoint_interval:
        runner._save_checkpoint()


def spread_initial_distill(members: Sequence[PopulationMember], spread: float, seed) -> None:
    """Draw each member's global distillation scale log-uniformly within a factor ``spread`` of its value."""
    rng = random.Random(envs.episode_seed(seed))
    hi = math.log(spread)
    for m in members:
        alpha = m.hypers.distill_global * math.exp(rng.uniform(-hi, hi))
        m.hypers.distill_global = min(DISTILL_BOUNDS[1], max(DISTILL_BOUNDS[0], alpha))


def run_population(
    tasks: Sequence[envs.TaskSpec],
    settings: RunSettings,
    seed: int = 0,
    teachers: Sequence[Teacher] = (),
    router: Optional[TeacherRouter] = None,
    refs: Optional[ReferenceTable] = None,
    checkpoint_dir=None,
    on_pbt_event=None,
    members_out: Optional[list] = None,
) -> Iterator[Dict]:
    """Train ``settings.population_size`` members with PBT rounds every ``pbt_interval`` frames.

    Members advance one after the other between rounds (deterministic mode)
    or concurrently on worker threads. Distillation scales are only evolved
    when the schedule is ``pbt``.
    """
    n = settings.population_size
    if n < 2:
        raise ConfigError("run_population needs population_size >= 2")
    members = [new_member(i, tasks, settings, seed, len(teachers)) for i in range(n)]
    if settings.schedule.kind == "pbt" and settings.pbt_init_spread > 1.0:
        spread_initial_distill(members, settings.pbt_init_spread, substream(seed, "pbt-init"))
    if members_out is not None:
        members_out.extend(members)
    runners = [MemberRunner(m, tasks, settings, seed, teachers, router, refs, checkpoint_dir) for m in members]
    rng = random.Random(envs.episode_seed(substream(seed, "pbt")))
    for r in runners:
        yield r.evaluation_record()
    boundary = 0
    round_index = 0
    while boundary < settings.frame_budget:
        boundary = min(boundary + settings.pbt_interval, settings.frame_budget)
        if settings.deterministic:
            for r in runners:
                yield from r.advance(boundary)
        else:
            yield from _advance_concurrently(runners, boundary)
        for r in runners:
            yield r.window_record()
        if boundary >= settings.frame_budget:
            break
        round_index += 1

        def event(rec, _round=round_index):
            if on_pbt_event is not None:
                on_pbt_event({"round": _round, **rec})

        pbt_round(members, rng, settings.pbt_margin, settings.pbt_explore_prob,
                  perturb_distill=settings.schedule.kind == "pbt", on_event=event)
        for r in runners:
            r.publish()
    if checkpoint_dir is not None and settings.checkpoint_interval:
        for r in runners:
            r._save_checkpoint()


def _advance_concurrently(runners, boundary):
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=len(runners)) as pool:
        futures = [pool.submit(lambda r=r: list(r.advance(boundary))) for r in runners]
        for f in futures:
            yield from f.result()
