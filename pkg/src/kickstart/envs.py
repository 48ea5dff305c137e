"""Seedable multi-task gridworld suite.

Every task shares one grid geometry, the same five actions and the same
observation encoding (three flattened one-hot planes: agent, objects, walls),
so a single policy head serves the whole suite. Tasks differ in what the
objects are and how they pay:

* ``sparse-goal``: one static goal; stepping onto it pays once and ends the episode.
* ``dense-forage``: several static items; ``collect`` on an item pays and respawns it.
* ``tag-K``: K targets that random-walk one cell per tick; ``tag`` pays for every
  target within Manhattan distance 1 and respawns it away from the agent.

The outer ring of the grid is wall; extra interior walls can be listed per task.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, EpisodeOver

UP, DOWN, LEFT, RIGHT, TAG = range(5)
NUM_ACTIONS = 5
ACTION_NAMES = ("up", "down", "left", "right", "tag")
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))

KINDS = ("sparse-goal", "dense-forage", "tag-1", "tag-3")
DEFAULT_REWARDS = {
    "sparse-goal": {"goal": 10.0},
    "dense-forage": {"item": 1.0},
    "tag-1": {"tag": 1.0},
    "tag-3": {"tag": 1.0},
}
DEFAULT_GRID_SIZE = 9
DEFAULT_EPISODE_LIMIT = 60
DEFAULT_FORAGE_ITEMS = 3


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    grid_size: int = DEFAULT_GRID_SIZE
    kind: str = "sparse-goal"
    episode_limit: int = DEFAULT_EPISODE_LIMIT
    reward_structure: Dict[str, float] = field(default_factory=dict)
    num_objects: int = 0
    walls: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.grid_size < 3:
            raise ConfigError(f"grid_size must be >= 3, got {self.grid_size}")
        if self.episode_limit <= 0:
            raise ConfigError(f"episode_limit must be positive, got {self.episode_limit}")
        rewards = dict(DEFAULT_REWARDS[self.kind])
        rewards.update(self.reward_structure)
        if not all(np.isfinite(v) for v in rewards.values()):
            raise ConfigError("reward values must be finite")
        object.__setattr__(self, "reward_structure", rewards)
        expected = {"sparse-goal": 1, "tag-1": 1, "tag-3": 3}.get(self.kind)
        n = self.num_objects or expected or DEFAULT_FORAGE_ITEMS
        if expected is not None and n != expected:
            raise ConfigError(f"{self.kind} needs exactly {expected} objects, got {n}")
        object.__setattr__(self, "num_objects", int(n))
        walls = tuple(sorted({(int(r), int(c)) for r, c in self.walls}))
        object.__setattr__(self, "walls", walls)
        if len(legal_cells(self)) < self.num_objects + 2:
            raise ConfigError(f"task {self.task_id!r} has too few free cells")

    @property
    def obs_dim(self) -> int:
        return 3 * self.grid_size * self.grid_size

    @property
    def max_step_reward(self) -> float:
        """Largest reward a single step can pay."""
        r = max(self.reward_structure.values())
        return r * self.num_objects if self.kind.startswith("tag") else r


def legal_cells(task: TaskSpec) -> List[Tuple[int, int]]:
    """Interior cells that are not walls, in row-major order."""
    n = task.grid_size
    walls = set(task.walls)
    return [(r, c) for r in range(1, n - 1) for c in range(1, n - 1) if (r, c) not in walls]


def _wall_plane(task):
    n = task.grid_size
    plane = np.zeros((n, n))
    plane[0, :] = plane[-1, :] = plane[:, 0] = plane[:, -1] = 1.0
    for r, c in task.walls:
        plane[r, c] = 1.0
    return plane.ravel()


@dataclass
class EnvState:
    task: TaskSpec
    agent: Tuple[int, int]
    objects: List[Tuple[int, int]]
    rng: random.Random
    steps: int = 0
    episode_return: float = 0.0
    done: bool = False
    _blocked: frozenset = frozenset()
    _legal: Tuple[Tuple[int, int], ...] = ()
    _base_obs: Optional[np.ndarray] = None


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool


def episode_seed(seed) -> int:
    """Derive the per-episode environment stream from a reset seed.

    Accepts ints or :class:`numpy.random.SeedSequence` so callers can pass
    named sub-streams.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def reset(task: TaskSpec, seed) -> Tuple[EnvState, np.ndarray]:
    if not isinstance(task, TaskSpec):
        raise ConfigError(f"expected a TaskSpec, got {type(task).__name__}")
    rng = random.Random(episode_seed(seed))
    legal = tuple(legal_cells(task))
    n = task.grid_size
    blocked = frozenset(
        [(r, c) for r in range(n) for c in range(n) if r in (0, n - 1) or c in (0, n - 1)]
        + list(task.walls)
    )
    # objects first so the goal marginal is exactly uniform over legal cells
    cells = list(legal)
    objects = []
    for _ in range(task.num_objects):
        cell = cells.pop(rng.randrange(len(cells)))
        objects.append(cell)
    agent = cells[rng.randrange(len(cells))]
    state = EnvState(task, agent, objects, rng, _blocked=blocked, _legal=legal, _base_obs=_wall_plane(task))
    return state, observe(state)


def reset_in_place(state: EnvState) -> None:
    """Start a new episode on ``state``, seeded from the state's own stream."""
    fresh, _ = reset(state.task, state.rng.getrandbits(63))
    state.__dict__.update(fresh.__dict__)


def observe(state: EnvState) -> np.ndarray:
    task = state.task
    n = task.grid_size
    nn = n * n
    obs = np.zeros(3 * nn)
    obs[2 * nn:] = state._base_obs
    obs[state.agent[0] * n + state.agent[1]] = 1.0
    for r, c in state.objects:
        obs[nn + r * n + c] = 1.0
    return obs


def _free_cell(state, avoid):
    while True:
        cell = state._legal[state.rng.randrange(len(state._legal))]
        if cell not in avoid:
            return cell


def step(state: EnvState, action: int) -> StepResult:
    """Advance ``state`` in place by one action."""
    if state.done:
        raise EpisodeOver("step called on a terminal state; reset first")
    if not (isinstance(action, (int, np.integer)) and 0 <= action < NUM_ACTIONS):
        raise ValueError(f"action must be an int in [0, {NUM_ACTIONS}), got {action!r}")
    task = state.task
    kind = task.kind
    reward = 0.0
    terminal = False
    if action != TAG:
        dr, dc = _MOVES[action]
        nxt = (state.agent[0] + dr, state.agent[1] + dc)
        if nxt not in state._blocked:
            state.agent = nxt
        if kind == "sparse-goal" and state.agent == state.objects[0]:
            reward = task.reward_structure["goal"]
            terminal = True
    elif kind == "dense-forage":
        if state.agent in state.objects:
            i = state.objects.index(state.agent)
            reward = task.reward_structure["item"]
            state.objects[i] = _free_cell(state, set(state.objects) | {state.agent})
    elif kind.startswith("tag"):
        ar, ac = state.agent
        for i, (r, c) in enumerate(state.objects):
            if abs(r - ar) + abs(c - ac) <= 1:
                reward += task.reward_structure["tag"]
                state.objects[i] = _respawn_target(state)

    if kind.startswith("tag"):
        for i, (r, c) in enumerate(state.objects):
            dr, dc = _MOVES[state.rng.randrange(4)]
            nxt = (r + dr, c + dc)
            if nxt not in state._blocked:
                state.objects[i] = nxt

    state.steps += 1
    state.episode_return += reward
    if state.steps >= task.episode_limit:
        terminal = True
    state.done = terminal
    return StepResult(observe(state), reward, terminal)


def _respawn_target(state):
    ar, ac = state.agent
    while True:
        r, c = state._legal[state.rng.randrange(len(state._legal))]
        if abs(r - ar) + abs(c - ac) >= 2:
            return (r, c)


def make_task(kind: str, task_id: Optional[str] = None, **overrides) -> TaskSpec:
    return TaskSpec(task_id=task_id or kind, kind=kind, **overrides)


def suite(tasks: Optional[Sequence] = None, grid_size: int = DEFAULT_GRID_SIZE,
          episode_limit: int = DEFAULT_EPISODE_LIMIT) -> List[TaskSpec]:
    """Build a task suite.

    ``tasks`` lists kinds (strings) or ready :class:`TaskSpec` objects; the
    default is all four kinds. Order is preserved and ids must be unique.
    """
    if tasks is None:
        tasks = list(KINDS)
    if len(tasks) == 0:
        raise ConfigError("a suite needs at least one task")
    specs = []
    for t in tasks:
        if isinstance(t, TaskSpec):
            specs.append(t)
        else:
            specs.append(make_task(str(t), grid_size=grid_size, episode_limit=episode_limit))
    ids = [s.task_id for s in specs]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ConfigError(f"duplicate task ids in suite: {dupes}")
    dims = {s.obs_dim for s in specs}
    if len(dims) != 1:
        raise ConfigError(f"suite tasks disagree on observation size: {sorted(dims)}")
    return specs


def random_policy_returns(task: TaskSpec, episodes: int, seed) -> np.ndarray:
    """Returns of a uniform-random policy; the random baseline of the reference table."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    env_ss, act_ss = ss.spawn(2)
    act_rng = random.Random(episode_seed(act_ss))
    out = np.empty(episodes)
    for i, child in enumerate(env_ss.spawn(episodes)):
        state, _ = reset(task, child)
        while not state.done:
            step(state, act_rng.randrange(NUM_ACTIONS))
        out[i] = state.episode_return
    return out
