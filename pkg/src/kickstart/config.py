"""Flat ``key = value`` experiment configuration.

Keys carry a section prefix (``run.batch_size = 8``, ``pbt.population_size = 4``).
Blank lines and ``#`` comments are ignored. Lists are comma separated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from . import envs
from .actor_learner import MODES, RunSettings
from .errors import ConfigError
from .schedules import Schedule

# key -> (attribute, parser, serializer)
_INT, _FLOAT, _STR = int, float, str


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _strs(text: str) -> Tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    tasks: Tuple[str, ...] = envs.KINDS
    grid_size: int = envs.DEFAULT_GRID_SIZE
    episode_limit: int = envs.DEFAULT_EPISODE_LIMIT
    mode: str = "scratch"
    frame_budget: int = 200_000
    hidden: Tuple[int, ...] = (64,)
    unroll_length: int = 20
    batch_size: int = 8
    queue_capacity: int = 16
    actors_per_task: int = 4
    learning_rate: float = 5e-4
    entropy_cost: float = 0.01
    discount: float = 0.95
    value_weight: float = 0.5
    window: int = 50_000
    metrics_interval: int = 10_000
    eval_episodes: int = 10
    checkpoint_interval: int = 0
    deterministic: bool = True
    queue_timeout: float = 30.0
    schedule_kind: str = "constant"
    schedule_value: float = 1.0
    schedule_end_frame: int = 100_000
    schedule_per_teacher: bool = False
    distill_global: float = 1.0
    distill_per_teacher: Tuple[float, ...] = ()
    population_size: int = 1
    pbt_interval: int = 100_000
    pbt_margin: float = 0.10
    pbt_explore_prob: float = 1.0 / 3.0
    pbt_init_spread: float = 1.0
    teacher_paths: Tuple[str, ...] = ()
    reference_table: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"run.mode must be one of {MODES}, got {self.mode!r}")
        if self.mode != "scratch" and not self.teacher_paths:
            raise ConfigError(f"mode {self.mode} requires teachers.paths")
        if self.mode == "kickstart-single" and len(self.teacher_paths) != 1:
            raise ConfigError("kickstart-single takes exactly one teacher")
        if self.population_size < 1:
            raise ConfigError("pbt.population_size must be >= 1")
        for t in self.tasks:
            if t not in envs.KINDS:
                raise ConfigError(f"unknown task {t!r}; known: {envs.KINDS}")
        self.run_settings()

    def schedule(self) -> Schedule:
        return Schedule(self.schedule_kind, self.schedule_value, self.schedule_end_frame,
                        self.schedule_per_teacher)

    def run_settings(self) -> RunSettings:
        per_teacher = self.distill_per_teacher or (1.0,) * max(1, len(self.teacher_paths))
        return RunSettings(
            mode=self.mode, hidden=self.hidden, frame_budget=self.frame_budget,
            unroll_length=self.unroll_length, batch_size=self.batch_size,
            queue_capacity=self.queue_capacity, actors_per_task=self.actors_per_task,
            learning_rate=self.learning_rate, entropy_cost=self.entropy_cost,
            discount=self.discount, value_weight=self.value_weight, schedule=self.schedule(),
            distill_global=self.distill_global, distill_per_teacher=per_teacher,
            window=self.window, metrics_interval=self.metrics_interval,
            eval_episodes=self.eval_episodes, checkpoint_interval=self.checkpoint_interval,
            deterministic=self.deterministic, queue_timeout=self.queue_timeout,
            population_size=self.population_size, pbt_interval=self.pbt_interval,
            pbt_margin=self.pbt_margin, pbt_explore_prob=self.pbt_explore_prob,
            pbt_init_spread=self.pbt_init_spread,
        )

    def suite(self) -> List[envs.TaskSpec]:
        return envs.suite(list(self.tasks), grid_size=self.grid_size, episode_limit=self.episode_limit)

    def replace(self, **changes) -> "ExperimentConfig":
        from dataclasses import replace

        return replace(self, **changes)


KEYS: Dict[str, Tuple[str, object]] = {
    "seed": ("seed", _INT),
    "out": ("out", _STR),
    "suite.tasks": ("tasks", _strs),
    "suite.grid_size": ("grid_size", _INT),
    "suite.episode_limit": ("episode_limit", _INT),
    "run.mode": ("mode", _STR),
    "run.frame_budget": ("frame_budget", _INT),
    "run.hidden": ("hidden", _ints),
    "run.unroll_length": ("unroll_length", _INT),
    "run.batch_size": ("batch_size", _INT),
    "run.queue_capacity": ("queue_capacity", _INT),
    "run.actors_per_task": ("actors_per_task", _INT),
    "run.learning_rate": ("learning_rate", _FLOAT),
    "run.entropy_cost": ("entropy_cost", _FLOAT),
    "run.discount": ("discount", _FLOAT),
    "run.value_weight": ("value_weight", _FLOAT),
    "run.deterministic": ("deterministic", _bool),
    "run.queue_timeout": ("queue_timeout", _FLOAT),
    "metrics.window": ("window", _INT),
    "metrics.interval": ("metrics_interval", _INT),
    "metrics.eval_episodes": ("eval_episodes", _INT),
    "metrics.checkpoint_interval": ("checkpoint_interval", _INT),
    "metrics.reference_table": ("reference_table", _STR),
    "schedule.kind": ("schedule_kind", _STR),
    "schedule.value": ("schedule_value", _FLOAT),
    "schedule.end_frame": ("schedule_end_frame", _INT),
    "schedule.per_teacher": ("schedule_per_teacher", _bool),
    "distill.global": ("distill_global", _FLOAT),
    "distill.per_teacher": ("distill_per_teacher", _floats),
    "pbt.population_size": ("population_size", _INT),
    "pbt.interval": ("pbt_interval", _INT),
    "pbt.margin": ("pbt_margin", _FLOAT),
    "pbt.explore_prob": ("pbt_explore_prob", _FLOAT),
    "pbt.init_spread": ("pbt_init_spread", _FLOAT),
    "teachers.paths": ("teacher_paths", _strs),
}
_ATTR_TO_KEY = {attr: key for key, (attr, _) in KEYS.items()}
assert set(_ATTR_TO_KEY) == {f.name for f in fields(ExperimentConfig)}


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {}
    seen: Dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        attr, parse = KEYS[key]
        try:
            values[attr] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"{path}: config is not valid UTF-8") from None
    return parse_config_text(text, str(path))


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for key, (attr, _) in KEYS.items():
        value = getattr(cfg, attr)
        if value == () or value == "":
            continue
        lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"
