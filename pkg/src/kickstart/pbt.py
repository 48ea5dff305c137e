"""Population Based Training: exploit better peers, explore hyperparameters."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Tuple

from .errors import ConfigError
from .schedules import HyperParams

log = logging.getLogger(__name__)

LR_BOUNDS = (1e-6, 1.0)
ENTROPY_BOUNDS = (0.0, 0.1)
DISTILL_BOUNDS = (0.0, 4.0)
# distillation scales perturbed below this snap to exactly 0 (teaching switched off)
DISTILL_ZERO_SNAP = 1e-3


@dataclass
class PopulationMember:
    """Unit of PBT evolution.

    ``net`` and ``optimizer`` are whatever the trainer uses; PBT only copies
    them. ``window`` holds the episode returns behind ``scores``.
    """

    member_id: int
    net: Any
    optimizer: Any
    hypers: HyperParams
    frames: int = 0
    scores: List[Tuple[int, float]] = field(default_factory=list)
    window: Any = None
    lineage: int = -1

    def __post_init__(self):
        if self.lineage < 0:
            self.lineage = self.member_id

    def latest_score(self) -> Optional[float]:
        return self.scores[-1][1] if self.scores else None

    def record_score(self, frames: int, score: float) -> None:
        if self.scores and frames < self.scores[-1][0]:
            raise ValueError("score history must be stamped in non-decreasing frame order")
        self.scores.append((int(frames), float(score)))


def _copy(obj):
    if obj is None:
        return None
    return obj.copy() if hasattr(obj, "copy") else obj


def significantly_better(peer: float, own: float, margin: float) -> bool:
    return peer > own + margin * abs(own)


def exploit(member: PopulationMember, peer: PopulationMember, margin: float = 0.10) -> bool:
    """Copy net, optimizer state, hyperparameters and score window from a clearly better peer.

    Returns True when the copy happened. The copy is all-or-nothing.
    """
    own, theirs = member.latest_score(), peer.latest_score()
    if own is None or theirs is None:
        raise ValueError("exploit needs at least one windowed score on both members")
    if not significantly_better(theirs, own, margin):
        log.debug("member %d keeps its weights (%.4g vs peer %d %.4g)", member.member_id, own,
                  peer.member_id, theirs)
        return False
    net, opt, hypers, window = _copy(peer.net), _copy(peer.optimizer), peer.hypers.copy(), _copy(peer.window)
    member.net, member.optimizer, member.hypers, member.window = net, opt, hypers, window
    member.lineage = peer.lineage
    member.record_score(max(member.frames, member.scores[-1][0]), theirs)
    log.info("member %d copied member %d (%.4g -> %.4g)", member.member_id, peer.member_id, own, theirs)
    return True


def _perturb(value, bounds, rng, prob):
    if rng.random() >= prob:
        return value, False
    factor = 1.2 if rng.random() < 0.5 else 0.8
    return min(bounds[1], max(bounds[0], value * factor)), True


def explore(hypers: HyperParams, rng: random.Random, prob: float = 1.0 / 3.0,
            perturb_distill: bool = True) -> HyperParams:
    """Independently rescale each hyperparameter by 1.2 or 0.8 with probability ``prob``.

    Values are clipped to their bounds; distillation scales that fall below
    ``DISTILL_ZERO_SNAP`` become exactly 0.
    """
    out = hypers.copy()
    out.learning_rate, _ = _perturb(out.learning_rate, LR_BOUNDS, rng, prob)
    out.entropy_cost, _ = _perturb(out.entropy_cost, ENTROPY_BOUNDS, rng, prob)
    if perturb_distill:
        alpha, _ = _perturb(out.distill_global, DISTILL_BOUNDS, rng, prob)
        out.distill_global = 0.0 if alpha < DISTILL_ZERO_SNAP else alpha
        rho = []
        for r in out.distill_per_teacher:
            r, _ = _perturb(r, DISTILL_BOUNDS, rng, prob)
            rho.append(0.0 if r < DISTILL_ZERO_SNAP else r)
        out.distill_per_teacher = rho
    return out


def pbt_round(
    population: List[PopulationMember],
    rng: random.Random,
    margin: float = 0.10,
    explore_prob: float = 1.0 / 3.0,
    perturb_distill: bool = True,
    on_event: Optional[Callable[[dict], None]] = None,
) -> List[PopulationMember]:
    """One exploit-then-explore pass over the population, in member order.

    Each member is compared with one uniformly drawn other member; explore is
    applied whether or not it copied. ``on_event`` receives one log record per
    member.
    """
    if len(population) < 2:
        raise ConfigError("PBT needs a population of at least 2")
    for i, member in enumerate(population):
        j = rng.randrange(len(population) - 1)
        peer = population[j + (j >= i)]
        copied = exploit(member, peer, margin)
        member.hypers = explore(member.hypers, rng, explore_prob, perturb_distill)
        if on_event is not None:
            on_event({
                "member_id": member.member_id,
                "action": f"copied-from-{peer.member_id}" if copied else "explored",
                "peer_id": peer.member_id,
                "lineage": member.lineage,
                "learning_rate": member.hypers.learning_rate,
                "entropy_cost": member.hypers.entropy_cost,
                "distill_global": member.hypers.distill_global,
                "distill_per_teacher": list(member.hypers.distill_per_teacher),
            })
    return population
