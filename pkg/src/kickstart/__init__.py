"""Kickstarting deep RL at desk scale.

A numpy actor-critic with V-trace, a toy multi-task gridworld suite, teacher
distillation with scheduled weights, and Population Based Training.
"""

from .errors import ConfigError, EpisodeOver, NonFiniteError, QueueTimeout

__version__ = "0.1.0"

__all__ = ["ConfigError", "EpisodeOver", "NonFiniteError", "QueueTimeout", "__version__"]
