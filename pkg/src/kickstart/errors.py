"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, shapes, or task definitions."""


class NonFiniteError(FloatingPointError):
    """A gradient, loss, or parameter became NaN or infinite.

    ``layer`` is the offending layer index when known (hidden layers first,
    then the policy head, then the value head).
    """

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class EpisodeOver(RuntimeError):
    """``step`` was called on a terminal environment state."""


class QueueTimeout(TimeoutError):
    """Actor starvation or queue deadlock in the actor-learner pipeline."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats or {}
