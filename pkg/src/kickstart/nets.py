"""Dense policy/value networks with hand-written backprop and RMSProp.

A network is a tanh MLP trunk ``layer_dims[0] -> ... -> layer_dims[-1]`` with
two linear heads on the trunk output: policy logits and a scalar value. All
arithmetic is float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, NonFiniteError
from .schedules import HyperParams

CHECKPOINT_MAGIC = b"KSRL"
CHECKPOINT_VERSION = 1


@dataclass
class PolicyValueNet:
    layer_dims: List[int]
    num_actions: int
    hidden_weights: List[np.ndarray]
    hidden_biases: List[np.ndarray]
    policy_w: np.ndarray
    policy_b: np.ndarray
    value_w: np.ndarray
    value_b: np.ndarray

    @property
    def trunk_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def num_layers(self) -> int:
        """Layer count used for error reporting: hidden layers + two heads."""
        return len(self.hidden_weights) + 2

    def parameters(self) -> List[np.ndarray]:
        """All parameter arrays in checkpoint order."""
        params = []
        for w, b in zip(self.hidden_weights, self.hidden_biases):
            params += [w, b]
        params += [self.policy_w, self.policy_b, self.value_w, self.value_b]
        return params

    def parameter_layers(self) -> List[int]:
        """Layer index owning each entry of :meth:`parameters`."""
        n = len(self.hidden_weights)
        return [i // 2 for i in range(2 * n)] + [n, n, n + 1, n + 1]

    def copy(self) -> "PolicyValueNet":
        return PolicyValueNet(
            layer_dims=list(self.layer_dims),
            num_actions=self.num_actions,
            hidden_weights=[w.copy() for w in self.hidden_weights],
            hidden_biases=[b.copy() for b in self.hidden_biases],
            policy_w=self.policy_w.copy(),
            policy_b=self.policy_b.copy(),
            value_w=self.value_w.copy(),
            value_b=self.value_b.copy(),
        )

    def frozen(self) -> "PolicyValueNet":
        """Copy whose arrays reject in-place writes."""
        net = self.copy()
        for p in net.parameters():
            p.flags.writeable = False
        return net

    def load_parameters(self, params: Sequence[np.ndarray]) -> None:
        """Overwrite this net's parameters in place from a congruent list."""
        for dst, src in zip(self.parameters(), params):
            dst[...] = src


def _check_dims(layer_dims, num_actions):
    dims = list(layer_dims)
    if not dims or any(int(d) != d or d <= 0 for d in dims):
        raise ConfigError(f"layer_dims must be a non-empty list of positive ints, got {layer_dims!r}")
    if int(num_actions) != num_actions or num_actions < 2:
        raise ConfigError(f"num_actions must be an int >= 2, got {num_actions!r}")
    return [int(d) for d in dims]


def init(layer_dims: Sequence[int], num_actions: int, seed) -> PolicyValueNet:
    """Deterministic fan-in uniform init: weights ~ U(-1/sqrt(n), 1/sqrt(n)), zero biases.

    ``seed`` may be an int or a :class:`numpy.random.SeedSequence`.
    """
    dims = _check_dims(layer_dims, num_actions)
    rng = np.random.default_rng(seed)

    def uniform(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    hidden_w = [uniform(a, b) for a, b in zip(dims[:-1], dims[1:])]
    hidden_b = [np.zeros(b) for b in dims[1:]]
    trunk = dims[-1]
    return PolicyValueNet(
        layer_dims=dims,
        num_actions=int(num_actions),
        hidden_weights=hidden_w,
        hidden_biases=hidden_b,
        policy_w=uniform(trunk, num_actions),
        policy_b=np.zeros(num_actions),
        value_w=uniform(trunk, 1),
        value_b=np.zeros(1),
    )


def zeros_like_net(layer_dims: Sequence[int], num_actions: int) -> PolicyValueNet:
    dims = _check_dims(layer_dims, num_actions)
    return PolicyValueNet(
        layer_dims=dims,
        num_actions=int(num_actions),
        hidden_weights=[np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
        hidden_biases=[np.zeros(b) for b in dims[1:]],
        policy_w=np.zeros((dims[-1], num_actions)),
        policy_b=np.zeros(num_actions),
        value_w=np.zeros((dims[-1], 1)),
        value_b=np.zeros(1),
    )


def _as_batch(net, observation):
    obs = np.asarray(observation, dtype=np.float64)
    single = obs.ndim == 1
    if single:
        obs = obs[None, :]
    if obs.ndim != 2 or obs.shape[1] != net.layer_dims[0]:
        raise ConfigError(
            f"observation shape {np.shape(observation)} does not match input dim {net.layer_dims[0]}"
        )
    return obs, single


def _forward_cached(net, obs):
    acts = [obs]
    h = obs
    for w, b in zip(net.hidden_weights, net.hidden_biases):
        h = np.tanh(h @ w + b)
        acts.append(h)
    logits = h @ net.policy_w + net.policy_b
    values = (h @ net.value_w)[:, 0] + net.value_b[0]
    return logits, values, acts


def forward(net: PolicyValueNet, observation) -> Tuple[np.ndarray, np.ndarray]:
    """Policy logits and value for one observation ``(D,)`` or a batch ``(N, D)``.

    Returns ``(logits (A,), value float)`` for a single observation and
    ``(logits (N, A), values (N,))`` for a batch.
    """
    obs, single = _as_batch(net, observation)
    logits, values, _ = _forward_cached(net, obs)
    if single:
        return logits[0], float(values[0])
    return logits, values


@dataclass
class GradientBuffer:
    """Accumulated d(loss)/d(parameter), congruent with :meth:`PolicyValueNet.parameters`."""

    grads: List[np.ndarray]

    @classmethod
    def zeros_for(cls, net: PolicyValueNet) -> "GradientBuffer":
        return cls([np.zeros_like(p) for p in net.parameters()])

    def zero(self) -> None:
        for g in self.grads:
            g[...] = 0.0

    def add(self, other: "GradientBuffer", scale: float = 1.0) -> None:
        for g, o in zip(self.grads, other.grads):
            g += scale * o

    def scale(self, factor: float) -> None:
        for g in self.grads:
            g *= factor

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.grads])

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.grads)))


def backward(
    net: PolicyValueNet,
    observation,
    d_logits,
    d_value,
    out: Optional[GradientBuffer] = None,
) -> GradientBuffer:
    """Exact gradient of ``sum(logits * d_logits) + sum(value * d_value)``.

    Shapes follow :func:`forward`: ``d_logits`` is ``(A,)`` or ``(N, A)``,
    ``d_value`` a scalar or ``(N,)``. Gradients are accumulated into ``out``
    when given.
    """
    obs, single = _as_batch(net, observation)
    d_logits = np.asarray(d_logits, dtype=np.float64)
    d_value = np.asarray(d_value, dtype=np.float64)
    if single:
        d_logits = d_logits.reshape(1, -1)
        d_value = d_value.reshape(1)
    n = obs.shape[0]
    if d_logits.shape != (n, net.num_actions) or d_value.shape != (n,):
        raise ConfigError(
            f"upstream gradient shapes {d_logits.shape}, {d_value.shape} do not match "
            f"heads ({n}, {net.num_actions}), ({n},)"
        )
    _, _, acts = _forward_cached(net, obs)
    return _backward_from_cache(net, acts, d_logits, d_value, out)


def _backward_from_cache(net, acts, d_logits, d_value, out=None):
    h = acts[-1]
    grads = [None] * (2 * len(net.hidden_weights))
    g_pw = h.T @ d_logits
    g_pb = d_logits.sum(axis=0)
    g_vw = h.T @ d_value[:, None]
    g_vb = np.array([d_value.sum()])
    dh = d_logits @ net.policy_w.T + d_value[:, None] @ net.value_w.T
    for i in range(len(net.hidden_weights) - 1, -1, -1):
        a = acts[i + 1]
        dz = dh * (1.0 - a * a)
        grads[2 * i] = acts[i].T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ net.hidden_weights[i].T
    grads += [g_pw, g_pb, g_vw, g_vb]
    if out is None:
        return GradientBuffer(grads)
    for acc, g in zip(out.grads, grads):
        acc += g
    return out


@dataclass
class RMSProp:
    """RMSProp: ``ms = decay*ms + (1-decay)*g^2``; ``p -= lr * g / (sqrt(ms) + eps)``."""

    learning_rate: float = 5e-4
    decay: float = 0.99
    epsilon: float = 1e-6
    mean_square: Optional[List[np.ndarray]] = field(default=None)

    def copy(self) -> "RMSProp":
        ms = None if self.mean_square is None else [m.copy() for m in self.mean_square]
        return RMSProp(self.learning_rate, self.decay, self.epsilon, ms)


def apply_update(net: PolicyValueNet, buffer: GradientBuffer, optimizer: RMSProp) -> PolicyValueNet:
    """One RMSProp step, in place. Rejects the whole step on any non-finite gradient."""
    params = net.parameters()
    if len(params) != len(buffer.grads) or any(p.shape != g.shape for p, g in zip(params, buffer.grads)):
        raise ConfigError("gradient buffer is not congruent with the network")
    for layer, g in zip(net.parameter_layers(), buffer.grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in layer {layer}", layer=layer)
    if optimizer.mean_square is None:
        optimizer.mean_square = [np.zeros_like(p) for p in params]
    decay = optimizer.decay
    lr = optimizer.learning_rate
    for p, g, ms in zip(params, buffer.grads, optimizer.mean_square):
        ms *= decay
        ms += (1.0 - decay) * g * g
        if lr != 0.0:
            p -= lr * g / (np.sqrt(ms) + optimizer.epsilon)
    for layer, p in zip(net.parameter_layers(), params):
        if not np.all(np.isfinite(p)):
            raise NonFiniteError(f"non-finite parameter in layer {layer}", layer=layer)
    return net


# -- checkpoints ---------------------------------------------------------------


def _hypers_bytes(h: HyperParams) -> bytes:
    rho = list(h.distill_per_teacher)
    return struct.pack(
        f"<dddI{len(rho)}d", h.learning_rate, h.entropy_cost, h.distill_global, len(rho), *rho
    )


def checkpoint_bytes(net: PolicyValueNet, hypers: HyperParams) -> bytes:
    """Serialise ``net`` and ``hypers`` in the ``KSRL`` format.

    Layout (little-endian): magic, u32 version, u32 dim count, u32 dims,
    u32 num_actions, float64 parameters in :meth:`PolicyValueNet.parameters`
    order (row-major), then lr, entropy cost, global distill scale as float64,
    u32 teacher count and one float64 per-teacher scale.
    """
    dims = net.layer_dims
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack(f"<II{len(dims)}II", CHECKPOINT_VERSION, len(dims), *dims, net.num_actions),
    ]
    parts += [np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.parameters()]
    parts.append(_hypers_bytes(hypers))
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes, offset: int = 0) -> Tuple[PolicyValueNet, HyperParams, int]:
    """Inverse of :func:`checkpoint_bytes`; also returns the end offset."""
    try:
        return _parse_checkpoint(data, offset)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"truncated or corrupt checkpoint: {exc}") from None


def _parse_checkpoint(data, offset):
    if data[offset:offset + 4] != CHECKPOINT_MAGIC:
        raise ConfigError("not a KSRL checkpoint (bad magic)")
    pos = offset + 4
    version, ndims = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    dims = list(struct.unpack_from(f"<{ndims}I", data, pos))
    pos += 4 * ndims
    (num_actions,) = struct.unpack_from("<I", data, pos)
    pos += 4
    net = zeros_like_net(dims, num_actions)
    for p in net.parameters():
        n = p.size
        p[...] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(p.shape)
        pos += 8 * n
    lr, ent, alpha, nrho = struct.unpack_from("<dddI", data, pos)
    pos += struct.calcsize("<dddI")
    rho = list(struct.unpack_from(f"<{nrho}d", data, pos))
    pos += 8 * nrho
    return net, HyperParams(lr, ent, alpha, rho), pos


def save_checkpoint(path, net: PolicyValueNet, hypers: HyperParams) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(net, hypers))


def load_checkpoint(path) -> Tuple[PolicyValueNet, HyperParams]:
    with open(path, "rb") as f:
        data = f.read()
    net, hypers, end = checkpoint_from_bytes(data)
    if end != len(data):
        raise ConfigError(f"{path}: {len(data) - end} trailing bytes after checkpoint")
    return net, hypers
