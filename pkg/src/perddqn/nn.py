"""Dense ReLU Q-network in float64 numpy with hand-written backprop."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

DEFAULT_SIZES = (17, 512, 512, 25)
MAGIC = b"PERDDQN1"
FORMAT_VERSION = 1


class NetworkError(Exception):
    pass


class ParamFormatError(NetworkError):
    pass


@dataclass
class LayerParams:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)


@dataclass
class Network:
    layers: list[LayerParams]

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.layers[0].weights.shape[1],) + tuple(l.weights.shape[0] for l in self.layers)

    def parameters(self):
        for layer in self.layers:
            yield layer.weights
            yield layer.biases

    def __eq__(self, other):
        if not isinstance(other, Network) or self.sizes != other.sizes:
            return NotImplemented if not isinstance(other, Network) else False
        return all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))


@dataclass
class GradientSet:
    layers: list[LayerParams]

    def global_norm(self) -> float:
        sq = 0.0
        for l in self.layers:
            w, b = l.weights.ravel(), l.biases
            sq += float(np.dot(w, w)) + float(np.dot(b, b))
        return float(np.sqrt(sq))


def init_network(rng: np.random.Generator, sizes=DEFAULT_SIZES) -> Network:
    """He-normal weights (variance 2/fan_in) and zero biases for every layer."""
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        layers.append(LayerParams(w, np.zeros(fan_out)))
    return Network(layers)


def _check_input(net: Network, states) -> np.ndarray:
    x = np.asarray(states, dtype=np.float64)
    n_in = net.layers[0].weights.shape[1]
    if x.shape[-1:] != (n_in,) or x.ndim not in (1, 2):
        raise NetworkError(f"expected input of shape ({n_in},) or (B, {n_in}), got {x.shape}")
    if not np.isfinite(x).all():
        raise NetworkError("non-finite network input")
    return x


def _forward_cache(net: Network, x: np.ndarray):
    """Returns ``(output, masks, activations)``; ``masks[i]`` marks active ReLUs of hidden layer i."""
    masks, acts = [], [x]
    h = x
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        z = h @ layer.weights.T
        z += layer.biases
        if i < last:
            masks.append(z > 0)
            h = np.maximum(z, 0.0, out=z)
            acts.append(h)
        else:
            h = z
    return h, masks, acts


def forward(net: Network, states) -> np.ndarray:
    """Q-values for one state (shape ``(n_in,)``) or a batch ``(B, n_in)``."""
    x = _check_input(net, states)
    out, _, _ = _forward_cache(net, x)
    return out


def backward_weighted(net: Network, states, actions, targets, weights):
    """Gradients of ``mean_i w_i * (y_i - Q(s_i, a_i))**2``.

    Returns ``(grads, deltas)`` with ``deltas = y - Q(s, a)`` (signed).
    """
    x = _check_input(net, states)
    if x.ndim != 2 or x.shape[0] == 0:
        raise NetworkError("batch must be a non-empty 2-D array of states")
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n = x.shape[0]
    if actions.shape != (n,) or targets.shape != (n,) or weights.shape != (n,):
        raise NetworkError("actions, targets and weights must each have one entry per state")
    if not (np.isfinite(targets).all() and np.isfinite(weights).all()):
        raise NetworkError("non-finite targets or weights")
    if (weights < 0).any():
        raise NetworkError("sample weights must be non-negative")

    q, masks, acts = _forward_cache(net, x)
    rows = np.arange(n)
    deltas = targets - q[rows, actions]

    g = np.zeros_like(q)
    g[rows, actions] = -2.0 * weights * deltas / n
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        grads[i] = LayerParams(g.T @ acts[i], g.sum(axis=0))
        if i > 0:
            g = g @ net.layers[i].weights
            g *= masks[i - 1]
    out = GradientSet(grads)
    # a finite norm implies every entry is finite
    if not np.isfinite(out.global_norm()):
        raise NetworkError("non-finite gradient")
    return out, deltas


def weighted_loss(deltas, weights) -> float:
    deltas = np.asarray(deltas, dtype=np.float64)
    return float(np.mean(np.asarray(weights) * deltas**2))


def clip_scale(grads: GradientSet, max_norm: float | None) -> float:
    """Factor that brings the global gradient norm down to ``max_norm`` (1.0 if already below)."""
    if max_norm is None or max_norm <= 0:
        return 1.0
    norm = grads.global_norm()
    return 1.0 if norm <= max_norm else max_norm / norm


def clip_by_global_norm(grads: GradientSet, max_norm: float | None) -> GradientSet:
    scale = clip_scale(grads, max_norm)
    if scale == 1.0:
        return grads
    return GradientSet([LayerParams(l.weights * scale, l.biases * scale) for l in grads.layers])


def sgd_step(net: Network, grads: GradientSet, lr: float) -> Network:
    """In-place ``theta -= lr * grad``; returns ``net`` for chaining."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if len(grads.layers) != len(net.layers):
        raise NetworkError("gradient/network layer count mismatch")
    for layer, g in zip(net.layers, grads.layers):
        if g.weights.shape != layer.weights.shape or g.biases.shape != layer.biases.shape:
            raise NetworkError("gradient/network shape mismatch")
    for layer, g in zip(net.layers, grads.layers):
        layer.weights -= lr * g.weights
        layer.biases -= lr * g.biases
    return net


def clone_params(src: Network) -> Network:
    return Network([LayerParams(l.weights.copy(), l.biases.copy()) for l in src.layers])


def copy_params_into(dst: Network, src: Network) -> None:
    for d, s in zip(dst.layers, src.layers):
        np.copyto(d.weights, s.weights)
        np.copyto(d.biases, s.biases)


def save_params(net: Network) -> bytes:
    """Serialize as magic, version, layer dims, then row-major little-endian f64."""
    sizes = net.sizes
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(sizes)), struct.pack(f"<{len(sizes)}I", *sizes)]
    for layer in net.layers:
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.biases, dtype="<f8").tobytes())
    return b"".join(parts)


def load_params(data: bytes) -> Network:
    if data[: len(MAGIC)] != MAGIC:
        raise ParamFormatError("bad magic: not a parameter file")
    off = len(MAGIC)
    if len(data) < off + 8:
        raise ParamFormatError("truncated header")
    version, n_sizes = struct.unpack_from("<II", data, off)
    off += 8
    if version != FORMAT_VERSION:
        raise ParamFormatError(f"unsupported format version {version}")
    if n_sizes < 2 or len(data) < off + 4 * n_sizes:
        raise ParamFormatError("truncated or invalid layer dimensions")
    sizes = struct.unpack_from(f"<{n_sizes}I", data, off)
    off += 4 * n_sizes
    expected = off + 8 * sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
    if len(data) != expected:
        raise ParamFormatError(f"length mismatch: expected {expected} bytes, got {len(data)}")
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=off)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        layers.append(LayerParams(w.reshape(fan_out, fan_in).astype(np.float64), b.astype(np.float64)))
    return Network(layers)
