"""Central finite-difference check of ``nn.backward_weighted``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

SMALL_SIZES = (17, 8, 8, 25)


@dataclass
class GradcheckResult:
    max_rel_error: float
    n_networks: int
    n_entries: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic, numeric, floor: float = 1e-5):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps exact zeros from blowing up."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _loss(net, batch):
    states, actions, targets, weights = batch
    q = nn.forward(net, states)
    d = targets - q[np.arange(len(actions)), actions]
    return float(np.mean(weights * d * d))


def random_batch(rng: np.random.Generator, sizes=SMALL_SIZES, batch_size: int = 8):
    states = rng.uniform(-1.0, 1.0, size=(batch_size, sizes[0]))
    actions = rng.integers(sizes[-1], size=batch_size)
    targets = rng.normal(0.0, 2.0, size=batch_size)
    weights = rng.uniform(0.0, 1.0, size=batch_size)
    return states, actions, targets, weights


def check_network(net: nn.Network, batch, h: float = 1e-6) -> tuple[float, int]:
    grads, _ = nn.backward_weighted(net, *batch)
    worst, count = 0.0, 0
    for layer, glayer in zip(net.layers, grads.layers):
        for param, grad in ((layer.weights, glayer.weights), (layer.biases, glayer.biases)):
            flat, gflat = param.reshape(-1), grad.reshape(-1)
            numeric = np.empty_like(gflat)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = _loss(net, batch)
                flat[k] = orig - h
                down = _loss(net, batch)
                flat[k] = orig
                numeric[k] = (up - down) / (2.0 * h)
            worst = max(worst, float(relative_error(gflat, numeric).max()))
            count += flat.size
    return worst, count


def run_gradcheck(n_networks: int = 20, seed: int = 0, sizes=SMALL_SIZES,
                  batch_size: int = 8, h: float = 1e-6) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    worst, total = 0.0, 0
    for _ in range(n_networks):
        net = nn.init_network(rng, sizes)
        for layer in net.layers:
            layer.biases[:] = rng.normal(0.0, 0.1, size=layer.biases.shape)
        err, count = check_network(net, random_batch(rng, sizes, batch_size), h)
        worst, total = max(worst, err), total + count
    return GradcheckResult(worst, n_networks, total)
