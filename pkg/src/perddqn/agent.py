"""DQN / DDQN learner: epsilon-greedy acting, bootstrap targets, weighted SGD."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import nn
from .replay import Batch, InsufficientDataError, PrioritizedBuffer, UniformBuffer


class Algo(str, Enum):
    DQN = "dqn"
    DDQN = "ddqn"


class ReplayKind(str, Enum):
    UNIFORM = "uniform"
    PER = "per"


@dataclass(frozen=True)
class AgentConfig:
    epsilon: float = 0.05
    gamma: float = 0.99
    lr: float = 0.03
    batch_size: int = 64
    target_sync_every: int = 200
    algo: Algo = Algo.DDQN
    replay_kind: ReplayKind = ReplayKind.PER
    clip_norm: float | None = 10.0
    layer_sizes: tuple[int, ...] = nn.DEFAULT_SIZES

    def __post_init__(self):
        object.__setattr__(self, "algo", Algo(self.algo))
        object.__setattr__(self, "replay_kind", ReplayKind(self.replay_kind))
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.target_sync_every < 1:
            raise ValueError("batch_size and target_sync_every must be >= 1")


class Agent:
    def __init__(self, config: AgentConfig, buffer, rng: np.random.Generator | None = None,
                 net: nn.Network | None = None):
        self.config = config
        self.buffer = buffer
        if net is None:
            net = nn.init_network(rng if rng is not None else np.random.default_rng(0),
                                  config.layer_sizes)
        self.current_net = net
        self.target_net = nn.clone_params(net)
        self.train_steps = 0
        self.n_actions = net.sizes[-1]

    def select_action(self, state, rng: np.random.Generator) -> int:
        if self.config.epsilon > 0 and rng.random() < self.config.epsilon:
            return int(rng.integers(self.n_actions))
        return greedy_action(self.current_net, state)

    def compute_targets_dqn(self, batch: Batch) -> np.ndarray:
        q_next = nn.forward(self.target_net, batch.next_states)
        boot = q_next.max(axis=1)
        return np.where(batch.dones, batch.rewards, batch.rewards + self.config.gamma * boot)

    def compute_targets_ddqn(self, batch: Batch) -> np.ndarray:
        # select with the current net, evaluate with the target net
        best = nn.forward(self.current_net, batch.next_states).argmax(axis=1)
        q_eval = nn.forward(self.target_net, batch.next_states)
        boot = q_eval[np.arange(len(best)), best]
        return np.where(batch.dones, batch.rewards, batch.rewards + self.config.gamma * boot)

    def compute_targets(self, batch: Batch) -> np.ndarray:
        if self.config.algo is Algo.DDQN:
            return self.compute_targets_ddqn(batch)
        return self.compute_targets_dqn(batch)

    def td_errors(self, batch: Batch, targets) -> np.ndarray:
        q = nn.forward(self.current_net, batch.states)
        return np.abs(np.asarray(targets) - q[np.arange(len(batch)), batch.actions])

    def train_step(self, rng: np.random.Generator) -> float:
        cfg = self.config
        if len(self.buffer) < cfg.batch_size:
            raise InsufficientDataError(
                f"replay holds {len(self.buffer)} transitions, batch needs {cfg.batch_size}"
            )
        batch, idx, weights = self.buffer.sample(cfg.batch_size, rng)
        targets = self.compute_targets(batch)
        grads, deltas = nn.backward_weighted(
            self.current_net, batch.states, batch.actions, targets, weights
        )
        loss = nn.weighted_loss(deltas, weights)
        # clipping folded into the step size; same update as sgd on clipped grads
        nn.sgd_step(self.current_net, grads, cfg.lr * nn.clip_scale(grads, cfg.clip_norm))
        if self.buffer.prioritized:
            self.buffer.update_priorities(idx, np.abs(deltas))
        self.train_steps += 1
        if self.train_steps % cfg.target_sync_every == 0:
            self.sync_target()
        return loss

    def sync_target(self) -> None:
        nn.copy_params_into(self.target_net, self.current_net)


def greedy_action(net: nn.Network, state) -> int:
    """Argmax over Q-values; ties go to the lowest index."""
    return int(np.argmax(nn.forward(net, state)))


def make_buffer(config: AgentConfig, capacity: int = 3000, **per_kwargs):
    n_in, n_out = config.layer_sizes[0], config.layer_sizes[-1]
    if config.replay_kind is ReplayKind.PER:
        return PrioritizedBuffer(capacity, state_dim=n_in, n_actions=n_out, **per_kwargs)
    return UniformBuffer(capacity, state_dim=n_in, n_actions=n_out)
