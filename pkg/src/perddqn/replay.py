"""Experience replay: a uniform ring buffer and a sum-tree prioritized buffer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .world import N_ACTIONS, STATE_DIM


class InsufficientDataError(Exception):
    pass


class StaleIndexError(IndexError):
    pass


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.actions)


class SumTree:
    """Array-backed binary tree; leaves hold values, parents hold child sums.

    Node 1 is the root, node ``i`` has children ``2i`` and ``2i+1``, and leaf
    ``k`` lives at ``capacity + k``. ``capacity`` is padded to a power of two.
    """

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("size must be >= 1")
        self.size = size
        cap = 1
        while cap < size:
            cap *= 2
        self.capacity = cap
        self.nodes = np.zeros(2 * cap)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def leaf(self, k: int) -> float:
        return float(self.nodes[self.capacity + k])

    def leaves(self) -> np.ndarray:
        return self.nodes[self.capacity : self.capacity + self.size]

    def update(self, k: int, value: float) -> None:
        if not 0 <= k < self.size:
            raise IndexError(f"leaf {k} out of range [0, {self.size})")
        if not value >= 0:
            raise ValueError(f"leaf value must be non-negative, got {value}")
        i = self.capacity + k
        self.nodes[i] = value
        i //= 2
        while i >= 1:
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1]
            i //= 2

    def update_many(self, ks, values) -> None:
        """Set several leaves, then refresh each touched ancestor once per level.

        With duplicate leaf indices the last value wins, as with repeated ``update``.
        """
        ks = np.asarray(ks, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if ks.size == 0:
            return
        if ks.min() < 0 or ks.max() >= self.size:
            raise IndexError(f"leaf index out of range [0, {self.size})")
        if not (values >= 0).all():
            raise ValueError("leaf values must be non-negative")
        i = self.capacity + ks
        self.nodes[i] = values
        i = np.unique(i // 2)
        while i[0] >= 1:
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1]
            if i[0] == 1:
                break
            i = np.unique(i // 2)

    def find(self, u) -> np.ndarray:
        """Leaf indices whose prefix-sum interval contains each value of ``u``."""
        u = np.array(u, dtype=np.float64, ndmin=1)
        idx = np.ones(u.shape, dtype=np.int64)
        while idx[0] < self.capacity:
            left = 2 * idx
            lv = self.nodes[left]
            go_right = u >= lv
            u = np.where(go_right, u - lv, u)
            idx = np.where(go_right, left + 1, left)
        return idx - self.capacity


class _Ring:
    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def _store(self, t: Transition) -> int:
        if not 0 <= t.action < self.actions_limit:
            raise ValueError(f"action {t.action} out of range")
        k = self.cursor
        self.states[k] = t.state
        self.next_states[k] = t.next_state
        self.actions[k] = t.action
        self.rewards[k] = t.reward
        self.dones[k] = t.done
        self.cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return k

    def batch(self, idx: np.ndarray) -> Batch:
        return Batch(
            self.states[idx], self.actions[idx], self.rewards[idx],
            self.next_states[idx], self.dones[idx],
        )

    def transition(self, k: int) -> Transition:
        return Transition(
            self.states[k].copy(), int(self.actions[k]), float(self.rewards[k]),
            self.next_states[k].copy(), bool(self.dones[k]),
        )

    def _require(self, batch_size: int):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.size < batch_size:
            raise InsufficientDataError(
                f"buffer holds {self.size} transitions, need {batch_size}"
            )


class UniformBuffer(_Ring):
    """FIFO ring with uniform sampling; weights are always 1."""

    prioritized = False

    def __init__(self, capacity: int = 3000, state_dim: int = STATE_DIM, n_actions: int = N_ACTIONS):
        super().__init__(capacity, state_dim)
        self.actions_limit = n_actions

    def push(self, t: Transition) -> None:
        self._store(t)

    def sample(self, batch_size: int, rng: np.random.Generator):
        self._require(batch_size)
        idx = rng.integers(self.size, size=batch_size)
        return self.batch(idx), idx, np.ones(batch_size)

    sample_uniform = sample


class PrioritizedBuffer(_Ring):
    """Proportional prioritized replay over a sum tree.

    Leaves store ``(|delta| + eps)**alpha``. New transitions enter with the
    largest base priority seen so far (1.0 initially). ``beta`` is fixed unless
    ``beta_final`` is given, in which case it grows linearly to ``beta_final``
    over ``beta_anneal_steps`` calls to :meth:`sample`.
    """

    prioritized = True

    def __init__(
        self,
        capacity: int = 3000,
        alpha: float = 0.6,
        eps: float = 1e-3,
        beta: float = 0.1,
        beta_final: float | None = None,
        beta_anneal_steps: int = 100_000,
        stratified: bool = False,
        state_dim: int = STATE_DIM,
        n_actions: int = N_ACTIONS,
    ):
        super().__init__(capacity, state_dim)
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.actions_limit = n_actions
        self.tree = SumTree(capacity)
        self.alpha = alpha
        self.eps = eps
        self.beta0 = beta
        self.beta_final = beta_final
        self.beta_anneal_steps = beta_anneal_steps
        self.stratified = stratified
        self.max_priority = 1.0
        self.sample_calls = 0

    @property
    def beta(self) -> float:
        if self.beta_final is None:
            return self.beta0
        frac = min(1.0, self.sample_calls / max(1, self.beta_anneal_steps))
        return self.beta0 + frac * (self.beta_final - self.beta0)

    def push(self, t: Transition) -> None:
        k = self._store(t)
        self.tree.update(k, self.max_priority**self.alpha)

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves()[: self.size]
        return leaves / self.tree.total

    def sample(self, batch_size: int, rng: np.random.Generator):
        self._require(batch_size)
        total = self.tree.total
        if self.stratified:
            seg = total / batch_size
            u = (np.arange(batch_size) + rng.random(batch_size)) * seg
        else:
            u = rng.random(batch_size) * total
        idx = self.tree.find(u)
        # float drift in the descent can overshoot the live region
        idx = np.minimum(idx, self.size - 1)
        probs = self.tree.nodes[self.tree.capacity + idx] / total
        beta = self.beta
        self.sample_calls += 1
        raw = (self.size * probs) ** (-beta)
        weights = raw / raw.max()
        return self.batch(idx), idx, weights

    def raw_weights(self, idx, beta: float | None = None) -> np.ndarray:
        beta = self.beta if beta is None else beta
        probs = self.tree.nodes[self.tree.capacity + np.asarray(idx)] / self.tree.total
        return (self.size * probs) ** (-beta)

    def update_priorities(self, indices, td_errors) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        td_errors = np.abs(np.asarray(td_errors, dtype=np.float64))
        if indices.shape != td_errors.shape:
            raise ValueError("indices and td_errors must align")
        if indices.size and (indices.min() < 0 or indices.max() >= self.size):
            raise StaleIndexError(f"index out of live range [0, {self.size})")
        if not np.isfinite(td_errors).all():
            raise ValueError("non-finite TD error")
        base = td_errors + self.eps
        self.tree.update_many(indices, base**self.alpha)
        if base.size:
            self.max_priority = max(self.max_priority, float(base.max()))
