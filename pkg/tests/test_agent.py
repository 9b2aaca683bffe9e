import numpy as np
import pytest

from perddqn import nn
from perddqn.agent import Agent, AgentConfig, greedy_action, make_buffer
from perddqn.replay import Batch, InsufficientDataError, Transition, UniformBuffer

SMALL = (17, 16, 16, 25)


def small_agent(rng, **kw):
    cfg = AgentConfig(layer_sizes=SMALL, **kw)
    return Agent(cfg, make_buffer(cfg, 256), rng)


def random_batch(rng, n=8, done_frac=0.3):
    s = rng.uniform(0, 1, (n, 17))
    return Batch(s, rng.integers(25, size=n), rng.normal(0, 5, n),
                 rng.uniform(0, 1, (n, 17)), rng.random(n) < done_frac)


def output_bias_net(biases, n_in=17):
    """Zero-weight net whose Q-values are exactly ``biases`` for every state."""
    sizes = (n_in, 4, 4, len(biases))
    net = nn.Network([nn.LayerParams(np.zeros((o, i)), np.zeros(o))
                      for i, o in zip(sizes[:-1], sizes[1:])])
    net.layers[-1].biases[:] = biases
    return net


# --- action selection ------------------------------------------------------

def test_greedy_when_epsilon_zero(rng):
    agent = small_agent(rng, epsilon=0.0)
    s = rng.uniform(0, 1, 17)
    best = int(np.argmax(nn.forward(agent.current_net, s)))
    assert all(agent.select_action(s, rng) == best for _ in range(50))


def test_constructed_argmax():
    q = np.zeros(25)
    q[7] = 3.0
    agent = Agent(AgentConfig(epsilon=0.0), UniformBuffer(8), net=output_bias_net(q))
    assert agent.select_action(np.zeros(17), np.random.default_rng(0)) == 7


def test_ties_break_to_lowest_index():
    q = np.zeros(25)
    q[[4, 9, 20]] = 1.0
    assert greedy_action(output_bias_net(q), np.zeros(17)) == 4


def test_epsilon_one_uniform(rng):
    agent = Agent(AgentConfig(epsilon=1.0), UniformBuffer(8), net=output_bias_net(np.arange(25.0)))
    draws = [agent.select_action(np.zeros(17), rng) for _ in range(100_000)]
    freq = np.bincount(draws, minlength=25) / len(draws)
    assert np.all(np.abs(freq - 1 / 25) <= 0.01)


# --- targets ---------------------------------------------------------------

def test_dqn_terminal_and_myopic(rng):
    agent = small_agent(rng, algo="dqn")
    b = random_batch(rng, done_frac=1.0)
    b.rewards[0] = -100.0
    y = agent.compute_targets_dqn(b)
    assert y[0] == -100.0 and np.array_equal(y, b.rewards)
    myopic = small_agent(rng, gamma=0.0)
    b = random_batch(rng, done_frac=0.0)
    assert np.array_equal(myopic.compute_targets_dqn(b), b.rewards)
    assert np.array_equal(myopic.compute_targets_ddqn(b), b.rewards)


def test_dqn_target_value():
    q = np.zeros(25)
    q[11] = 2.0
    agent = Agent(AgentConfig(gamma=0.99), UniformBuffer(8), net=output_bias_net(q))
    b = Batch(np.zeros((1, 17)), np.array([0]), np.array([1.0]), np.zeros((1, 17)), np.array([False]))
    assert agent.compute_targets_dqn(b)[0] == pytest.approx(2.98, abs=1e-12)


def test_ddqn_equals_dqn_for_identical_nets(rng):
    agent = small_agent(rng)
    b = random_batch(rng, n=200)
    assert np.array_equal(agent.compute_targets_ddqn(b), agent.compute_targets_dqn(b))


def test_ddqn_reads_target_value_at_current_argmax():
    cur = np.zeros(25)
    cur[3] = 5.0
    tgt = np.zeros(25)
    tgt[5], tgt[3] = 10.0, 1.5
    agent = Agent(AgentConfig(gamma=0.9), UniformBuffer(8), net=output_bias_net(cur))
    agent.target_net = output_bias_net(tgt)
    b = Batch(np.zeros((2, 17)), np.array([0, 0]), np.array([1.0, 2.0]), np.zeros((2, 17)),
              np.array([False, True]))
    y = agent.compute_targets_ddqn(b)
    assert y[0] == pytest.approx(1.0 + 0.9 * 1.5)
    assert y[1] == 2.0
    assert agent.compute_targets_dqn(b)[0] == pytest.approx(1.0 + 0.9 * 10.0)


def test_decoupling_bound_random_pairs(rng):
    agent = small_agent(rng)
    agent.target_net = nn.init_network(rng, SMALL)
    b = random_batch(rng, n=500, done_frac=0.0)
    y_dd = agent.compute_targets_ddqn(b)
    y_dqn = agent.compute_targets_dqn(b)
    sel = nn.forward(agent.current_net, b.next_states).argmax(axis=1)
    q_t = nn.forward(agent.target_net, b.next_states)
    assert np.allclose(y_dd, b.rewards + 0.99 * q_t[np.arange(500), sel], rtol=0, atol=1e-12)
    assert np.all(y_dd <= y_dqn + 1e-12)
    assert np.any(y_dd < y_dqn)


# --- td errors -------------------------------------------------------------

def test_td_errors(rng):
    agent = small_agent(rng)
    b = random_batch(rng, n=6)
    q = nn.forward(agent.current_net, b.states)[np.arange(6), b.actions]
    assert np.all(agent.td_errors(b, q) == 0)
    d = agent.td_errors(b, q + np.array([2.0, -2.0, 0, 1, 3, -0.5]))
    assert d == pytest.approx([2.0, 2.0, 0.0, 1.0, 3.0, 0.5])
    assert d.shape == (6,) and np.all(d >= 0)


# --- training --------------------------------------------------------------

def fill(agent, rng, n):
    for _ in range(n):
        agent.buffer.push(Transition(rng.uniform(0, 1, 17), int(rng.integers(25)),
                                     float(rng.normal()), rng.uniform(0, 1, 17), bool(rng.random() < 0.1)))


def test_train_step_guard(rng):
    agent = small_agent(rng, batch_size=32)
    fill(agent, rng, 31)
    before = nn.clone_params(agent.current_net)
    with pytest.raises(InsufficientDataError):
        agent.train_step(rng)
    assert agent.current_net == before and agent.train_steps == 0


@pytest.mark.parametrize("replay", ["uniform", "per"])
@pytest.mark.parametrize("algo", ["dqn", "ddqn"])
def test_sync_law(rng, algo, replay):
    agent = small_agent(rng, batch_size=8, target_sync_every=5, algo=algo, replay_kind=replay)
    fill(agent, rng, 40)
    snap = nn.clone_params(agent.target_net)
    for k in range(1, 11):
        agent.train_step(rng)
        if k % 5 == 0:
            assert agent.target_net == agent.current_net
            snap = nn.clone_params(agent.target_net)
        else:
            assert agent.target_net == snap
            assert agent.target_net != agent.current_net


def test_sync_idempotent_and_equal_outputs(rng):
    agent = small_agent(rng, batch_size=8)
    fill(agent, rng, 20)
    agent.train_step(rng)
    b = random_batch(rng, n=50, done_frac=0.0)
    assert not np.array_equal(agent.compute_targets_ddqn(b), agent.compute_targets_dqn(b))
    agent.sync_target()
    once = nn.clone_params(agent.target_net)
    agent.sync_target()
    assert agent.target_net == once
    s = rng.uniform(0, 1, (10, 17))
    assert np.array_equal(nn.forward(agent.target_net, s), nn.forward(agent.current_net, s))


def test_per_priorities_follow_td_errors(rng):
    agent = small_agent(rng, batch_size=16, replay_kind="per")
    fill(agent, rng, 16)
    agent.train_step(rng)
    leaves = agent.buffer.tree.leaves()[:16]
    assert np.all(leaves > 0)
    assert not np.allclose(leaves, 1.0)


def test_loss_decreases_on_repeated_transition(rng):
    cfg = AgentConfig(layer_sizes=SMALL, lr=0.003, batch_size=4, target_sync_every=10**9,
                      replay_kind="uniform", algo="ddqn")
    agent = Agent(cfg, make_buffer(cfg, 16), rng)
    t = Transition(rng.uniform(0, 1, 17), 3, 1.0, rng.uniform(0, 1, 17), False)
    for _ in range(4):
        agent.buffer.push(t)
    losses = [agent.train_step(rng) for _ in range(50)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_training_deterministic():
    def run():
        rng = np.random.default_rng(42)
        agent = small_agent(rng, batch_size=8, replay_kind="per")
        fill(agent, rng, 64)
        return [agent.train_step(rng) for _ in range(30)]
    assert run() == run()
