import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perddqn import nn
from perddqn.gradcheck import check_network, random_batch, run_gradcheck


def toy_net(rng, sizes=(3, 2, 2)):
    return nn.init_network(rng, sizes)


def zero_net(sizes=(17, 512, 512, 25)):
    return nn.Network([
        nn.LayerParams(np.zeros((o, i)), np.zeros(o)) for i, o in zip(sizes[:-1], sizes[1:])
    ])


# --- init ------------------------------------------------------------------

def test_init_deterministic():
    a = nn.init_network(np.random.default_rng(7))
    b = nn.init_network(np.random.default_rng(7))
    assert a == b
    assert a.sizes == (17, 512, 512, 25)


def test_init_variance_and_biases():
    net = nn.init_network(np.random.default_rng(0))
    var = net.layers[0].weights.var()
    assert abs(var - 2 / 17) / (2 / 17) < 0.10
    assert abs(net.layers[1].weights.var() - 2 / 512) / (2 / 512) < 0.10
    assert all(np.all(l.biases == 0) for l in net.layers)


# --- forward ---------------------------------------------------------------

def test_zero_network_outputs_zero():
    assert np.all(nn.forward(zero_net(), np.ones(17)) == 0)


def test_bias_passthrough():
    net = zero_net()
    net.layers[2].biases[:] = np.arange(25)
    for s in np.random.default_rng(1).uniform(-1, 1, (5, 17)):
        assert np.array_equal(nn.forward(net, s), np.arange(25.0))


def test_toy_network_hand_rolled(rng):
    net = toy_net(rng)
    for l in net.layers:
        l.biases[:] = rng.normal(size=l.biases.shape)
    x = rng.normal(size=3)
    (w1, b1), (w2, b2) = [(l.weights, l.biases) for l in net.layers]
    h = [max(0.0, sum(w1[j][k] * x[k] for k in range(3)) + b1[j]) for j in range(2)]
    out = [sum(w2[j][k] * h[k] for k in range(2)) + b2[j] for j in range(2)]
    assert nn.forward(net, x) == pytest.approx(out, rel=1e-12)


def test_forward_batch_matches_single(rng):
    net = nn.init_network(rng, (17, 16, 16, 25))
    xs = rng.uniform(-1, 1, (6, 17))
    batch = nn.forward(net, xs)
    for i, x in enumerate(xs):
        assert np.allclose(batch[i], nn.forward(net, x), rtol=1e-12, atol=1e-12)


def test_forward_is_pure(rng):
    net = nn.init_network(rng)
    x = rng.uniform(0, 1, 17)
    assert np.array_equal(nn.forward(net, x), nn.forward(net, x))


@pytest.mark.parametrize("bad", [np.ones(16), np.ones((2, 18)), np.full(17, np.nan)])
def test_forward_rejects_malformed(bad):
    with pytest.raises(nn.NetworkError):
        nn.forward(zero_net(), bad)


def test_hidden_activations_nonnegative(rng):
    net = nn.init_network(rng, (17, 32, 32, 25))
    _, masks, acts = nn._forward_cache(net, rng.normal(size=(10, 17)))
    assert all(np.all(a >= 0) for a in acts[1:])


# --- backward --------------------------------------------------------------

def test_zero_residual_zero_gradient(rng):
    net = nn.init_network(rng, (17, 8, 8, 25))
    s = rng.uniform(-1, 1, (5, 17))
    a = rng.integers(25, size=5)
    y = nn.forward(net, s)[np.arange(5), a]
    g, d = nn.backward_weighted(net, s, a, y, np.ones(5))
    assert np.all(d == 0)
    assert g.global_norm() == 0


def test_zero_weights_zero_gradient(rng):
    net = nn.init_network(rng, (17, 8, 8, 25))
    s, a, y, _ = random_batch(rng)
    g, _ = nn.backward_weighted(net, s, a, y * 100, np.zeros(len(a)))
    assert g.global_norm() == 0


def test_only_selected_action_gets_signal(rng):
    net = nn.init_network(rng, (17, 8, 8, 25))
    s, a, y, w = random_batch(rng, batch_size=1)
    g, _ = nn.backward_weighted(net, s, a, y, w + 0.1)
    rows = np.flatnonzero(np.any(g.layers[-1].weights != 0, axis=1))
    assert list(rows) == [a[0]]


def test_finite_difference_small(rng):
    net = nn.init_network(rng, (17, 8, 8, 25))
    err, count = check_network(net, random_batch(rng))
    assert count == 17 * 8 + 8 + 8 * 8 + 8 + 8 * 25 + 25
    assert err < 1e-4


def test_gradcheck_suite_passes():
    assert run_gradcheck(n_networks=5, seed=3).ok()


def test_backward_rejects_negative_weights(rng):
    net = nn.init_network(rng, (17, 8, 8, 25))
    s, a, y, w = random_batch(rng)
    with pytest.raises(nn.NetworkError):
        nn.backward_weighted(net, s, a, y, -w)
    with pytest.raises(nn.NetworkError):
        nn.backward_weighted(net, s[:0], a[:0], y[:0], w[:0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), zero_w=st.booleans())
def test_loss_nonneg_and_zero_iff(seed, zero_w):
    rng = np.random.default_rng(seed)
    net = nn.init_network(rng, (17, 8, 8, 25))
    s, a, y, w = random_batch(rng)
    if zero_w:
        w = np.zeros_like(w)
    _, d = nn.backward_weighted(net, s, a, y, w)
    loss = nn.weighted_loss(d, w)
    assert loss >= 0
    assert (loss == 0) == (zero_w or np.all(d == 0))


# --- sgd / clipping --------------------------------------------------------

def test_sgd_zero_grad_fixed_point(rng):
    net = nn.init_network(rng, (17, 8, 8, 25))
    before = nn.clone_params(net)
    zeros = nn.GradientSet([nn.LayerParams(np.zeros_like(l.weights), np.zeros_like(l.biases))
                            for l in net.layers])
    nn.sgd_step(net, zeros, 0.03)
    assert net == before


def test_sgd_single_weight_exact():
    net = nn.Network([nn.LayerParams(np.array([[0.7]]), np.array([0.0]))])
    g = nn.GradientSet([nn.LayerParams(np.array([[2.5]]), np.array([0.0]))])
    nn.sgd_step(net, g, 0.03)
    assert net.layers[0].weights[0, 0] == 0.7 - 0.03 * 2.5


def test_sgd_shape_mismatch(rng):
    net = nn.init_network(rng, (17, 8, 8, 25))
    other = nn.init_network(rng, (17, 4, 4, 25))
    with pytest.raises(nn.NetworkError):
        nn.sgd_step(net, nn.GradientSet(other.layers), 0.1)


def test_repeated_sgd_decreases_quadratic_loss(rng):
    net = nn.init_network(rng, (17, 8, 8, 25))
    s, a = rng.uniform(0, 1, (1, 17)), np.array([3])
    y, w = np.array([2.0]), np.ones(1)
    losses = []
    for _ in range(30):
        g, d = nn.backward_weighted(net, s, a, y, w)
        losses.append(nn.weighted_loss(d, w))
        nn.sgd_step(net, g, 0.01)
    assert all(b < a_ for a_, b in zip(losses, losses[1:]))


def test_clip_by_global_norm(rng):
    net = nn.init_network(rng, (17, 8, 8, 25))
    s, a, y, w = random_batch(rng)
    g, _ = nn.backward_weighted(net, s, a, y * 1000, w)
    assert g.global_norm() > 10
    clipped = nn.clip_by_global_norm(g, 10.0)
    assert clipped.global_norm() == pytest.approx(10.0)
    assert nn.clip_by_global_norm(g, None) is g
    assert nn.clip_scale(clipped, 20.0) == 1.0


# --- clone / serialization -------------------------------------------------

def test_clone_isolated(rng):
    src = nn.init_network(rng, (17, 16, 16, 25))
    clone = nn.clone_params(src)
    x = rng.uniform(0, 1, 17)
    assert clone == src
    assert np.array_equal(nn.forward(clone, x), nn.forward(src, x))
    out = nn.forward(clone, x)
    src.layers[0].weights += 1.0
    assert np.array_equal(nn.forward(clone, x), out)


def test_save_load_bit_exact(rng):
    net = nn.init_network(rng)
    blob = nn.save_params(net)
    assert blob[:8] == b"PERDDQN1"
    back = nn.load_params(blob)
    assert back == net
    assert nn.save_params(back) == blob


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXXXXXX" + b[8:],
    lambda b: b[:8] + (2).to_bytes(4, "little") + b[12:],
    lambda b: b[:-8],
    lambda b: b + b"\0",
])
def test_load_rejects_corruption(mutate, rng):
    blob = nn.save_params(nn.init_network(rng, (17, 4, 4, 25)))
    with pytest.raises(nn.ParamFormatError):
        nn.load_params(mutate(blob))
