import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, naive_mlp, rel_close
from tabletop_her import neuralcore as nc


def _net(weights, biases, acts):
    return nc.NetworkParams(
        tuple(nc.DenseLayer(np.array(w, float), np.array(b, float), nc.Activation(a))
              for w, b, a in zip(weights, biases, acts))
    )


def _random_net(rng, max_layers=3, max_units=8):
    n_layers = int(rng.integers(1, max_layers + 1))
    sizes = [int(rng.integers(1, max_units + 1)) for _ in range(n_layers + 1)]
    acts = [str(rng.choice(["relu", "tanh", "identity"])) for _ in range(n_layers)]
    net = nc.init_network(sizes, acts, seed=int(rng.integers(1 << 31)))
    # nonzero biases so every code path sees them
    params = [p + (rng.normal(0, 0.3, p.shape) if p.ndim == 1 else 0.0) for p in net.parameters()]
    return net.with_parameters(params)


def _kink_free_input(rng, net, margin=1e-3):
    while True:
        x = rng.normal(0, 1, net.input_size)
        _, (_, pre, _) = nc.forward_trace(net, x)
        if all(np.all(np.abs(z) > margin) for z, l in zip(pre, net.layers) if l.activation is nc.Activation.RELU):
            return x


# -- init_network ------------------------------------------------------------

def test_init_deterministic_by_seed():
    a = nc.init_network([2, 3, 1], ["relu", "identity"], seed=7)
    b = nc.init_network([2, 3, 1], ["relu", "identity"], seed=7)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.tobytes() == pb.tobytes()


def test_init_biases_zero():
    net = nc.init_network([2, 3, 1], ["relu", "identity"], seed=1)
    assert all(np.all(layer.bias == 0.0) for layer in net.layers)


def test_init_fan_in_bound():
    net = nc.init_network([28, 64, 64, 64, 4], ["relu", "relu", "relu", "tanh"], seed=0)
    assert len(net.layers) == 4
    bound = 1 / math.sqrt(28)
    assert bound == pytest.approx(0.18898, abs=1e-5)
    w0 = net.layers[0].weights
    assert w0.shape == (64, 28)
    assert np.abs(w0).max() <= bound
    # a 64x28 uniform draw fills most of the interval
    assert np.abs(w0).max() > 0.95 * bound


def test_init_rejects_mismatched_lists():
    with pytest.raises(nc.ConfigurationError):
        nc.init_network([2, 3, 1], ["relu"], seed=0)
    with pytest.raises(nc.ConfigurationError):
        nc.init_network([2, 0, 1], ["relu", "relu"], seed=0)


def test_shape_chain_enforced():
    l1 = nc.DenseLayer(np.zeros((3, 2)), np.zeros(3), nc.Activation.RELU)
    l2 = nc.DenseLayer(np.zeros((1, 4)), np.zeros(1), nc.Activation.IDENTITY)
    with pytest.raises(nc.ShapeError):
        nc.NetworkParams((l1, l2))


# -- forward -----------------------------------------------------------------

def test_forward_zero_network_is_zero():
    net = _net([np.zeros((2, 3))], [np.zeros(2)], ["identity"])
    assert np.all(nc.forward(net, np.array([1.0, -4.0, 9.0])) == 0.0)


def test_forward_identity_weights():
    net = _net([np.eye(3)], [np.zeros(3)], ["identity"])
    x = np.array([0.3, -2.0, 5.5])
    assert np.array_equal(nc.forward(net, x), x)


def test_forward_tanh_hand_value():
    net = _net([[[2.0]]], [[1.0]], ["tanh"])
    assert nc.forward(net, np.array([0.5]))[0] == pytest.approx(0.96403, abs=1e-5)


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        net = _random_net(rng)
        x = rng.normal(size=net.input_size)
        ref, _ = naive_mlp(
            [l.weights for l in net.layers], [l.bias for l in net.layers],
            [l.activation.value for l in net.layers], x,
        )
        np.testing.assert_allclose(nc.forward(net, x), ref, rtol=1e-12, atol=1e-12)


def test_forward_batch_equals_rows():
    rng = np.random.default_rng(4)
    net = _random_net(rng)
    xs = rng.normal(size=(5, net.input_size))
    batched = nc.forward(net, xs)
    for i in range(5):
        np.testing.assert_allclose(batched[i], nc.forward(net, xs[i]), rtol=1e-13, atol=1e-14)


def test_forward_dimension_mismatch():
    net = nc.init_network([3, 2], ["identity"], seed=0)
    with pytest.raises(nc.ShapeError):
        nc.forward(net, np.zeros(4))


# -- backward ----------------------------------------------------------------

def test_backward_zero_upstream():
    rng = np.random.default_rng(5)
    net = _random_net(rng)
    g = nc.backward(net, rng.normal(size=net.input_size), np.zeros(net.output_size))
    assert all(np.all(p == 0.0) for p in g.parameters())
    assert np.all(g.input_grad == 0.0)


def test_backward_hand_value():
    net = _net([[[3.0]]], [[0.0]], ["identity"])
    g = nc.backward(net, np.array([2.0]), np.array([1.0]))
    assert g.weight_grads[0][0, 0] == 2.0
    assert g.bias_grads[0][0] == 1.0
    assert g.input_grad[0] == 3.0


def test_backward_shape_mismatch():
    net = nc.init_network([3, 2], ["identity"], seed=0)
    with pytest.raises(nc.ShapeError):
        nc.backward(net, np.zeros(3), np.zeros(3))


def check_gradients(net, x, upstream, h=1e-5):
    grads = nc.backward(net, x, upstream)
    params = net.parameters()
    ok = True
    for k, p in enumerate(params):
        def f(val, k=k):
            ps = list(params)
            ps[k] = val
            return float(np.sum(upstream * nc.forward(net.with_parameters(ps), x)))
        ok &= rel_close(grads.parameters()[k], central_difference(f, p, h))
    fin = central_difference(lambda v: float(np.sum(upstream * nc.forward(net, v))), x, h)
    ok &= rel_close(grads.input_grad, fin)
    return ok


def test_backward_matches_finite_differences_100_nets():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        net = _random_net(rng)
        x = _kink_free_input(rng, net)
        upstream = rng.normal(size=net.output_size)
        assert check_gradients(net, x, upstream)


def test_backward_batch_is_sum_of_rows():
    rng = np.random.default_rng(6)
    net = _random_net(rng)
    xs = rng.normal(size=(4, net.input_size))
    ups = rng.normal(size=(4, net.output_size))
    gb = nc.backward(net, xs, ups)
    rows = [nc.backward(net, xs[i], ups[i]) for i in range(4)]
    for k, p in enumerate(gb.parameters()):
        np.testing.assert_allclose(p, sum(r.parameters()[k] for r in rows), rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(gb.input_grad, np.stack([r.input_grad for r in rows]), rtol=1e-12)


# -- adam --------------------------------------------------------------------

def test_adam_zero_gradient_fixed_point():
    net = nc.init_network([2, 3, 1], ["relu", "identity"], seed=0)
    opt = nc.AdamState.for_network(net)
    zero = nc.GradientBundle(
        tuple(np.zeros_like(l.weights) for l in net.layers),
        tuple(np.zeros_like(l.bias) for l in net.layers),
        np.zeros(2),
    )
    new, opt2 = nc.adam_step(net, zero, opt)
    for a, b in zip(net.parameters(), new.parameters()):
        assert np.array_equal(a, b)
    assert opt2.step_count == 1
    assert all(np.all(m == 0) for m in opt2.first_moment)


def test_adam_moments_decay_under_zero_gradient():
    net = _net([[[1.0]]], [[0.0]], ["identity"])
    opt = nc.AdamState((np.array([[0.5]]), np.array([0.2])), (np.array([[0.3]]), np.array([0.1])), 3)
    zero = nc.GradientBundle((np.zeros((1, 1)),), (np.zeros(1),), np.zeros(1))
    _, opt2 = nc.adam_step(net, zero, opt)
    assert opt2.first_moment[0][0, 0] == pytest.approx(0.45)
    assert opt2.second_moment[0][0, 0] == pytest.approx(0.3 * 0.999)


def test_adam_first_step_is_learning_rate():
    net = _net([[[1.0]]], [[0.0]], ["identity"])
    opt = nc.AdamState.for_network(net, learning_rate=0.001)
    g = nc.GradientBundle((np.ones((1, 1)),), (np.ones(1),), np.zeros(1))
    new, opt2 = nc.adam_step(net, g, opt)
    # m_hat = v_hat = 1 at t=1, so the step is lr / (1 + eps)
    assert 1.0 - new.layers[0].weights[0, 0] == pytest.approx(0.001, rel=1e-7)
    assert opt2.step_count == 1


def test_adam_deterministic():
    rng = np.random.default_rng(8)
    net = _random_net(rng)
    x = rng.normal(size=net.input_size)
    g = nc.backward(net, x, np.ones(net.output_size))
    opt = nc.AdamState.for_network(net)
    a, sa = nc.adam_step(net, g, opt)
    b, sb = nc.adam_step(net, g, opt)
    for pa, pb in zip(a.parameters() + list(sa.second_moment), b.parameters() + list(sb.second_moment)):
        assert pa.tobytes() == pb.tobytes()


def test_adam_rejects_non_finite():
    net = _net([[[1.0]]], [[0.0]], ["identity"])
    opt = nc.AdamState.for_network(net)
    g = nc.GradientBundle((np.array([[np.nan]]),), (np.ones(1),), np.zeros(1))
    with pytest.raises(nc.NumericInstabilityError):
        nc.adam_step(net, g, opt)


def test_adam_step_count_increments():
    net = _net([[[1.0]]], [[0.0]], ["identity"])
    opt = nc.AdamState.for_network(net)
    g = nc.GradientBundle((np.ones((1, 1)),), (np.ones(1),), np.zeros(1))
    for t in range(1, 5):
        net, opt = nc.adam_step(net, g, opt)
        assert opt.step_count == t


def test_training_is_bit_reproducible():
    def run():
        net = nc.init_network([3, 8, 8, 1], ["relu", "tanh", "identity"], seed=11)
        opt = nc.AdamState.for_network(net)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(16, 3))
        y = np.sin(x.sum(axis=1, keepdims=True))
        for _ in range(50):
            out, cache = nc.forward_trace(net, x)
            g = nc.backward_trace(net, cache, 2 * (out - y) / len(x))
            net, opt = nc.adam_step(net, g, opt)
        return b"".join(p.tobytes() for p in net.parameters())
    assert run() == run()


# -- serialization -----------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_json_round_trip_is_exact(seed):
    rng = np.random.default_rng(seed)
    net = _random_net(rng)
    text = nc.dumps_network(net)
    back = nc.loads_network(text)
    for a, b in zip(net.parameters(), back.parameters()):
        assert a.tobytes() == b.tobytes()
    assert back.activations == net.activations
    assert nc.dumps_network(back) == text


def test_json_rejects_wrong_version():
    doc = nc.network_to_dict(nc.init_network([2, 1], ["identity"], seed=0))
    doc["version"] = 99
    with pytest.raises(nc.ConfigurationError):
        nc.network_from_dict(doc)
