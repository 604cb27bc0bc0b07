import numpy as np
import pytest

from prox_evi import autodiff as ad
from prox_evi.autodiff import Tape, backward
from prox_evi.benchmarks import REGISTRY, get_benchmark
from prox_evi.errors import StateError
from prox_evi.network import (
    BoundaryData,
    MlpNet,
    SurrogateField,
    bind_params,
    eval_lambda,
    eval_raw,
    eval_u,
    evaluate,
    field_jet,
    init_net,
    load_checkpoint,
    save_checkpoint,
)


def test_init_is_deterministic():
    a, b = init_net([2, 7, 3], 42), init_net([2, 7, 3], 42)
    np.testing.assert_array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), init_net([2, 7, 3], 43).flat())


def test_parameter_count_of_the_1d_architecture():
    assert init_net([1, 100, 100, 100, 1], 0).n_params == 20501


def test_init_range():
    net = init_net([3, 50, 20, 4], 1)
    for w, b in zip(net.weights, net.biases):
        bound = 1 / np.sqrt(w.shape[0])
        assert np.all(np.abs(w) < bound) and np.all(np.abs(b) < bound)


@pytest.mark.parametrize("sizes", [[], [3], [2, 0, 1]])
def test_init_rejects_bad_sizes(sizes):
    with pytest.raises(ValueError):
        init_net(sizes, 0)


def test_flat_roundtrip_and_order():
    net = init_net([2, 3, 1], 0)
    theta = net.flat()
    np.testing.assert_array_equal(theta[:6], net.weights[0].ravel())
    np.testing.assert_array_equal(theta[6:9], net.biases[0])
    np.testing.assert_array_equal(net.with_flat(theta).flat(), theta)
    with pytest.raises(ValueError):
        net.with_flat(theta[:-1])


def _constant_net(sizes, out_bias):
    weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    biases[-1] = np.asarray(out_bias, dtype=float)
    return MlpNet(sizes, weights, biases)


def test_zero_weight_net_outputs_biases():
    out = eval_raw(_constant_net([2, 4, 3], [1.0, -2.0, 0.5]), np.array([[0.3, 0.1]]))
    assert [float(o.value[0]) for o in out] == [1.0, -2.0, 0.5]
    for o in out:
        np.testing.assert_array_equal(o.grad, 0.0)
        np.testing.assert_array_equal(o.hess, 0.0)


def test_one_one_one_network():
    net = MlpNet([1, 1, 1], [np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
    out = eval_raw(net, np.array([0.5]))[0]
    assert float(out.value) == pytest.approx(np.tanh(0.5), abs=1e-15)
    assert float(out.grad[0]) == pytest.approx(0.7864477, abs=1e-7)
    assert float(out.hess[0]) == pytest.approx(-0.7268620, abs=1e-7)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        eval_raw(init_net([2, 3, 1], 0), np.zeros((4, 3)))


def test_surrogate_hand_values():
    s = SurrogateField(_constant_net([1, 3, 1], [1.0]), BoundaryData(h=lambda X: X[0] * (1.0 - X[0])))
    u = eval_u(s, np.array([[0.25]]))
    assert (float(u.value[0]), float(u.grad[0][0]), float(u.hess[0][0])) == (0.1875, 0.5, -2.0)
    assert float(eval_u(s, np.array([[0.0]])).value[0]) == 0.0


def test_surrogate_derivatives_match_finite_differences():
    b = get_benchmark("obstacle2d")
    s = b.make_surrogate(init_net([2, 10, 10, 1], 5))
    x = b.domain.sample_interior(20, 1)
    u = eval_u(s, x)
    for i in range(2):
        e = np.zeros(2)
        e[i] = 1e-4
        fd1 = (eval_u(s, x + e).value - eval_u(s, x - e).value) / 2e-4
        e[i] = 1e-3
        fd2 = (eval_u(s, x + e).value - 2 * u.value + eval_u(s, x - e).value) / 1e-6
        np.testing.assert_allclose(u.grad[i], fd1, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(u.hess[i], fd2, rtol=1e-4, atol=1e-5)


def test_clamp_examples():
    outside = SurrogateField(_constant_net([2, 2, 3], [0.0, 3.0, 4.0]), tau_clamp=1.0)
    lam = eval_lambda(outside, np.array([[0.1, 0.2]]))
    np.testing.assert_allclose([float(l.value[0]) for l in lam], [0.6, 0.8], rtol=1e-14)
    inside = SurrogateField(_constant_net([2, 2, 3], [0.0, 0.3, 0.4]), tau_clamp=1.0)
    lam = eval_lambda(inside, np.array([[0.1, 0.2]]))
    assert [float(l.value[0]) for l in lam] == [0.3, 0.4]


def test_unclamped_is_identity_on_outputs():
    net = init_net([2, 5, 3], 2)
    x = np.random.default_rng(0).normal(size=(6, 2))
    raw = eval_raw(net, x)
    lam = eval_lambda(SurrogateField(net), x)
    for a, b in zip(raw[1:], lam):
        np.testing.assert_array_equal(a.value, b.value)
        np.testing.assert_array_equal(a.grad, b.grad)


def test_lambda_requires_multiplier_outputs():
    with pytest.raises(StateError):
        eval_lambda(SurrogateField(init_net([1, 3, 1], 0)), np.array([[0.5]]))


@pytest.mark.parametrize("tau", [1e-3, 0.3, 1.0, 7.5])
def test_clamp_bound_is_exact(tau):
    net = init_net([2, 16, 16, 3], 9)
    net.weights[-1] *= 40.0
    x = np.random.default_rng(1).uniform(-2, 2, size=(10_000, 2))
    lam = eval_lambda(SurrogateField(net, tau_clamp=tau), x)
    mag = np.sqrt(lam[0].value ** 2 + lam[1].value ** 2)
    assert np.max(mag - tau) <= 0.0
    assert np.mean(mag > 0.999 * tau) > 0.1


def test_clamp_jets_match_finite_differences():
    net = init_net([2, 8, 3], 4)
    net.weights[-1] *= 5.0
    s = SurrogateField(net, tau_clamp=0.5)
    x = np.random.default_rng(2).uniform(-1, 1, size=(30, 2))
    lam = eval_lambda(s, x)
    for k in range(2):
        for i in range(2):
            e = np.zeros(2)
            e[i] = 1e-5
            fd = (eval_lambda(s, x + e)[k].value - eval_lambda(s, x - e)[k].value) / 2e-5
            np.testing.assert_allclose(lam[k].grad[i], fd, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_hard_boundary_is_exact(name):
    b = get_benchmark(name)
    if b.contact_segment:
        pts = np.concatenate([b.domain.sample_boundary(side, 250, k).points
                              for k, side in enumerate(("left", "bottom", "top"))])
    else:
        pts = b.domain.sample_boundary("all", 1000, 0).points
    s = b.make_surrogate(init_net(b.layer_sizes(2, 8), 0))
    u = evaluate(s, pts)[0].value
    g = field_jet(b.boundary.g, pts).value
    assert np.max(np.abs(u - g)) < 1e-12


def test_shared_trunk_feeds_both_heads():
    net = init_net([2, 6, 6, 3], 3)
    x = np.random.default_rng(0).uniform(-1, 1, size=(5, 2))
    for head in (0, 1):
        tape = Tape()
        out = eval_raw(net, x, bind_params(net, tape))
        g = backward(tape, ad.sum_(out[head].value))
        first_layer = g[: 2 * 6]
        assert np.any(first_layer != 0.0)


def test_checkpoint_roundtrip(tmp_path):
    net = init_net([2, 5, 4, 3], 8)
    path = tmp_path / "c.bin"
    save_checkpoint(net, path)
    assert path.read_bytes().startswith(b"PROXEVI1 2 5 4 3\n")
    back = load_checkpoint(path)
    assert back.sizes == net.sizes
    np.testing.assert_array_equal(back.flat(), net.flat())


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE 1 1\n" + b"\0" * 16)
    with pytest.raises(ValueError):
        load_checkpoint(path)
    path.write_bytes(b"PROXEVI1 1 1\n" + b"\0" * 8)
    with pytest.raises(ValueError):
        load_checkpoint(path)
