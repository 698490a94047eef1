import numpy as np
import pytest

from augflat import nnet
from augflat.nnet import Dense, Model


def central_diff(f, v, h=1e-5):
    v = np.asarray(v, dtype=np.float64)
    cols = []
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        cols.append((np.asarray(f(v + e)) - np.asarray(f(v - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1e-12, np.max(np.abs(b)))


def straight_line_mlp(params, x, sizes):
    """Independent evaluator of a relu MLP with biases, layer-major layout."""
    pos = 0
    a = x
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        w = params[pos:pos + n_in * n_out].reshape(n_out, n_in)
        pos += n_in * n_out
        b = params[pos:pos + n_out]
        pos += n_out
        z = np.array([sum(w[r, k] * a[k] for k in range(n_in)) + b[r] for r in range(n_out)])
        a = z if i == len(sizes) - 2 else np.where(z > 0, z, 0.0)
    return a


def test_zero_params_give_zero_logits():
    m = Model.mlp(5, [4], 3)
    out = nnet.forward(m, np.zeros(m.param_count), np.arange(5.0))
    assert np.all(out == 0)


def test_linear_dot_product():
    m = Model.linear(2, 1, bias=False)
    assert nnet.forward(m, np.array([1.0, 2.0]), np.array([3.0, 4.0]))[0] == 11.0


def test_mlp_matches_independent_evaluator():
    m = Model.mlp(4, [5], 3)
    p = m.init_params(0)
    x = np.array([0.3, -1.2, 0.8, 0.1])
    np.testing.assert_allclose(nnet.forward(m, p, x), straight_line_mlp(p, x, [4, 5, 3]),
                               rtol=1e-12, atol=1e-12)


def test_forward_is_pure():
    m = Model.mlp(6, [7, 5], 3)
    p = m.init_params(3)
    x = np.random.default_rng(1).normal(size=(4, 6))
    a, b = nnet.forward(m, p, x), nnet.forward(m, p, x)
    assert a.tobytes() == b.tobytes()


def test_forward_rejects_bad_inputs():
    m = Model.mlp(3, [2], 2)
    p = m.init_params(0)
    with pytest.raises(ValueError):
        nnet.forward(m, p, np.zeros(4))
    with pytest.raises(ValueError):
        nnet.forward(m, p, np.array([0.0, np.nan, 1.0]))
    with pytest.raises(ValueError):
        nnet.forward(m, p[:-1], np.zeros(3))


def test_losses_at_known_points():
    y = np.array([2])
    assert nnet.loss(np.eye(4)[2][None], y, "mse") == 0.0
    assert nnet.loss(np.zeros((1, 10)), np.array([7]), "ce") == pytest.approx(np.log(10), abs=1e-12)


@pytest.mark.parametrize("kind", ["ce", "mse"])
def test_loss_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(1, 5))
    y = np.array([3])
    g = nnet.loss_grad_logits(logits, y, kind)[0]
    fd = central_diff(lambda z: nnet.loss(z[None], y, kind), logits[0], h=1e-6)
    assert rel_err(g, fd) <= 1e-6


def test_gradient_zero_at_exact_fit():
    m = Model.linear(2, 2, bias=False)
    p = np.eye(2).ravel()
    x = np.eye(2)
    g = nnet.grad_params(m, p, x, np.array([0, 1]), "mse")
    assert np.all(g == 0)


def test_gradient_of_one_parameter_quadratic():
    # single linear weight, input 1, MSE against target 0 with c=1: loss = theta^2
    m = Model.linear(1, 1, bias=False)
    theta = np.array([1.7])
    g = nnet.grad_params(m, theta, np.array([[1.0]]), np.array([[0.0]]), "mse")
    assert g[0] == pytest.approx(2 * 1.0 * 1.7)


@pytest.mark.parametrize("act", ["relu", "tanh"])
@pytest.mark.parametrize("kind", ["ce", "mse"])
def test_param_gradient_matches_finite_differences(act, kind):
    m = Model.mlp(4, [6, 5], 3, act)
    p = m.init_params(1)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(7, 4))
    y = rng.integers(0, 3, size=7)
    g = nnet.grad_params(m, p, x, y, kind)
    fd = central_diff(lambda q: nnet.risk(m, q, x, y, kind), p)
    assert rel_err(g, fd) <= 1e-5


def test_batch_gradient_is_mean_of_per_sample():
    m = Model.mlp(4, [5], 3)
    p = m.init_params(4)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, size=6)
    per = np.mean([nnet.grad_params(m, p, x[i:i + 1], y[i:i + 1]) for i in range(6)], axis=0)
    np.testing.assert_allclose(nnet.grad_params(m, p, x, y), per, atol=1e-12)


def test_input_jacobian_of_linear_model_is_w():
    m = Model.linear(4, 3)
    p = m.init_params(0)
    w = m.unflatten(p)[0][0]
    assert np.array_equal(nnet.jacobian_input(m, p, np.ones(4)), w)


def test_input_jacobian_is_weight_product_when_all_units_active():
    m = Model.mlp(3, [4], 2)
    rng = np.random.default_rng(0)
    w1 = rng.normal(size=(4, 3))
    w2 = rng.normal(size=(2, 4))
    p = m.flatten([(w1, np.full(4, 100.0)), (w2, np.zeros(2))])
    jx = nnet.jacobian_input(m, p, np.array([0.1, -0.2, 0.3]))
    np.testing.assert_allclose(jx, w2 @ w1, rtol=1e-12)


def test_param_jacobian_of_linear_model_is_x():
    m = Model.linear(3, 1, bias=False)
    x = np.array([0.5, -2.0, 3.0])
    np.testing.assert_array_equal(nnet.jacobian_params(m, np.array([1.0, 2.0, 3.0]), x)[0], x)


def test_param_jacobian_at_zero_input():
    m = Model.mlp(3, [4], 2)
    p = m.init_params(0)
    p = m.flatten([(w, np.full_like(b, 0.5)) for w, b in m.unflatten(p)])
    jt = nnet.jacobian_params(m, p, np.zeros(3))
    assert np.all(jt[:, :12] == 0)
    assert np.any(jt[:, 12:16] != 0)


@pytest.mark.parametrize("act", ["relu", "tanh"])
def test_jacobians_match_finite_differences(act):
    m = Model.mlp(5, [6, 4], 3, act)
    p = m.init_params(7)
    x = np.random.default_rng(8).normal(size=5)
    jx = nnet.jacobian_input(m, p, x)
    jt = nnet.jacobian_params(m, p, x)
    assert rel_err(jx, central_diff(lambda v: nnet.forward(m, p, v), x, 1e-4)) <= 1e-5
    assert rel_err(jt, central_diff(lambda q: nnet.forward(m, q, x), p, 1e-4)) <= 1e-5


def test_convnet_jacobians_match_finite_differences():
    m = Model.convnet((1, 6, 6), 2, [5], 3, activation="tanh")
    p = m.init_params(0)
    x = np.random.default_rng(1).uniform(size=36)
    jx = nnet.jacobian_input(m, p, x)
    jt = nnet.jacobian_params(m, p, x)
    assert rel_err(jx, central_diff(lambda v: nnet.forward(m, p, v), x, 1e-4)) <= 1e-5
    assert rel_err(jt, central_diff(lambda q: nnet.forward(m, q, x), p, 1e-4)) <= 1e-5


def test_input_gradient_matches_finite_differences():
    m = Model.mlp(4, [5], 3, "tanh")
    p = m.init_params(2)
    x = np.random.default_rng(3).normal(size=(2, 4))
    y = np.array([0, 2])
    g = nnet.grad_inputs(m, p, x, y)
    for i in range(2):
        fd = central_diff(lambda v: nnet.per_sample_loss(nnet.forward(m, p, v[None]), y[i:i + 1])[0], x[i])
        assert rel_err(g[i], fd) <= 1e-6


def test_relu_derivative_at_zero_is_zero():
    m = Model((Dense(1, 1, "relu", bias=False),))
    assert nnet.jacobian_input(m, np.array([1.0]), np.array([0.0]))[0, 0] == 0.0


def test_flatten_round_trip():
    m = Model.convnet((1, 6, 6), 2, [4], 3)
    p = m.init_params(5)
    assert np.array_equal(m.flatten(m.unflatten(p)), p)
    assert Model.from_dict(m.to_dict()) == m


def test_empirical_risk_wrapper():
    m = Model.mlp(3, [4], 2)
    p = m.init_params(0)
    x = np.random.default_rng(0).normal(size=(5, 3))
    y = np.array([0, 1, 1, 0, 1])
    r = nnet.EmpiricalRisk(m, x, y)
    assert r(p) == nnet.risk(m, p, x, y)
    np.testing.assert_array_equal(r.grad(p), nnet.grad_params(m, p, x, y))


def test_conv_layer_constraints():
    conv = nnet.ConvPool((1, 6, 6), 2)
    with pytest.raises(ValueError):
        Model((Dense(36, conv.in_size), conv))
