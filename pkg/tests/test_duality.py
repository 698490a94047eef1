import math

import numpy as np
import pytest

from augflat import duality, linalg
from augflat.data import Dataset
from augflat.nnet import Model, forward, jacobian_input, jacobian_params


def unit_model():
    # one weight, no bias: f = theta * x, so at theta = x = 1 both Jacobians are [[1]]
    return Model.linear(1, 1, bias=False), np.array([1.0]), np.array([[1.0]])


def tanh_mlp(seed=0):
    m = Model.mlp(6, [8], 3, "tanh")
    return m, m.init_params(seed)


def test_radius_from_reported_singular_values():
    r = duality.CompensatoryRadius.from_ratios("param_to_input", 1.0, [52.56 / 0.20])
    assert r.radius == pytest.approx(262.8)
    r = duality.CompensatoryRadius.from_ratios("input_to_param", 1.0, [13.48 / 4.55])
    assert r.radius == pytest.approx(2.963, abs=5e-4)


def test_identity_jacobian_radius_equals_gamma():
    m, p, x = unit_model()
    assert duality.compensatory_input_radius(m, p, x, 0.7).radius == pytest.approx(0.7)
    assert duality.compensatory_param_radius(m, p, x, 0.7).radius == pytest.approx(0.7)
    assert duality.gamma_theta(m, p, x, 0.3) == pytest.approx(0.3)


def test_max_rule_over_points():
    assert duality.CompensatoryRadius.from_ratios("param_to_input", 0.1, [2, 5]).radius == pytest.approx(0.5)
    assert duality.CompensatoryRadius.from_ratios("input_to_param", 2.0, [0.5, 3]).radius == pytest.approx(6)


def test_radius_rejects_nonpositive_gamma():
    m, p, x = unit_model()
    with pytest.raises(ValueError):
        duality.compensatory_input_radius(m, p, x, 0.0)


def test_rank_deficient_input_jacobian_names_sample():
    # relu units all off at the second point: J_x = 0 there
    m = Model.mlp(2, [3], 2)
    w1 = np.array([[1.0, 0], [0, 1], [1, 1]])
    p = m.flatten([(w1, np.zeros(3)), (np.array([[1.0, 0, 0], [0, 1, 0]]), np.zeros(2))])
    xs = np.array([[1.0, 2.0], [-1.0, -1.0]])
    with pytest.raises(linalg.RankDeficientError, match="sample 1"):
        duality.compensatory_input_radius(m, p, xs, 1.0)


def test_zero_perturbations_translate_to_zero():
    m, p = tanh_mlp()
    x = np.linspace(-1, 1, 6)
    assert np.all(duality.translate_param_to_input(m, p, x, np.zeros(m.param_count)) == 0)
    assert np.all(duality.translate_input_to_param(m, p, x, np.zeros(6)) == 0)
    assert duality.duality_residual(m, p, x, np.zeros(m.param_count), np.zeros(6)).residual == 0


def test_linear_model_translation_is_exact():
    rng = np.random.default_rng(0)
    m = Model.linear(5, 1, bias=False)
    theta = rng.normal(size=5)
    x = rng.normal(size=5)
    D = rng.normal(size=5) * 0.1
    d = duality.translate_param_to_input(m, theta, x, D)
    np.testing.assert_allclose(d, theta * (x @ D) / (theta @ theta), rtol=1e-12)
    assert duality.duality_residual(m, theta, x, D, d).residual <= 1e-10
    d2 = rng.normal(size=5) * 0.1
    D2 = duality.translate_input_to_param(m, theta, x, d2)
    assert duality.duality_residual(m, theta, x, D2, d2).residual <= 1e-10


def test_translation_residual_is_second_order():
    m, p = tanh_mlp(1)
    rng = np.random.default_rng(2)
    x = rng.normal(size=6)
    D = rng.normal(size=m.param_count)
    D *= 1e-2 / np.linalg.norm(D)

    def res(scale):
        d = duality.translate_param_to_input(m, p, x, scale * D)
        return duality.duality_residual(m, p, x, scale * D, d).residual

    assert 3.5 <= res(1.0) / res(0.5) <= 4.5


def test_small_translation_residual():
    m, p = tanh_mlp(3)
    rng = np.random.default_rng(4)
    x = rng.normal(size=6)
    D = rng.normal(size=m.param_count)
    D *= 1e-3 / np.linalg.norm(D)
    d = duality.translate_param_to_input(m, p, x, D)
    assert duality.duality_residual(m, p, x, D, d).residual <= 1e-4


def test_input_to_param_norm_bound():
    m, p = tanh_mlp(5)
    x = np.random.default_rng(6).normal(size=6)
    ratio = duality.point_ratio(jacobian_input(m, p, x), jacobian_params(m, p, x), "input_to_param")
    rng = np.random.default_rng(7)
    viol = 0
    for _ in range(1000):
        d = rng.normal(size=6) * rng.uniform(0, 0.1)
        D = duality.translate_input_to_param(m, p, x, d)
        viol += np.linalg.norm(D) > ratio * np.linalg.norm(d) + 1e-12
    assert viol == 0


@pytest.mark.parametrize("direction", ["param_to_input", "input_to_param"])
def test_sampled_coverage_has_no_violations(direction):
    m, p = tanh_mlp(8)
    xs = np.random.default_rng(9).normal(size=(5, 6))
    cov = duality.sample_bound_coverage(m, p, xs, 0.05, 500, direction, seed=1)
    assert cov.violations == 0 and cov.n_samples == 500
    assert cov.max_norm <= cov.radius.radius


def test_coverage_is_seed_deterministic():
    m, p = tanh_mlp(0)
    ds = Dataset(np.random.default_rng(1).normal(size=(3, 6)), [0, 1, 2], 3)
    a = duality.sample_bound_coverage(m, p, ds, 0.1, 60, seed=4)
    b = duality.sample_bound_coverage(m, p, ds, 0.1, 60, seed=4)
    assert a.norms.tobytes() == b.norms.tobytes()


def test_gamma_theta_values():
    assert duality.gamma_theta_from_ratio(262.8, 0.5) == pytest.approx(1.9026e-3, rel=1e-4)
    m, p = tanh_mlp(0)
    x = np.random.default_rng(0).normal(size=(2, 6))
    g = [duality.gamma_theta(m, p, x, ga) for ga in (1e-3, 1e-2, 1e-1)]
    assert g[1] == pytest.approx(10 * g[0]) and g[2] == pytest.approx(100 * g[0])


def test_covering_log_count():
    assert duality.covering_log_count(1, 1, 5) == 0
    assert duality.covering_log_count(10, 1, 2) == pytest.approx(2)
    assert duality.covering_log_count(10, 0.3, 1000) == pytest.approx(1000 * math.log10(34))
    assert duality.covering_log_count(10, 0.3, 1000) == pytest.approx(1531.48, abs=0.01)


def test_total_variation():
    assert duality.div_total_variation([0.2, 0.8], [0.2, 0.8]) == 0
    assert duality.div_total_variation([1, 0], [0, 1]) == 2
    assert duality.div_total_variation([0.5, 0.5], [0.8, 0.2]) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        duality.div_total_variation([0.5, 0.6], [0.5, 0.5])


def test_covering_report():
    m, p, x = unit_model()
    rep = duality.covering_report(m, p, x, 0.25, p_hist=[1, 0], q_hist=[0.5, 0.5])
    assert rep.gamma_Theta == pytest.approx(0.25)
    assert rep.diam_Theta == pytest.approx(2.0)
    assert rep.log10_M == pytest.approx(math.log10(8))
    assert rep.div_estimate == pytest.approx(1.0)


def test_forward_agrees_with_linearisation_for_tiny_steps():
    m, p = tanh_mlp(2)
    x = np.random.default_rng(3).normal(size=6)
    D = np.random.default_rng(4).normal(size=m.param_count) * 1e-7
    lin = forward(m, p, x) + jacobian_params(m, p, x) @ D
    np.testing.assert_allclose(forward(m, p + D, x), lin, atol=1e-12)
