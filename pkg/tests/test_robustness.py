import numpy as np
import pytest

from augflat import robustness as rb
from augflat.data import Dataset, SyntheticSpec, make_synthetic
from augflat.nnet import Model, forward, grad_inputs, per_sample_loss


def binary_linear(w, b=0.0):
    # two logits (0, w.x + b): class 1 iff w.x + b > 0
    m = Model.linear(len(w), 2)
    p = m.flatten([(np.vstack([np.zeros_like(w), w]), np.array([0.0, b]))])
    return m, p


def test_presets_match_reported_settings():
    assert rb.ATTACK_PRESETS["cifar-l2"] == rb.AttackConfig("l2", 0.5, 0.0125, 20)
    assert rb.ATTACK_PRESETS["cifar-linf"].steps == 7
    assert rb.ATTACK_PRESETS["cifar-linf"].random_start is True
    assert rb.ATTACK_PRESETS["cifar-l2"].random_start is False
    with pytest.raises(ValueError):
        rb.AttackConfig("l1", 0.1, 0.1, 1)
    with pytest.raises(ValueError):
        rb.AttackConfig("l2", 0.0, 0.1, 1)


def test_zero_steps_is_identity():
    m, p = binary_linear(np.array([1.0, -1.0, 0.5, 0.2]))
    x = np.random.default_rng(0).uniform(size=(5, 4))
    adv = rb.pgd_attack(m, p, x, np.zeros(5, int), rb.AttackConfig("linf", 0.1, 0.01, 0, False))
    np.testing.assert_array_equal(adv, x)


def test_tiny_eps_keeps_input():
    m, p = binary_linear(np.array([1.0, -1.0, 0.5, 0.2]))
    x = np.random.default_rng(1).uniform(0.1, 0.9, size=(5, 4))
    adv = rb.pgd_attack(m, p, x, np.zeros(5, int), rb.AttackConfig("l2", 1e-14, 0.1, 3))
    np.testing.assert_allclose(adv, x, atol=1e-13)


def test_single_linf_step_closed_form():
    rng = np.random.default_rng(2)
    w = rng.normal(size=9)
    m, p = binary_linear(w, 0.1)
    x = rng.uniform(size=(20, 9))
    y = rng.integers(0, 2, size=20)
    cfg = rb.AttackConfig("linf", 0.05, 0.03, 1, random_start=False)
    adv = rb.pgd_attack(m, p, x, y, cfg)
    # d loss / d x points along -w for label 1 and +w for label 0
    sign = np.where(y[:, None] == 1, -np.sign(w), np.sign(w))
    np.testing.assert_array_equal(adv, np.clip(x + 0.03 * sign, 0, 1))
    np.testing.assert_array_equal(np.sign(grad_inputs(m, p, x, y)), sign)


@pytest.mark.parametrize("cfg", [rb.AttackConfig("l2", 0.3, 0.05, 10), rb.AttackConfig("linf", 0.05, 0.01, 10)],
                         ids=["l2", "linf"])
def test_feasibility_and_ascent(cfg):
    tr, te = make_synthetic(SyntheticSpec("mini_images", n=200, k=4))
    m = Model.mlp(64, [16], 4, "tanh")
    p = m.init_params(0)
    adv = rb.pgd_attack(m, p, te.x, te.y, cfg, seed=3)
    diff = adv - te.x
    if cfg.norm == "l2":
        assert np.all(np.linalg.norm(diff, axis=1) <= cfg.eps + 1e-9)
    else:
        assert np.all(np.abs(diff) <= cfg.eps + 1e-9)
    assert adv.min() >= 0 and adv.max() <= 1
    clean = per_sample_loss(forward(m, p, te.x), te.y)
    attacked = per_sample_loss(forward(m, p, adv), te.y)
    assert np.all(attacked >= clean)


def test_margin_below_eps_keeps_clean_error():
    w = np.array([1.0, 1.0])
    m, p = binary_linear(w, -1.0)
    x = np.array([[0.1, 0.2], [0.9, 0.8], [0.2, 0.1], [0.8, 0.9]])
    y = np.array([0, 1, 0, 1])
    ds = Dataset(x, y, 2)
    margin = np.min(np.abs(x @ w - 1.0)) / np.linalg.norm(w)
    cfg = rb.AttackConfig("l2", 0.9 * margin, 0.05, 20)
    assert rb.adversarial_error(m, p, ds, cfg) == rb.error_rate(m, p, x, y) == 0.0


def test_error_monotone_in_eps_on_linear_model():
    rng = np.random.default_rng(4)
    w = rng.normal(size=6)
    m, p = binary_linear(w, -w.sum() / 2)
    x = rng.uniform(size=(200, 6))
    ds = Dataset(x, (x @ w - w.sum() / 2 > 0).astype(int), 2)
    errs = [rb.adversarial_error(m, p, ds, rb.AttackConfig("l2", e, e / 5, 10)) for e in (0.01, 0.05, 0.1, 0.3)]
    assert all(b >= a for a, b in zip(errs, errs[1:]))
    assert rb.adversarial_error(m, p, ds, rb.AttackConfig("l2", 0.1, 0.1, 0)) == rb.error_rate(m, p, x, ds.y)


def test_severity_table_monotone():
    for kind, vals in rb.SEVERITY_TABLE.items():
        if kind in ("shot_noise", "contrast"):  # smaller parameter is harsher
            assert all(b <= a for a, b in zip(vals, vals[1:])), kind
        else:
            assert all(b >= a for a, b in zip(vals, vals[1:])), kind
    with pytest.raises(ValueError):
        rb.CorruptionSpec("fog", 1)
    with pytest.raises(ValueError):
        rb.CorruptionSpec("contrast", 6)


def test_contrast_on_constant_image():
    x = np.full(64, 0.37)
    for s in range(1, 6):
        np.testing.assert_allclose(rb.corrupt(x, rb.CorruptionSpec("contrast", s), 0), x, atol=1e-15)


@pytest.mark.parametrize("severity", [1, 3, 5])
def test_gaussian_noise_variance(severity):
    x = np.full(10_000, 0.5)
    spec = rb.CorruptionSpec("gaussian_noise", severity)
    out = rb.corrupt(x, spec, 1, (1, 100, 100))
    assert np.var(out - x) == pytest.approx(spec.parameter ** 2, rel=0.10)


def test_pixelate_idempotent():
    x = np.random.default_rng(0).uniform(size=64)
    spec = rb.CorruptionSpec("pixelate", 5)
    once = rb.corrupt(x, spec, 0)
    np.testing.assert_allclose(rb.corrupt(once, spec, 0), once, atol=1e-15)


@pytest.mark.parametrize("kind", rb.CORRUPTIONS)
def test_corrupt_deterministic_and_clamped(kind):
    x = np.random.default_rng(5).uniform(size=64)
    a = rb.corrupt(x, rb.CorruptionSpec(kind, 4), 9)
    assert a.tobytes() == rb.corrupt(x, rb.CorruptionSpec(kind, 4), 9).tobytes()
    assert a.min() >= 0 and a.max() <= 1


def test_grid_mean_fixture():
    grid = {"a": {1: 10.0, 2: 20.0}, "b": {1: 30.0, 2: 40.0}}
    assert rb.RobustnessReport.grid_mean(grid) == 25.0
    assert rb.RobustnessReport.from_grid({"a": {3: 12.5}}).mce == 12.5
    with pytest.raises(ValueError):
        rb.RobustnessReport.grid_mean({})


def test_mce_matches_independent_cells():
    tr, te = make_synthetic(SyntheticSpec("mini_images", n=150, k=3))
    m = Model.mlp(64, [8], 3)
    p = m.init_params(2)
    rep = rb.mce(m, p, te, ("gaussian_noise", "pixelate"), (1, 5), seed=3)
    cells = []
    for kind in ("gaussian_noise", "pixelate"):
        for s in (1, 5):
            cd = rb.corrupt_dataset(te, rb.CorruptionSpec(kind, s), 3)
            cells.append(rb.error_rate(m, p, cd.x, cd.y))
    assert abs(rep.mce - np.mean(cells)) <= 1e-12
    assert rb.RobustnessReport.from_dict(rep.to_dict()) == rep


def test_robust_only_at_mild_severity():
    # one bright pixel decides the class; contrast scaling c keeps it above 0.5
    # for c >= 0.5 (severities 1-2) and pushes it below for c <= 0.4
    x = np.zeros((2, 64))
    x[1, 0] = 1.0
    ds = Dataset(x, [0, 1], 2, image_shape=(1, 8, 8))
    w = np.zeros(64)
    w[0] = 1.0
    m, p = binary_linear(w, -0.5)
    rep = rb.mce(m, p, ds, ("contrast",), (1, 2, 3, 4, 5))
    assert [rep.grid["contrast"][s] for s in range(1, 6)] == [0.0, 0.0, 50.0, 50.0, 50.0]
    assert rep.clean_error == 0.0 and rep.mce == 30.0
