import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccl_lab.errors import ConfigError, DegenerateInputError, NumericError
from ccl_lab.losses import (
    ANGULAR_VARIANTS,
    ClassifierWeights,
    LossConfig,
    Variant,
    eta,
    forward_loss,
    gradient_check,
    l2_constrain,
    normalize_rows,
    random_instance,
)

ALL = list(Variant)


def prepared(cfg, x):
    return l2_constrain(x, cfg.alpha) if cfg.variant is Variant.L2_CONSTRAINED else x


def test_eta_branches():
    assert eta(math.pi / 2) == 1.0
    assert eta(math.pi / 6) == 2.0
    assert eta(math.pi / 30) == 10.0
    assert eta(math.pi) == 1.0
    assert eta(0.0) == 10.0


def test_eta_product_bounded_and_continuous():
    th = np.linspace(0.0, math.pi / 3, 10_001)
    assert (eta(th) * th <= math.pi / 3).all()
    third = math.pi / 3
    assert abs(eta(third) * third - third) <= 2 * np.spacing(third)
    just_above = np.nextafter(third, 4.0)
    assert abs(eta(just_above) * just_above - third) <= 2 * np.spacing(third)
    small = math.pi / 30
    above_small = np.nextafter(small, 1.0)
    assert abs(eta(small) * small - eta(above_small) * above_small) <= 4 * np.spacing(third)


def test_normalize_rows():
    assert np.allclose(normalize_rows(np.array([[3.0, 4.0]])), [[0.6, 0.8]])
    u = np.array([[0.6, 0.8]])
    assert np.array_equal(normalize_rows(u), u)
    with pytest.raises(DegenerateInputError):
        normalize_rows(np.array([[0.0, 0.0], [1.0, 0.0]]))


def test_l2_constrain():
    assert np.allclose(l2_constrain(np.array([[3.0, 4.0]]), 1.0), [[0.6, 0.8]])
    assert np.allclose(l2_constrain(np.array([[3.0, 4.0]]), 5.0), [[3.0, 4.0]])
    assert np.allclose(l2_constrain(np.array([[0.6, 0.8]]), 2.0), [[1.2, 1.6]])
    with pytest.raises(DegenerateInputError):
        l2_constrain(np.zeros((1, 2)), 1.0)


def test_loss_config_strictness():
    assert LossConfig("CCL_AAM").lam == 3.0
    assert LossConfig("SphereMargin").m == 4
    assert LossConfig("PlainSoftmax").use_bias is True
    with pytest.raises(ConfigError):
        LossConfig("CCL", m=2)
    with pytest.raises(ConfigError):
        LossConfig("Nope")
    with pytest.raises(ConfigError):
        LossConfig("SphereMargin", m=0)
    with pytest.raises(ConfigError):
        LossConfig.from_dict({"variant": "CCL", "colour": 1})
    assert LossConfig.from_dict(LossConfig("SphereMargin", m=2).to_dict()) == LossConfig("SphereMargin", m=2)


def test_modified_softmax_hand_example():
    out = forward_loss(
        LossConfig("ModifiedSoftmax"), np.array([[1.0, 0.0]]), ClassifierWeights(np.eye(2)), np.array([0])
    )
    assert out.loss == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)


@pytest.mark.parametrize("variant", ALL)
def test_equal_logits_give_log_k(variant):
    cfg = LossConfig(variant)
    K = 4
    W = np.eye(K)  # feature along all-ones is equidistant from every class
    x = np.ones((3, K)) * 0.7
    if variant is Variant.L2_CONSTRAINED:
        x = l2_constrain(x, cfg.alpha)
    b = np.zeros(K) if cfg.has_bias else None
    labels = np.array([0, 1, 2])
    if variant in (Variant.SPHERE_MARGIN, Variant.CCL_AAM):
        # the margin breaks the symmetry on the true class; use the no-margin setting
        cfg = LossConfig("SphereMargin", m=1) if variant is Variant.SPHERE_MARGIN else cfg
    out = forward_loss(cfg, x, ClassifierWeights(W, b), labels)
    if variant is Variant.CCL_AAM:
        # theta = 60 deg exactly is on the boundary; the sf term still sees equal logits
        assert out.parts["sf"] == pytest.approx(np.full(3, math.log(K)), abs=1e-12)
    else:
        assert out.loss == pytest.approx(math.log(K), abs=1e-12)


def test_label_and_numeric_errors():
    w = ClassifierWeights(np.eye(2))
    with pytest.raises(IndexError):
        forward_loss(LossConfig("CCL"), np.ones((1, 2)), w, np.array([2]))
    with pytest.raises(NumericError):
        forward_loss(LossConfig("CCL"), np.array([[np.nan, 1.0]]), w, np.array([0]))


@pytest.mark.parametrize("variant", ALL)
@given(seed=st.integers(0, 2**32 - 1))
def test_probs_row_stochastic(variant, seed):
    rng = np.random.default_rng(seed)
    cfg = LossConfig(variant)
    x, w, y = random_instance(rng, with_bias=cfg.has_bias)
    out = forward_loss(cfg, prepared(cfg, x), w, y)
    assert np.abs(out.probs.sum(axis=1) - 1.0).max() <= 1e-9
    assert np.isfinite(out.grad_features).all() and np.isfinite(out.grad_weights).all()
    assert out.loss >= 0


@pytest.mark.parametrize("variant", sorted(ANGULAR_VARIANTS | {Variant.MODIFIED_SOFTMAX}, key=str))
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.01, 100))
def test_weight_row_scale_invariance(variant, seed, scale):
    rng = np.random.default_rng(seed)
    cfg = LossConfig(variant)
    x, w, y = random_instance(rng)
    x = prepared(cfg, x)
    a = forward_loss(cfg, x, w, y)
    w2 = w.copy()
    k = int(rng.integers(w.W.shape[0]))
    w2.W[k] *= scale
    b = forward_loss(cfg, x, w2, y)
    assert abs(a.loss - b.loss) <= 1e-12
    assert np.abs(a.probs - b.probs).max() <= 1e-12
    assert np.abs(a.grad_features - b.grad_features).max() <= 1e-12


@given(seed=st.integers(0, 2**32 - 1))
def test_sphere_m1_is_asoftmax(seed):
    rng = np.random.default_rng(seed)
    x, w, y = random_instance(rng)
    a = forward_loss(LossConfig("ASoftmax"), x, w, y)
    s = forward_loss(LossConfig("SphereMargin", m=1), x, w, y)
    assert a.loss == s.loss
    assert np.array_equal(a.grad_features, s.grad_features)
    assert np.array_equal(a.grad_weights, s.grad_weights)


def test_aam_equals_ccl_when_all_angles_large():
    W = np.eye(3)
    x = np.array([[-1.0, 0.2, 0.3], [0.1, -0.5, 2.0], [0.4, 0.1, -3.0]])
    y = np.array([0, 1, 2])
    ccl = forward_loss(LossConfig("CCL"), x, ClassifierWeights(W), y)
    assert (ccl.per_sample_theta > math.pi / 3).all()
    aam = forward_loss(LossConfig("CCL_AAM"), x, ClassifierWeights(W), y)
    assert aam.loss == ccl.loss
    assert np.array_equal(aam.grad_features, ccl.grad_features)


@given(seed=st.integers(0, 2**32 - 1))
def test_margin_dominance(seed):
    rng = np.random.default_rng(seed)
    x, w, y = random_instance(rng)
    ccl = forward_loss(LossConfig("CCL"), x, w, y)
    aam = forward_loss(LossConfig("CCL_AAM"), x, w, y)
    large = ccl.per_sample_theta > math.pi / 3
    assert np.all(aam.parts["aam"] >= ccl.per_sample_loss)
    assert np.array_equal(aam.parts["aam"][large], ccl.per_sample_loss[large])
    assert np.all(aam.parts["aam"][~large] > ccl.per_sample_loss[~large])


@pytest.mark.parametrize("variant", ALL)
def test_gradient_check_random_instances(variant):
    cfg = LossConfig(variant)
    rng = np.random.default_rng([7, list(Variant).index(variant)])
    worst = 0.0
    for _ in range(25):
        x, w, y = random_instance(rng, with_bias=cfg.has_bias)
        worst = max(worst, gradient_check(cfg, prepared(cfg, x), w, y, h=1e-5))
    assert worst < 1e-4


def test_gradient_at_symmetric_point_is_zero():
    # two identical class directions: p = 1/2 and the pulls cancel exactly
    cfg = LossConfig("ModifiedSoftmax")
    W = np.array([[1.0, 1.0], [1.0, 1.0]])
    x = np.array([[2.0, 0.5]])
    y = np.array([0])
    out = forward_loss(cfg, x, ClassifierWeights(W), y)
    assert np.abs(out.grad_features).max() < 1e-7
    h = 1e-5
    for j in range(2):
        xp, xm = x.copy(), x.copy()
        xp[0, j] += h
        xm[0, j] -= h
        fd = (forward_loss(cfg, xp, ClassifierWeights(W), y).loss - forward_loss(cfg, xm, ClassifierWeights(W), y).loss) / (2 * h)
        assert abs(fd - out.grad_features[0, j]) < 1e-7


def test_gradient_check_rejects_bad_step():
    x, w, y = random_instance(np.random.default_rng(0))
    with pytest.raises(ValueError):
        gradient_check(LossConfig("CCL"), x, w, y, h=1e-2)


def test_gradient_check_detects_sign_error():
    def broken(config, features, weights, labels, frozen_eta=None):
        out = forward_loss(config, features, weights, labels, frozen_eta)
        out.grad_features = -out.grad_features
        return out

    x, w, y = random_instance(np.random.default_rng(1))
    assert gradient_check(LossConfig("CCL"), x, w, y, loss_fn=broken) > 1.0
