import hashlib
from dataclasses import replace

import numpy as np
import pytest

from ccl_lab.centralization import OriginState
from ccl_lab.core_math import chi_mean
from ccl_lab.datasets import SyntheticSpec, generate_synthetic
from ccl_lab.errors import ConfigError, ShapeError, TrainingDiverged
from ccl_lab.losses import LossConfig, Variant
from ccl_lab.model import (
    EmbeddingNet,
    TrainConfig,
    embed_dataset,
    forward_embed,
    init_net,
    model_gradient_check,
    sgd_step,
    train,
)

SMALL = SyntheticSpec(num_classes=4, samples_per_class=40, ambient_dim=6, seed=3)


def small_config(variant="CCL", **kw):
    base = dict(epochs=3, batch_size=32, embed_dim=8, hidden_dims=(16,), seed=5)
    base.update(kw)
    return TrainConfig(loss=LossConfig(variant), **base)


def net_bytes(net):
    return b"".join(a.tobytes() for a in [*net.weights, *net.biases])


def test_init_is_deterministic_and_shaped():
    a, b = init_net([4, 3, 2], seed=9), init_net([4, 3, 2], seed=9)
    assert net_bytes(a) == net_bytes(b)
    assert [W.shape for W in a.weights] == [(3, 4), (2, 3)]
    assert net_bytes(init_net([4, 3, 2], seed=10)) != net_bytes(a)


@pytest.mark.parametrize("dims", [[], [4], [4, 0]])
def test_init_rejects_bad_dims(dims):
    with pytest.raises(ConfigError):
        init_net(dims)


def test_zero_weights_give_zero_embeddings(rng):
    net = init_net([5, 4, 3])
    for W in net.weights:
        W[:] = 0.0
    assert np.array_equal(forward_embed(net, rng.normal(size=(7, 5))), np.zeros((7, 3)))


def test_identity_layer_passthrough(rng):
    net = EmbeddingNet([3, 3], [np.eye(3)], [np.zeros(3)])
    X = rng.normal(size=(4, 3))
    assert np.array_equal(forward_embed(net, X), X)


def test_two_layer_hand_value():
    W1 = np.array([[1.0, -1.0], [2.0, 0.5]])
    b1 = np.array([0.0, -1.0])
    W2 = np.array([[1.0, 1.0], [-1.0, 3.0]])
    b2 = np.array([0.5, 0.0])
    net = EmbeddingNet([2, 2, 2], [W1, W2], [b1, b2])
    # x = (1, 2): pre1 = (-1, 2), relu -> (0, 2); out = (2.5, 6)
    assert np.array_equal(forward_embed(net, np.array([[1.0, 2.0]])), np.array([[2.5, 6.0]]))


def test_forward_shape_mismatch():
    with pytest.raises(ShapeError):
        forward_embed(init_net([3, 2]), np.zeros((2, 4)))


def test_epochs_zero_is_noop():
    data = generate_synthetic(SMALL)
    res = train(small_config(epochs=0), data)
    assert res.history.losses == [] and res.history.epoch_intra == []
    assert net_bytes(res.net) == net_bytes(init_net([6, 16, 8], seed=5))
    assert np.array_equal(res.state.o, np.zeros(8)) and np.array_equal(res.state.sigma, np.ones(8))


def test_ccl_loss_decreases_over_200_steps():
    spec = SyntheticSpec(seed=0)  # default synthetic set: 1000 samples -> 16 steps/epoch
    res = train(TrainConfig(loss=LossConfig("CCL"), epochs=13, seed=0), generate_synthetic(spec))
    losses = res.history.losses[:200]
    assert len(losses) == 200
    assert np.mean(losses[-50:]) < np.mean(losses[:50])


def test_training_is_deterministic():
    data = generate_synthetic(SMALL)
    a = train(small_config(), data)
    b = train(small_config(), data)
    assert a.history.losses == b.history.losses
    assert a.history.epoch_intra == b.history.epoch_intra
    assert net_bytes(a.net) == net_bytes(b.net)
    assert np.array_equal(a.state.o, b.state.o)


def test_history_lengths():
    data = generate_synthetic(SMALL)
    res = train(small_config(epochs=2), data)
    assert len(res.history.losses) == 2 * 5  # 160 samples / 32 per batch
    assert len(res.history.epoch_intra) == len(res.history.epoch_inter) == 2
    assert res.history.final_state is res.state
    assert res.state.batches_seen == 10


def test_origin_state_untouched_for_non_centralized_variants():
    res = train(small_config("ModifiedSoftmax"), generate_synthetic(SMALL))
    assert res.state.batches_seen == 0


def test_weight_decay_shrinks_exactly(rng):
    p = rng.normal(size=(4, 3))
    before = p.copy()
    sgd_step(p, np.zeros_like(p), lr=0.05, weight_decay=2e-4)
    assert np.array_equal(p, before * (1 - 0.05 * 2e-4))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        small_config(batch_size=1)
    with pytest.raises(ConfigError):
        small_config(learning_rate=0.0)
    with pytest.raises(ConfigError):
        small_config("ModifiedSoftmax", bn_affine="gamma")


def test_learning_rate_schedule():
    cfg = small_config()
    assert cfg.learning_rate_at(0, 100) == 0.05
    assert cfg.learning_rate_at(60, 100) == pytest.approx(0.005)
    assert cfg.learning_rate_at(85, 100) == pytest.approx(0.0005)


def test_divergence_reports_step():
    with pytest.raises(TrainingDiverged) as exc:
        train(small_config("PlainSoftmax", learning_rate=1e6), generate_synthetic(SMALL))
    assert exc.value.step >= 0


def test_bad_labels_rejected():
    data = generate_synthetic(SMALL)
    data.labels[0] = 99
    with pytest.raises(ConfigError):
        train(small_config(), data)


def test_embed_dataset_identity_state_and_empty(rng):
    net = init_net([4, 5, 3], seed=1)
    X = rng.normal(size=(6, 4))
    raw = embed_dataset(net, OriginState.identity(3), X, apply_centralize=False)
    assert np.array_equal(embed_dataset(net, OriginState.identity(3), X, apply_centralize=True), raw)
    assert embed_dataset(net, OriginState.identity(3), np.zeros((0, 4)), True).shape == (0, 3)


def test_reference_embeddings_checksum_is_reproducible():
    data = generate_synthetic(SMALL)

    def digest():
        res = train(small_config(), data)
        return hashlib.sha256(embed_dataset(res.net, res.state, data.X, True).tobytes()).hexdigest()

    assert digest() == digest()


def test_reference_ccl_run_separates_classes():
    spec = SyntheticSpec(num_classes=4, samples_per_class=100, ambient_dim=6, noise_scale=0.3, seed=1)
    res = train(TrainConfig(loss=LossConfig("CCL"), epochs=15, embed_dim=8, seed=1), generate_synthetic(spec))
    assert res.history.epoch_intra[-1] < res.history.epoch_inter[-1]


def test_centralized_embedding_norms_track_chi_mean():
    # once the origin state has converged, centralized features are roughly
    # standardized, so their norms sit near the chi mean for the dimension
    spec = SyntheticSpec(seed=2)
    cfg = TrainConfig(loss=LossConfig("CCL"), epochs=30, embed_dim=16, seed=2, rho=0.9)
    res = train(cfg, generate_synthetic(spec))
    feats = embed_dataset(res.net, res.state, generate_synthetic(spec).X, True)
    mean_norm = np.linalg.norm(feats, axis=1).mean()
    assert abs(mean_norm - chi_mean(16)) / chi_mean(16) < 0.1


@pytest.mark.parametrize("variant", list(Variant))
def test_whole_model_gradient(variant):
    rng = np.random.default_rng([3, list(Variant).index(variant)])
    cfg = LossConfig(variant)
    assert max(model_gradient_check(cfg, rng) for _ in range(5)) < 1e-4


@pytest.mark.parametrize("mode", ["gamma_beta", "gamma"])
def test_whole_model_gradient_with_affine(mode):
    rng = np.random.default_rng(4)
    assert max(model_gradient_check(LossConfig("CCL_AAM"), rng, bn_affine=mode) for _ in range(5)) < 1e-4


def test_replace_keeps_validation():
    with pytest.raises(ConfigError):
        replace(small_config(), epochs=-1)
