"""Fully-connected embedding network, backprop, and the SGD training loop."""

import math
from dataclasses import dataclass, field

import numpy as np

from .centralization import (
    AffineParams,
    OriginState,
    centralize,
    centralize_affine,
    centralize_affine_backward,
    centralize_backward,
    update_stats,
)
from .errors import ConfigError, NumericError, ShapeError, TrainingDiverged
from .evaluation import angle_stats
from .losses import ClassifierWeights, LossConfig, forward_loss, l2_constrain, l2_constrain_backward, relative_error

DIVERGENCE_LOSS = 1e4
BN_AFFINE_MODES = ("none", "gamma_beta", "gamma")


@dataclass
class EmbeddingNet:
    layer_dims: list
    weights: list
    biases: list
    seed: int = 0

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ConfigError("need at least an input and an output dimension")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_dims[l + 1], self.layer_dims[l]) or b.shape != (self.layer_dims[l + 1],):
                raise ShapeError(f"layer {l} parameters do not match dims {self.layer_dims}")

    @property
    def embed_dim(self):
        return self.layer_dims[-1]

    def copy(self):
        return EmbeddingNet(list(self.layer_dims), [W.copy() for W in self.weights], [b.copy() for b in self.biases], self.seed)


def init_net(layer_dims, seed=0):
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    if not layer_dims or len(layer_dims) < 2 or min(layer_dims) < 1:
        raise ConfigError(f"invalid layer dims {layer_dims!r}")
    rng = np.random.default_rng([seed, 11])
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EmbeddingNet(list(layer_dims), weights, biases, seed)


def _forward(net, inputs):
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.layer_dims[0]:
        raise ShapeError(f"expected inputs of width {net.layer_dims[0]}, got shape {X.shape}")
    cache = []
    h = X
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        pre = h @ W.T + b
        cache.append((h, pre))
        h = pre if l == last else np.maximum(pre, 0.0)
    return h, cache


def forward_embed(net, inputs):
    return _forward(net, inputs)[0]


def _backward(net, cache, grad_out):
    grads_W = [None] * len(net.weights)
    grads_b = [None] * len(net.weights)
    g = grad_out
    for l in range(len(net.weights) - 1, -1, -1):
        h, pre = cache[l]
        if l != len(net.weights) - 1:
            g = g * (pre > 0)
        grads_W[l] = g.T @ h
        grads_b[l] = g.sum(axis=0)
        g = g @ net.weights[l]
    return grads_W, grads_b


def transform_features(emb, loss_cfg, state, affine=None):
    """Apply the variant's feature transform; returns (features, backward)."""
    if loss_cfg.centralizes:
        if affine is None:
            return centralize(emb, state), lambda g: (centralize_backward(g, state), None, None)
        return centralize_affine(emb, state, affine), lambda g: centralize_affine_backward(g, emb, state, affine)
    if loss_cfg.variant.value == "L2Constrained":
        return l2_constrain(emb, loss_cfg.alpha), lambda g: (l2_constrain_backward(g, emb, loss_cfg.alpha), None, None)
    return emb, lambda g: (g, None, None)


@dataclass
class Grads:
    net_W: list
    net_b: list
    W: np.ndarray
    b: np.ndarray | None = None
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None


def model_loss(net, weights, loss_cfg, inputs, labels, state, affine=None, frozen_eta=None):
    """Loss of the whole pipeline and its gradient wrt every trainable array.

    Returns ``(LossOutput, Grads, raw_embeddings)``.
    """
    emb, cache = _forward(net, inputs)
    feats, back = transform_features(emb, loss_cfg, state, affine)
    out = forward_loss(loss_cfg, feats, weights, labels, frozen_eta=frozen_eta)
    g_emb, g_gamma, g_beta = back(out.grad_features)
    gW, gb = _backward(net, cache, g_emb)
    return out, Grads(gW, gb, out.grad_weights, out.grad_bias, g_gamma, g_beta), emb


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.05
    lr_decay_points: tuple = (0.6, 0.85)
    lr_decay_factor: float = 0.1
    weight_decay: float = 2e-4
    seed: int = 0
    embed_dim: int = 16
    hidden_dims: tuple = (64, 32)
    rho: float = 0.995
    bn_affine: str = "none"
    record_angles: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.bn_affine not in BN_AFFINE_MODES:
            raise ConfigError(f"bn_affine must be one of {BN_AFFINE_MODES}")
        if self.bn_affine != "none" and not self.loss.centralizes:
            raise ConfigError("bn_affine only applies to centralized variants")

    def learning_rate_at(self, step, total_steps):
        drops = sum(step >= int(p * total_steps) for p in self.lr_decay_points)
        return self.learning_rate * self.lr_decay_factor**drops


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)
    epoch_intra: list = field(default_factory=list)
    epoch_inter: list = field(default_factory=list)
    final_state: OriginState | None = None


@dataclass
class TrainResult:
    net: EmbeddingNet
    weights: ClassifierWeights
    state: OriginState
    history: TrainHistory
    affine: AffineParams | None = None


def init_classifier(num_classes, dim, seed, with_bias):
    rng = np.random.default_rng([seed, 13])
    bound = 1.0 / math.sqrt(dim)
    W = rng.uniform(-bound, bound, size=(num_classes, dim))
    return ClassifierWeights(W, np.zeros(num_classes) if with_bias else None)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        if idx.size >= 2:
            yield idx


def sgd_step(param, grad, lr, weight_decay):
    """In-place decayed SGD update: p <- p * (1 - lr * wd) - lr * g."""
    param *= 1.0 - lr * weight_decay
    if grad is not None:
        param -= lr * grad


def train(config, dataset):
    """Minibatch SGD on ``dataset``; returns a :class:`TrainResult`.

    Per step: embed, transform, loss, backprop, update parameters, then (for
    centralized variants) fold the batch's raw embedding statistics into the
    origin state.
    """
    X, y = dataset.X, dataset.labels
    K = dataset.num_classes
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ConfigError("labels outside [0, num_classes)")
    dims = [X.shape[1], *config.hidden_dims, config.embed_dim]
    net = init_net(dims, config.seed)
    weights = init_classifier(K, config.embed_dim, config.seed, config.loss.has_bias)
    state = OriginState.identity(config.embed_dim, rho=config.rho)
    affine = None
    if config.bn_affine != "none":
        affine = AffineParams.identity(config.embed_dim, with_beta=config.bn_affine == "gamma_beta")
    history = TrainHistory()

    rng = np.random.default_rng([config.seed, 23])
    per_epoch = sum(1 for s in range(0, len(y), config.batch_size) if min(config.batch_size, len(y) - s) >= 2)
    total = per_epoch * config.epochs
    step = 0
    wd = config.weight_decay
    for _ in range(config.epochs):
        for idx in _batches(len(y), config.batch_size, rng):
            lr = config.learning_rate_at(step, total)
            try:
                out, grads, emb = model_loss(net, weights, config.loss, X[idx], y[idx], state, affine)
            except NumericError:
                raise TrainingDiverged(step, float("nan")) from None
            if not math.isfinite(out.loss) or out.loss > DIVERGENCE_LOSS:
                raise TrainingDiverged(step, out.loss)
            history.losses.append(out.loss)
            for W, gW in zip(net.weights, grads.net_W):
                sgd_step(W, gW, lr, wd)
            for b, gb in zip(net.biases, grads.net_b):
                sgd_step(b, gb, lr, wd)
            sgd_step(weights.W, grads.W, lr, wd)
            if weights.b is not None:
                sgd_step(weights.b, grads.b, lr, wd)
            if affine is not None:
                sgd_step(affine.gamma, grads.gamma, lr, wd)
                if affine.beta is not None:
                    sgd_step(affine.beta, grads.beta, lr, wd)
            if config.loss.centralizes:
                state = update_stats(state, emb)
            step += 1
        if config.record_angles:
            feats = embed_dataset(net, state, X, config.loss.centralizes, affine)
            intra, inter = angle_stats(feats, y, seed=config.seed)
            history.epoch_intra.append(intra)
            history.epoch_inter.append(inter)
    history.final_state = state
    return TrainResult(net, weights, state, history, affine)


def embed_dataset(net, state, inputs, apply_centralize, affine=None):
    X = np.asarray(inputs, dtype=np.float64)
    if X.shape[0] == 0:
        return np.zeros((0, net.embed_dim))
    emb = forward_embed(net, X)
    if not apply_centralize:
        return emb
    if affine is not None:
        return centralize_affine(emb, state, affine)
    return centralize(emb, state)


def flat_parameters(net, weights, affine=None):
    """Every trainable array, in a fixed order, as live references."""
    params = [*net.weights, *net.biases, weights.W]
    if weights.b is not None:
        params.append(weights.b)
    if affine is not None:
        params.append(affine.gamma)
        if affine.beta is not None:
            params.append(affine.beta)
    return params


def flat_grads(grads, weights, affine=None):
    out = [*grads.net_W, *grads.net_b, grads.W]
    if weights.b is not None:
        out.append(grads.b)
    if affine is not None:
        out.append(grads.gamma)
        if affine.beta is not None:
            out.append(grads.beta)
    return out


def model_gradient_check(loss_cfg, rng, dims=(3, 4, 2), num_classes=3, batch=4, h=1e-5, bn_affine="none"):
    """End-to-end central-difference check on a micro network.

    Origin state is random but fixed; the adaptive margin factor is frozen at
    the unperturbed angles. Returns the max elementwise relative error.
    """
    net = init_net(list(dims), int(rng.integers(1 << 30)))
    for b in net.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    weights = ClassifierWeights(
        rng.normal(size=(num_classes, dims[-1])), rng.normal(size=num_classes) if loss_cfg.has_bias else None
    )
    state = OriginState(o=rng.normal(scale=0.3, size=dims[-1]), sigma=rng.uniform(0.5, 2.0, size=dims[-1]))
    affine = None
    if bn_affine != "none":
        affine = AffineParams(
            rng.uniform(0.5, 2.0, size=dims[-1]), rng.normal(size=dims[-1]) if bn_affine == "gamma_beta" else None
        )
    X = rng.normal(size=(batch, dims[0]))
    y = rng.integers(0, num_classes, size=batch)

    base, grads, _ = model_loss(net, weights, loss_cfg, X, y, state, affine)
    frozen = base.eta
    worst = 0.0
    for param, g in zip(flat_parameters(net, weights, affine), flat_grads(grads, weights, affine)):
        numeric = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            old = param[idx]
            param[idx] = old + h
            fp = model_loss(net, weights, loss_cfg, X, y, state, affine, frozen)[0].loss
            param[idx] = old - h
            fm = model_loss(net, weights, loss_cfg, X, y, state, affine, frozen)[0].loss
            param[idx] = old
            numeric[idx] = (fp - fm) / (2.0 * h)
        worst = max(worst, relative_error(g, numeric))
    return worst
