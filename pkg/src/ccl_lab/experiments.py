"""Train-then-evaluate pipeline shared by the CLI, scripts and tests."""

from dataclasses import dataclass, replace

import numpy as np

from .datasets import SyntheticSpec, generate_distractors, generate_synthetic, make_pairs
from .evaluation import build_report
from .losses import LossConfig
from .model import TrainConfig, embed_dataset, train


@dataclass(frozen=True)
class EvalConfig:
    num_positive: int = 300
    num_negative: int = 300
    hard_negatives: bool = False
    folds: int = 10
    num_bins: int = 40
    num_distractors: int = 200


@dataclass(frozen=True)
class VariantSpec:
    """One row of an ablation: a named loss plus its feature-transform mode."""

    name: str
    loss: LossConfig
    bn_affine: str = "none"


# Unnormalized baseline, centralization with learned affine, plain centralization, and the margin variant.
DEFAULT_SUITE = (
    VariantSpec("LE", LossConfig("ModifiedSoftmax")),
    VariantSpec("LE+BN", LossConfig("CCL"), "gamma_beta"),
    VariantSpec("LE+BN(no beta)", LossConfig("CCL"), "gamma"),
    VariantSpec("CCL", LossConfig("CCL")),
    VariantSpec("CCL+AAM", LossConfig("CCL_AAM")),
)


def dispersion_reference(seed=0):
    """Four warped classes embedded in 2-D."""
    data = SyntheticSpec(num_classes=4, samples_per_class=200, ambient_dim=4, noise_scale=0.3, warp=True, seed=seed)
    cfg = TrainConfig(loss=LossConfig("CCL"), epochs=40, embed_dim=2, seed=seed)
    return data, cfg, EvalConfig(num_positive=200, num_negative=200, num_distractors=50)


def ordering_reference(seed=0):
    """Ten warped classes embedded in 16-D."""
    data = SyntheticSpec(num_classes=10, samples_per_class=100, ambient_dim=8, noise_scale=0.4, warp=True, seed=seed)
    cfg = TrainConfig(loss=LossConfig("CCL"), epochs=100, embed_dim=16, seed=seed)
    return data, cfg, EvalConfig()


@dataclass
class VariantRun:
    name: str
    seed: int
    result: object
    report: object
    histogram: object
    test_features: np.ndarray
    test_labels: np.ndarray

    @property
    def final_loss(self):
        tail = self.result.history.losses[-50:]
        return float(np.mean(tail)) if tail else float("nan")

    def row(self):
        r = self.report
        return {
            "name": self.name,
            "seed": self.seed,
            "final_loss": self.final_loss,
            "verification_accuracy": r.verification_accuracy,
            "rank1": r.rank1_rate,
            "intra_angle": r.intra_angle,
            "inter_angle": r.inter_angle,
            "orthant_coverage": r.orthant_fraction,
        }


def run_variant(data_spec, train_cfg, eval_cfg, variant=None):
    """Train one variant on ``data_spec`` and evaluate it on held-out data."""
    if variant is not None:
        train_cfg = replace(train_cfg, loss=variant.loss, bn_affine=variant.bn_affine)
    name = variant.name if variant is not None else train_cfg.loss.variant.value
    trainset = generate_synthetic(data_spec, "train")
    testset = generate_synthetic(data_spec, "test")
    result = train(train_cfg, trainset)
    centralized = train_cfg.loss.centralizes

    def embed(X):
        return embed_dataset(result.net, result.state, X, centralized, result.affine)

    feats = embed(testset.X)
    pairs = make_pairs(testset, eval_cfg.num_positive, eval_cfg.num_negative, data_spec.seed, eval_cfg.hard_negatives)
    labels = testset.labels
    _, first = np.unique(labels, return_index=True)
    mask = np.zeros(labels.size, bool)
    mask[first] = True
    gallery_X, gallery_ids = feats[mask], labels[mask]
    if eval_cfg.num_distractors:
        distract = generate_distractors(data_spec, eval_cfg.num_distractors)
        gallery_X = np.vstack([gallery_X, embed(distract.X)])
        gallery_ids = np.concatenate([gallery_ids, distract.labels])
    report, hist = build_report(
        feats,
        labels,
        pairs,
        folds=eval_cfg.folds,
        num_bins=eval_cfg.num_bins,
        gallery=(gallery_X, gallery_ids),
        probes=(feats[~mask], labels[~mask]),
        seed=data_spec.seed,
    )
    return VariantRun(name, train_cfg.seed, result, report, hist, feats, labels)
