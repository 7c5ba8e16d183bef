"""Verification, identification and embedding-geometry measurements.

Every entry point unit-normalizes features itself before scoring.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateInputError, InsufficientDataError

INTRA_PAIR_CAP = 100_000


def _angles(cosines):
    # measurement, not gradient path: no interior clamp, so identical vectors give 0
    return np.arccos(np.clip(cosines, -1.0, 1.0))


def unit_rows(features):
    X = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if (norms == 0.0).any():
        raise DegenerateInputError("zero feature vector cannot be normalized")
    return X / norms


def pair_scores(features, pairs):
    pairs.validate(len(features))
    Xn = unit_rows(features)
    s = (Xn[pairs.index_a] * Xn[pairs.index_b]).sum(axis=1)
    # a vector against itself lands within an ulp of 1 depending on its scale
    s[pairs.index_a == pairs.index_b] = 1.0
    return np.clip(s, -1.0, 1.0)


def fold_slices(n, folds):
    """Contiguous folds of ``n // folds`` items; the last absorbs the remainder."""
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    if folds >= n:
        raise ConfigError(f"{folds} folds cannot partition {n} pairs")
    size = n // folds
    bounds = [i * size for i in range(folds)] + [n]
    return [slice(bounds[i], bounds[i + 1]) for i in range(folds)]


def candidate_thresholds(scores):
    u = np.unique(scores)
    return np.concatenate([[-1.0], (u[:-1] + u[1:]) / 2.0, [1.0]])


def best_threshold(scores, labels):
    """Threshold maximizing accuracy of ``score > t``; ties go to the smaller t."""
    cands = candidate_thresholds(scores)
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    y = labels[order].astype(np.int64)
    n = s.size
    # number of scores <= t for each candidate
    below = np.searchsorted(s, cands, side="right")
    neg_below = np.concatenate([[0], np.cumsum(1 - y)])[below]
    pos_above = int(y.sum()) - np.concatenate([[0], np.cumsum(y)])[below]
    correct = neg_below + pos_above
    best = int(np.argmax(correct))  # first max == smallest threshold
    return float(cands[best]), correct[best] / n


@dataclass
class VerificationResult:
    fold_accuracies: list
    fold_thresholds: list
    accuracy: float


def verification_accuracy(features, pairs, folds=10):
    """Leave-one-fold-out thresholded cosine verification accuracy."""
    scores = pair_scores(features, pairs)
    labels = pairs.is_positive
    accs, thrs = [], []
    all_idx = np.arange(len(pairs))
    for sl in fold_slices(len(pairs), folds):
        train = np.ones(len(pairs), bool)
        train[sl] = False
        t, _ = best_threshold(scores[train], labels[train])
        test = all_idx[sl]
        accs.append(float(np.mean((scores[test] > t) == labels[test])))
        thrs.append(t)
    return VerificationResult(accs, thrs, float(np.mean(accs)))


def rank1_identification(probe_features, probe_ids, gallery_features, gallery_ids):
    """Fraction of probes whose most cosine-similar gallery entry shares the
    probe's identity; ties go to the lowest gallery index."""
    G = np.asarray(gallery_features, dtype=np.float64)
    if G.shape[0] == 0:
        raise ConfigError("gallery is empty")
    P = unit_rows(probe_features)
    if P.shape[0] == 0:
        return 0.0
    sims = P @ unit_rows(G).T
    nearest = np.argmax(sims, axis=1)
    return float(np.mean(np.asarray(gallery_ids)[nearest] == np.asarray(probe_ids)))


@dataclass
class Histogram:
    edges: np.ndarray
    pos_counts: np.ndarray
    neg_counts: np.ndarray

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("bin_low,bin_high,pos_count,neg_count\n")
            for lo, hi, p, q in zip(self.edges[:-1], self.edges[1:], self.pos_counts, self.neg_counts):
                fh.write(f"{lo!r},{hi!r},{int(p)},{int(q)}\n")


def similarity_histogram(features, pairs, num_bins=40):
    if num_bins < 2:
        raise ConfigError("need at least 2 bins")
    edges = np.linspace(-1.0, 1.0, num_bins + 1)
    if len(pairs) == 0:
        zeros = np.zeros(num_bins, dtype=np.int64)
        return Histogram(edges, zeros, zeros.copy())
    scores = pair_scores(features, pairs)
    pos, _ = np.histogram(scores[pairs.is_positive], bins=edges)
    neg, _ = np.histogram(scores[~pairs.is_positive], bins=edges)
    return Histogram(edges, pos, neg)


def _intra_pairs(labels, cap, seed):
    classes, counts = np.unique(labels, return_counts=True)
    per_class = counts * (counts - 1) // 2
    total = int(per_class.sum())
    if total <= cap:
        a, b = [], []
        for c in classes:
            idx = np.flatnonzero(labels == c)
            i, j = np.triu_indices(idx.size, k=1)
            a.append(idx[i])
            b.append(idx[j])
        return np.concatenate(a), np.concatenate(b)
    rng = np.random.default_rng([seed, 31])
    cls = rng.choice(classes.size, size=cap, p=per_class / total)
    members = [np.flatnonzero(labels == c) for c in classes]
    a = np.empty(cap, dtype=np.int64)
    b = np.empty(cap, dtype=np.int64)
    for k in range(classes.size):
        sel = np.flatnonzero(cls == k)
        if sel.size == 0:
            continue
        m = members[k]
        i = rng.integers(0, m.size, size=sel.size)
        j = (i + rng.integers(1, m.size, size=sel.size)) % m.size
        a[sel], b[sel] = m[i], m[j]
    return a, b


def angle_stats(features, labels, cap=INTRA_PAIR_CAP, seed=0):
    """Mean within-class pairwise angle and mean angle between class-mean
    directions (radians)."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise InsufficientDataError("angle statistics need at least 2 classes")
    if counts.max() < 2:
        raise InsufficientDataError("no class has 2 samples")
    Xn = unit_rows(features)
    a, b = _intra_pairs(labels, cap, seed)
    intra = float(_angles((Xn[a] * Xn[b]).sum(axis=1)).mean())
    means = np.stack([np.asarray(features, dtype=np.float64)[labels == c].mean(axis=0) for c in classes])
    Mn = unit_rows(means)
    i, j = np.triu_indices(classes.size, k=1)
    inter = float(np.mean(_angles((Mn[i] * Mn[j]).sum(axis=1))))
    return intra, inter


@dataclass
class OrthantCoverage:
    fraction: float
    min_mass: float
    counts: list
    centering: list  # |mean| / std per dimension


def orthant_coverage(features):
    """Share of sign-orthants that contain at least one point. Zero counts as
    positive."""
    X = np.asarray(features, dtype=np.float64)
    d = X.shape[1]
    if d > 16:
        raise ConfigError("orthant enumeration limited to D <= 16")
    codes = ((X >= 0).astype(np.int64) << np.arange(d)).sum(axis=1)
    counts = np.bincount(codes, minlength=2**d)
    std = X.std(axis=0)
    centering = np.abs(X.mean(axis=0)) / np.where(std > 0, std, np.inf)
    return OrthantCoverage(
        fraction=float(np.count_nonzero(counts) / 2**d),
        min_mass=float(counts.min() / max(X.shape[0], 1)),
        counts=counts.tolist(),
        centering=centering.tolist(),
    )


@dataclass
class EvalReport:
    fold_accuracies: list
    fold_thresholds: list
    verification_accuracy: float
    rank1_rate: float
    histogram_edges: list
    histogram_pos: list
    histogram_neg: list
    intra_angle: float
    inter_angle: float
    orthant_fraction: float | None
    orthant_min_mass: float | None
    centering: list | None
    intra_pair_cap: int = INTRA_PAIR_CAP
    extra: dict = field(default_factory=dict)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=1, sort_keys=True)
            fh.write("\n")


def build_report(features, labels, pairs, folds=10, num_bins=40, gallery=None, probes=None, seed=0):
    """Run every protocol on one embedded test set.

    ``gallery`` and ``probes`` are ``(features, ids)`` tuples; when omitted
    the first sample of every class forms the gallery and the rest probe it.
    """
    labels = np.asarray(labels)
    if gallery is None or probes is None:
        _, first = np.unique(labels, return_index=True)
        mask = np.zeros(labels.size, bool)
        mask[first] = True
        gallery = gallery or (features[mask], labels[mask])
        probes = probes or (features[~mask], labels[~mask])
    ver = verification_accuracy(features, pairs, folds)
    hist = similarity_histogram(features, pairs, num_bins)
    intra, inter = angle_stats(features, labels, seed=seed)
    cov = orthant_coverage(features) if features.shape[1] <= 16 else None
    return EvalReport(
        fold_accuracies=ver.fold_accuracies,
        fold_thresholds=ver.fold_thresholds,
        verification_accuracy=ver.accuracy,
        rank1_rate=rank1_identification(probes[0], probes[1], gallery[0], gallery[1]),
        histogram_edges=hist.edges.tolist(),
        histogram_pos=hist.pos_counts.tolist(),
        histogram_neg=hist.neg_counts.tolist(),
        intra_angle=intra,
        inter_angle=inter,
        orthant_fraction=None if cov is None else cov.fraction,
        orthant_min_mass=None if cov is None else cov.min_mass,
        centering=None if cov is None else cov.centering,
    ), hist
