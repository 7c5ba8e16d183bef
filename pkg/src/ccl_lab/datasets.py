"""Synthetic labelled data, verification pairs, and on-disk formats.

Formats
-------
features CSV   header ``label,f0,f1,...``; integer label then ``%.17g`` doubles
pairs CSV      header ``index_a,index_b,is_positive`` with a 0/1 flag
checkpoint     one JSON document; arrays are base64 of little-endian float64
"""

import base64
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError

CHECKPOINT_FORMAT_VERSION = 1
_SPLITS = {"train": 1, "test": 2, "distractor": 3}


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    samples_per_class: int = 100
    ambient_dim: int = 8
    noise_scale: float = 0.4
    warp: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.samples_per_class < 2:
            raise ConfigError("samples_per_class must be >= 2")
        if self.ambient_dim < 1:
            raise ConfigError("ambient_dim must be >= 1")
        if not self.noise_scale > 0:
            raise ConfigError("noise_scale must be positive")


@dataclass
class Dataset:
    X: np.ndarray
    labels: np.ndarray
    num_classes: int = field(default=0)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.X.ndim != 2 or self.labels.shape != (self.X.shape[0],):
            raise ValueError("X must be N x d with one label per row")
        if not self.num_classes and self.labels.size:
            self.num_classes = int(self.labels.max()) + 1

    def __len__(self):
        return self.X.shape[0]


@dataclass
class PairList:
    index_a: np.ndarray
    index_b: np.ndarray
    is_positive: np.ndarray

    def __post_init__(self):
        self.index_a = np.asarray(self.index_a, dtype=np.int64)
        self.index_b = np.asarray(self.index_b, dtype=np.int64)
        self.is_positive = np.asarray(self.is_positive, dtype=bool)
        if not (self.index_a.shape == self.index_b.shape == self.is_positive.shape):
            raise ValueError("pair columns must have equal length")

    def __len__(self):
        return self.index_a.shape[0]

    def validate(self, n_samples):
        bad = np.flatnonzero(
            (self.index_a < 0) | (self.index_a >= n_samples) | (self.index_b < 0) | (self.index_b >= n_samples)
        )
        if bad.size:
            raise IndexError(f"pair row {int(bad[0])} references a sample outside [0, {n_samples})")


def _random_rotation(rng, dim):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


def class_prototypes(spec):
    rng = np.random.default_rng([spec.seed, 0])
    protos = rng.normal(size=(spec.num_classes, spec.ambient_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    rotation = _random_rotation(rng, spec.ambient_dim)
    return protos, rotation


def generate_synthetic(spec, split="train"):
    """Gaussian clusters around unit-sphere prototypes, optionally warped.

    Prototypes and the warp rotation depend only on ``spec.seed``; the noise
    stream also depends on ``split``, so "train" and "test" share classes but
    not samples. With ``warp`` every sample goes through a fixed random
    rotation and then ``tanh(2u)``.
    """
    if split not in _SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    protos, rotation = class_prototypes(spec)
    rng = np.random.default_rng([spec.seed, _SPLITS[split]])
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    X = protos[labels] + spec.noise_scale * rng.normal(size=(labels.size, spec.ambient_dim))
    if spec.warp:
        X = np.tanh(2.0 * (X @ rotation.T))
    return Dataset(X, labels, spec.num_classes)


def generate_distractors(spec, count):
    """Samples of ``count`` fresh identities (one sample each) pushed through
    the same warp as ``spec``. Labels start at ``spec.num_classes``."""
    _, rotation = class_prototypes(spec)
    rng = np.random.default_rng([spec.seed, _SPLITS["distractor"]])
    protos = rng.normal(size=(count, spec.ambient_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    X = protos + spec.noise_scale * rng.normal(size=protos.shape)
    if spec.warp:
        X = np.tanh(2.0 * (X @ rotation.T))
    return Dataset(X, spec.num_classes + np.arange(count), spec.num_classes + count)


def _cosine_matrix(X):
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    Xn = X / np.where(norms > 0, norms, 1.0)
    return Xn @ Xn.T


def make_pairs(dataset, num_positive, num_negative, seed=0, hard_negatives=False):
    """Sample verification pairs; the returned list is shuffled.

    Positives are distinct within-class pairs drawn without replacement.
    Negatives are random cross-class pairs, or with ``hard_negatives`` the
    cross-class pairs with the highest raw-input cosine similarity.
    """
    if num_positive < 0 or num_negative < 0:
        raise ConfigError("pair counts must be nonnegative")
    rng = np.random.default_rng([seed, 7])
    labels = dataset.labels
    n = len(dataset)
    ia, ib = np.triu_indices(n, k=1)
    same = labels[ia] == labels[ib]
    pos_a, pos_b = ia[same], ib[same]
    neg_a, neg_b = ia[~same], ib[~same]
    if num_positive > pos_a.size:
        raise ConfigError(f"requested {num_positive} positive pairs but only {pos_a.size} exist")
    if num_negative > neg_a.size:
        raise ConfigError(f"requested {num_negative} negative pairs but only {neg_a.size} exist")

    pick = np.sort(rng.choice(pos_a.size, size=num_positive, replace=False))
    a = [pos_a[pick]]
    b = [pos_b[pick]]
    if hard_negatives:
        sims = _cosine_matrix(dataset.X)[neg_a, neg_b]
        order = np.argsort(-sims, kind="stable")[:num_negative]
    else:
        order = np.sort(rng.choice(neg_a.size, size=num_negative, replace=False))
    a.append(neg_a[order])
    b.append(neg_b[order])
    flags = np.concatenate([np.ones(num_positive, bool), np.zeros(num_negative, bool)])
    perm = rng.permutation(flags.size)
    return PairList(np.concatenate(a)[perm], np.concatenate(b)[perm], flags[perm])


def save_features(path, X, labels):
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if X.ndim != 2 or labels.shape != (X.shape[0],):
        raise ValueError("X must be N x D with one label per row")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["label"] + [f"f{j}" for j in range(X.shape[1])]) + "\n")
        for lab, row in zip(labels, X):
            fh.write(",".join([str(int(lab))] + ["%.17g" % v for v in row]) + "\n")


def load_features(path):
    """Read a features CSV; returns ``(X, labels)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty features file", line=1)
    header = rows[0]
    if not header or header[0] != "label" or header[1:] != [f"f{j}" for j in range(len(header) - 1)]:
        raise ParseError("header must be label,f0,f1,...", line=1)
    width = len(header) - 1
    X = np.empty((len(rows) - 1, width))
    labels = np.empty(len(rows) - 1, dtype=np.int64)
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != width + 1:
            raise ParseError(f"row has {len(row) - 1} feature columns, header declares {width}", line=line)
        try:
            labels[i] = int(row[0])
            X[i] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ParseError(str(exc), line=line) from None
    return X, labels


def save_pairs(path, pairs):
    with open(path, "w", newline="") as fh:
        fh.write("index_a,index_b,is_positive\n")
        for a, b, p in zip(pairs.index_a, pairs.index_b, pairs.is_positive):
            fh.write(f"{int(a)},{int(b)},{int(p)}\n")


def load_pairs(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["index_a", "index_b", "is_positive"]:
        raise ParseError("header must be index_a,index_b,is_positive", line=1)
    cols = ([], [], [])
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != 3 or row[2] not in ("0", "1"):
            raise ParseError("expected index_a,index_b,0|1", line=line)
        try:
            cols[0].append(int(row[0]))
            cols[1].append(int(row[1]))
        except ValueError as exc:
            raise ParseError(str(exc), line=line) from None
        cols[2].append(row[2] == "1")
    return PairList(*cols)


def encode_array(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(obj):
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).astype(np.float64)


@dataclass
class Checkpoint:
    net: object
    weights: object
    state: object
    loss: object
    affine: object = None
    seed: int = 0


def save_checkpoint(path, ckpt):
    net, w, st = ckpt.net, ckpt.weights, ckpt.state
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "seed": int(ckpt.seed),
        "loss": ckpt.loss.to_dict(),
        "layer_dims": [int(d) for d in net.layer_dims],
        "layers": [{"W": encode_array(Wl), "b": encode_array(bl)} for Wl, bl in zip(net.weights, net.biases)],
        "classifier": {"W": encode_array(w.W), "b": None if w.b is None else encode_array(w.b)},
        "origin_state": {
            "o": encode_array(st.o),
            "sigma": encode_array(st.sigma),
            "rho": st.rho,
            "eps": st.eps,
            "batches_seen": int(st.batches_seen),
        },
        "affine": None
        if ckpt.affine is None
        else {
            "gamma": encode_array(ckpt.affine.gamma),
            "beta": None if ckpt.affine.beta is None else encode_array(ckpt.affine.beta),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    from .centralization import AffineParams, OriginState
    from .losses import ClassifierWeights, LossConfig
    from .model import EmbeddingNet

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint is not valid JSON: {exc.msg}", line=exc.lineno) from None
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    try:
        net = EmbeddingNet(
            layer_dims=list(doc["layer_dims"]),
            weights=[decode_array(l["W"]) for l in doc["layers"]],
            biases=[decode_array(l["b"]) for l in doc["layers"]],
            seed=doc["seed"],
        )
        cls = doc["classifier"]
        weights = ClassifierWeights(decode_array(cls["W"]), None if cls["b"] is None else decode_array(cls["b"]))
        so = doc["origin_state"]
        state = OriginState(
            o=decode_array(so["o"]),
            sigma=decode_array(so["sigma"]),
            rho=so["rho"],
            eps=so["eps"],
            batches_seen=so["batches_seen"],
        )
        affine = None
        if doc["affine"] is not None:
            af = doc["affine"]
            affine = AffineParams(decode_array(af["gamma"]), None if af["beta"] is None else decode_array(af["beta"]))
        loss = LossConfig.from_dict(doc["loss"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed checkpoint: {exc}") from None
    return Checkpoint(net=net, weights=weights, state=state, loss=loss, affine=affine, seed=doc["seed"])
