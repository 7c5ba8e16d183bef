"""Softmax-family classification losses with analytic gradients.

All angular variants share one code path: the logit of class k for sample i
is ``||x_i|| * cos(mult_ik * theta_ik)`` where ``theta_ik`` is the clamped
angle between ``x_i`` and the normalized class vector and ``mult`` is 1
everywhere except on the true class (``m`` for SphereMargin, the adaptive
factor for the AAM term). Margin multipliers are constants under
differentiation.
"""

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core_math import ARCCOS_CLAMP, safe_arccos
from .errors import ConfigError, DegenerateInputError, NumericError, ShapeError


class Variant(str, enum.Enum):
    PLAIN_SOFTMAX = "PlainSoftmax"
    MODIFIED_SOFTMAX = "ModifiedSoftmax"
    A_SOFTMAX = "ASoftmax"
    SPHERE_MARGIN = "SphereMargin"
    L2_CONSTRAINED = "L2Constrained"
    CCL = "CCL"
    CCL_AAM = "CCL_AAM"

    def __str__(self):
        return self.value


ANGULAR_VARIANTS = frozenset(
    {Variant.A_SOFTMAX, Variant.SPHERE_MARGIN, Variant.L2_CONSTRAINED, Variant.CCL, Variant.CCL_AAM}
)
CENTRALIZED_VARIANTS = frozenset({Variant.CCL, Variant.CCL_AAM})

DEFAULT_MARGIN = 4
DEFAULT_ALPHA = 4.0
DEFAULT_LAMBDA = 3.0


@dataclass(frozen=True)
class LossConfig:
    """Selects a loss variant; hyperparameters default per variant and must
    be ``None`` for variants that do not use them."""

    variant: Variant
    m: int | None = None
    alpha: float | None = None
    lam: float | None = None
    use_bias: bool | None = None

    def __post_init__(self):
        try:
            variant = Variant(self.variant)
        except ValueError:
            raise ConfigError(f"unknown loss variant {self.variant!r}") from None
        object.__setattr__(self, "variant", variant)
        owners = {
            "m": Variant.SPHERE_MARGIN,
            "alpha": Variant.L2_CONSTRAINED,
            "lam": Variant.CCL_AAM,
            "use_bias": Variant.PLAIN_SOFTMAX,
        }
        defaults = {"m": DEFAULT_MARGIN, "alpha": DEFAULT_ALPHA, "lam": DEFAULT_LAMBDA, "use_bias": True}
        for name, owner in owners.items():
            value = getattr(self, name)
            if variant is owner:
                if value is None:
                    object.__setattr__(self, name, defaults[name])
            elif value is not None:
                raise ConfigError(f"{name} is not a parameter of {variant.value}")
        if variant is Variant.SPHERE_MARGIN and (int(self.m) != self.m or self.m < 1):
            raise ConfigError("m must be an integer >= 1")
        if variant is Variant.L2_CONSTRAINED and not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if variant is Variant.CCL_AAM and not self.lam >= 0:
            raise ConfigError("lambda must be nonnegative")

    @property
    def is_angular(self):
        return self.variant in ANGULAR_VARIANTS

    @property
    def centralizes(self):
        return self.variant in CENTRALIZED_VARIANTS

    @property
    def has_bias(self):
        return self.variant is Variant.PLAIN_SOFTMAX and bool(self.use_bias)

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if v is not None}
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"variant", "m", "alpha", "lam", "use_bias"}
        if unknown:
            raise ConfigError(f"unknown loss keys: {sorted(unknown)}")
        if "variant" not in d:
            raise ConfigError("loss.variant is required")
        return cls(**d)


@dataclass
class ClassifierWeights:
    W: np.ndarray
    b: np.ndarray | None = None

    @property
    def num_classes(self):
        return self.W.shape[0]

    def copy(self):
        return ClassifierWeights(self.W.copy(), None if self.b is None else self.b.copy())


@dataclass
class LossOutput:
    loss: float
    probs: np.ndarray
    grad_features: np.ndarray
    grad_weights: np.ndarray
    grad_bias: np.ndarray | None
    per_sample_theta: np.ndarray
    per_sample_loss: np.ndarray
    # CCL_AAM only: the adaptive factor used per sample and the two loss terms.
    eta: np.ndarray | None = None
    parts: dict = field(default_factory=dict)


def eta(theta):
    """Adaptive margin factor for a true-class angle (scalar or array).

    In the middle branch the factor is nudged down by one ulp where needed so
    that ``eta(theta) * theta`` never rounds above pi/3.
    """
    t = np.asarray(theta, dtype=np.float64)
    third = math.pi / 3
    safe_t = np.where(t > 0, t, 1.0)
    mid = third / safe_t
    mid = np.where(mid * safe_t > third, np.nextafter(mid, 0.0), mid)
    out = np.where(t > third, 1.0, np.where(t > math.pi / 30, mid, 10.0))
    return float(out) if out.ndim == 0 else out


def normalize_rows(W):
    W = np.asarray(W.W if isinstance(W, ClassifierWeights) else W, dtype=np.float64)
    norms = np.linalg.norm(W, axis=1)
    if (norms < 1e-12).any():
        raise DegenerateInputError(f"zero classifier row(s): {np.flatnonzero(norms < 1e-12).tolist()}")
    return W / norms[:, None]


def l2_constrain(features, alpha):
    x = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    if (norms == 0.0).any():
        raise DegenerateInputError("cannot rescale a zero feature row")
    return alpha * x / norms[:, None]


def l2_constrain_backward(grad_out, features, alpha):
    x = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    xh = x / norms[:, None]
    radial = (grad_out * xh).sum(axis=1)
    return alpha * (grad_out - xh * radial[:, None]) / norms[:, None]


def _log_softmax(z):
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _cross_entropy(z, labels):
    """Per-sample loss, probabilities and dL/dz for a batch-mean reduction."""
    logp = _log_softmax(z)
    n = z.shape[0]
    rows = np.arange(n)
    per_sample = -logp[rows, labels]
    probs = np.exp(logp)
    g = probs.copy()
    g[rows, labels] -= 1.0
    return per_sample, probs, g / n


def _angular_terms(x, W, labels, true_mult):
    """Logits and the pieces needed for the angular gradient."""
    r = np.linalg.norm(x, axis=1)
    if (r == 0.0).any():
        raise DegenerateInputError("zero feature row has no angle")
    wn = np.linalg.norm(W, axis=1)
    if (wn < 1e-12).any():
        raise DegenerateInputError("zero classifier row")
    w_hat = W / wn[:, None]
    x_hat = x / r[:, None]
    c = x_hat @ w_hat.T
    theta = safe_arccos(c)
    theta = np.atleast_2d(theta)
    rows = np.arange(x.shape[0])
    mult = np.ones_like(theta)
    mult[rows, labels] = true_mult
    phi = np.cos(mult * theta)
    # d cos(mult*theta)/dc; zero where the clamp is active
    dphi = mult * np.sin(mult * theta) / np.sin(theta)
    dphi[np.abs(c) > 1.0 - ARCCOS_CLAMP] = 0.0
    return dict(r=r, wn=wn, w_hat=w_hat, x_hat=x_hat, c=c, theta=theta, phi=phi, dphi=dphi, z=r[:, None] * phi)


def _angular_backward(t, g):
    """Gradients of sum(g * z) for angular logits wrt features and W."""
    h = g * t["dphi"]
    grad_x = t["x_hat"] * (g * (t["phi"] - t["dphi"] * t["c"])).sum(axis=1)[:, None] + h @ t["w_hat"]
    hr = h * t["r"][:, None]
    grad_w = (hr.T @ t["x_hat"] - (hr * t["c"]).sum(axis=0)[:, None] * t["w_hat"]) / t["wn"][:, None]
    return grad_x, grad_w


def _validate(features, weights, labels):
    x = np.asarray(features, dtype=np.float64)
    W = np.asarray(weights.W, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"features {x.shape} incompatible with weights {W.shape}")
    if y.shape != (x.shape[0],):
        raise ShapeError("need one label per feature row")
    if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= W.shape[0]):
        raise IndexError(f"labels must be integers in [0, {W.shape[0]})")
    if not np.isfinite(x).all():
        raise NumericError("non-finite feature value")
    return x, W, y.astype(np.intp)


def forward_loss(config, features, weights, labels, frozen_eta=None):
    """Batch-mean loss, probabilities and exact gradients for ``config``.

    ``features`` must already carry the variant's transform (centralized for
    CCL variants, rescaled for L2Constrained). ``frozen_eta`` overrides the
    adaptive factor for CCL_AAM; the finite-difference oracle uses it to hold
    the factor at its unperturbed value.
    """
    x, W, y = _validate(features, weights, labels)
    v = config.variant
    n = x.shape[0]
    rows = np.arange(n)
    grad_bias = None
    eta_used = None
    parts = {}

    if v is Variant.PLAIN_SOFTMAX or v is Variant.MODIFIED_SOFTMAX:
        if v is Variant.PLAIN_SOFTMAX:
            z = x @ W.T
            if config.has_bias:
                z = z + weights.b
        else:
            w_hat = normalize_rows(W)
            z = x @ w_hat.T
        per_sample, probs, g = _cross_entropy(z, y)
        if v is Variant.PLAIN_SOFTMAX:
            grad_x = g @ W
            grad_w = g.T @ x
            if config.has_bias:
                grad_bias = g.sum(axis=0)
        else:
            wn = np.linalg.norm(W, axis=1)
            grad_x = g @ w_hat
            grad_w = (g.T @ x - (g * z).sum(axis=0)[:, None] * w_hat) / wn[:, None]
        r = np.linalg.norm(x, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos_true = (x * normalize_rows(W)[y]).sum(axis=1) / r
        theta_y = safe_arccos(np.nan_to_num(cos_true))
    else:
        if v is Variant.SPHERE_MARGIN:
            true_mult = float(config.m)
        else:
            true_mult = 1.0
        t = _angular_terms(x, W, y, true_mult)
        per_sample, probs, g = _cross_entropy(t["z"], y)
        grad_x, grad_w = _angular_backward(t, g)
        theta_y = t["theta"][rows, y]
        if v is Variant.CCL_AAM:
            if frozen_eta is None:
                eta_used = eta(theta_y)
            else:
                eta_used = np.asarray(frozen_eta, dtype=np.float64).reshape(n)
            ta = _angular_terms(x, W, y, eta_used)
            per_aam, _, g_aam = _cross_entropy(ta["z"], y)
            gx_aam, gw_aam = _angular_backward(ta, g_aam)
            # (lam*L_sf + L_aam)/(lam+1), written to be exact when the terms agree
            k = 1.0 / (config.lam + 1.0)
            parts = {"sf": per_sample, "aam": per_aam}
            per_sample = per_sample + (per_aam - per_sample) * k
            grad_x = grad_x + (gx_aam - grad_x) * k
            grad_w = grad_w + (gw_aam - grad_w) * k

    loss = float(per_sample.mean()) if n else 0.0
    if not math.isfinite(loss):
        raise NumericError("loss is not finite")
    return LossOutput(
        loss=loss,
        probs=probs,
        grad_features=grad_x,
        grad_weights=grad_w,
        grad_bias=grad_bias,
        per_sample_theta=np.asarray(theta_y, dtype=np.float64).reshape(n),
        per_sample_loss=per_sample,
        eta=eta_used,
        parts=parts,
    )


def relative_error(analytic, numeric, floor=1e-5):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max()) if analytic.size else 0.0


def gradient_check(config, features, weights, labels, h=1e-5, loss_fn=None):
    """Max elementwise relative error between analytic and central-difference
    gradients of the batch loss wrt features, W and (if used) the bias.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-5)``; the floor keeps
    entries at the finite-difference noise level from dominating. For
    CCL_AAM the adaptive factor is frozen at the unperturbed angles.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError("step h must lie in [1e-6, 1e-4]")
    loss_fn = loss_fn or forward_loss
    x = np.array(features, dtype=np.float64)
    wts = weights.copy()
    base = loss_fn(config, x, wts, labels)
    frozen = base.eta

    def f():
        return forward_loss(config, x, wts, labels, frozen_eta=frozen).loss

    def numeric(arr):
        grad = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + h
            fp = f()
            arr[idx] = old - h
            fm = f()
            arr[idx] = old
            grad[idx] = (fp - fm) / (2.0 * h)
        return grad

    errs = [
        relative_error(base.grad_features, numeric(x)),
        relative_error(base.grad_weights, numeric(wts.W)),
    ]
    if base.grad_bias is not None:
        errs.append(relative_error(base.grad_bias, numeric(wts.b)))
    return max(errs)


def random_instance(rng, n=None, d=None, k=None, with_bias=False):
    """A small random (features, weights, labels) triple for gradient checks."""
    n = n or int(rng.integers(2, 9))
    d = d or int(rng.integers(2, 7))
    k = k or int(rng.integers(2, 6))
    x = rng.normal(size=(n, d)) * rng.uniform(0.5, 3.0)
    W = rng.normal(size=(k, d))
    b = rng.normal(size=k) if with_bias else None
    labels = rng.integers(0, k, size=n)
    return x, ClassifierWeights(W, b), labels
