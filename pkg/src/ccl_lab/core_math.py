"""Special functions, angle primitives and chi-distribution statistics."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DomainError, ShapeError

ARCCOS_CLAMP = 1e-7

# Lanczos approximation, g = 7, n = 9.
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def log_gamma(x):
    """Natural log of the gamma function for positive real ``x``."""
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise DomainError(f"log_gamma requires a positive finite argument, got {x!r}")
    if x < 0.5:
        # reflection: Gamma(x) Gamma(1 - x) = pi / sin(pi x)
        return math.log(math.pi / math.sin(math.pi * x)) - log_gamma(1.0 - x)
    x -= 1.0
    series = _LANCZOS_COEF[0]
    for k in range(1, len(_LANCZOS_COEF)):
        series += _LANCZOS_COEF[k] / (x + k)
    t = x + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (x + 0.5) * math.log(t) - t + math.log(series)


def _check_dof(dof):
    if isinstance(dof, bool) or int(dof) != dof or dof < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {dof!r}")
    return int(dof)


def chi_mean(dof):
    """Mean of the chi distribution with ``dof`` degrees of freedom.

    This is the expected norm of a standard-normal vector of that dimension:
    sqrt(2) * Gamma((D + 1) / 2) / Gamma(D / 2).
    """
    d = _check_dof(dof)
    return math.sqrt(2.0) * math.exp(log_gamma((d + 1) / 2.0) - log_gamma(d / 2.0))


def chi_variance(dof):
    d = _check_dof(dof)
    return d - chi_mean(d) ** 2


@dataclass(frozen=True)
class ChiStats:
    dof: int
    mean: float
    variance: float


def chi_stats(dof):
    d = _check_dof(dof)
    mu = chi_mean(d)
    return ChiStats(dof=d, mean=mu, variance=d - mu**2)


def safe_arccos(c):
    """arccos with the argument clamped to [-1 + 1e-7, 1 - 1e-7].

    Works elementwise on arrays. The clamp keeps 1/sin(theta) bounded when
    the angle is differentiated.
    """
    arr = np.asarray(c, dtype=np.float64)
    if np.isnan(arr).any():
        raise DomainError("safe_arccos received NaN")
    out = np.arccos(np.clip(arr, -1.0 + ARCCOS_CLAMP, 1.0 - ARCCOS_CLAMP))
    return float(out) if out.ndim == 0 else out


def cosine_similarity(x1, x2, o=None):
    """Cosine of the angle between ``x1`` and ``x2`` seen from origin ``o``."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise ShapeError(f"shape mismatch {x1.shape} vs {x2.shape}")
    if o is None:
        o = np.zeros_like(x1)
    o = np.asarray(o, dtype=np.float64)
    if o.shape != x1.shape:
        raise ShapeError(f"origin shape {o.shape} does not match {x1.shape}")
    a = x1 - o
    b = x2 - o
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("vector coincides with the origin")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def angle_between(w_hat, v):
    """Angle in [0, pi] between unit vector ``w_hat`` and vector ``v``."""
    w_hat = np.asarray(w_hat, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if w_hat.shape != v.shape:
        raise ShapeError(f"shape mismatch {w_hat.shape} vs {v.shape}")
    if abs(np.linalg.norm(w_hat) - 1.0) > 1e-6:
        raise DomainError("w_hat must have unit norm")
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise DegenerateInputError("zero vector has no direction")
    return safe_arccos(w_hat @ v / nv)


def chi_monte_carlo(dof, samples, seed=0, chunk=1 << 21):
    """Empirical mean and (unbiased) variance of ||z|| for standard-normal z."""
    d = _check_dof(dof)
    rng = np.random.default_rng([seed, d])
    rows = max(1, chunk // d)
    norms = []
    remaining = samples
    while remaining > 0:
        n = min(rows, remaining)
        norms.append(np.linalg.norm(rng.standard_normal((n, d)), axis=1))
        remaining -= n
    r = np.concatenate(norms)
    return float(r.mean()), float(r.var(ddof=1))
