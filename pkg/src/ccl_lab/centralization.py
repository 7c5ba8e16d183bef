"""Feature centralization with running origin/deviation statistics.

The forward transform always uses the running statistics; batch statistics
only feed :func:`update_stats`. Statistics are treated as constants during
backprop.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import InsufficientDataError, ShapeError

DEFAULT_RHO = 0.995
DEFAULT_EPS = 1e-5


@dataclass(frozen=True)
class OriginState:
    o: np.ndarray
    sigma: np.ndarray
    rho: float = DEFAULT_RHO
    eps: float = DEFAULT_EPS
    batches_seen: int = 0

    @classmethod
    def identity(cls, dim, rho=DEFAULT_RHO, eps=DEFAULT_EPS):
        return cls(o=np.zeros(dim), sigma=np.ones(dim), rho=rho, eps=eps)

    @property
    def dim(self):
        return self.o.shape[0]

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        o = np.asarray(self.o, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if o.ndim != 1 or o.shape != sigma.shape:
            raise ShapeError("o and sigma must be vectors of equal length")
        if not (np.isfinite(o).all() and np.isfinite(sigma).all()):
            raise ValueError("origin state must be finite")
        object.__setattr__(self, "o", o)
        object.__setattr__(self, "sigma", np.maximum(sigma, self.eps))


@dataclass
class AffineParams:
    """Per-dimension scale and shift for the BN-style ablation.

    ``beta`` is ``None`` for the scale-only ("no beta") variant.
    """

    gamma: np.ndarray
    beta: np.ndarray | None = None

    @classmethod
    def identity(cls, dim, with_beta=True):
        return cls(gamma=np.ones(dim), beta=np.zeros(dim) if with_beta else None)


def _check_batch(batch, state):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != state.dim:
        raise ShapeError(f"expected an N x {state.dim} batch, got shape {batch.shape}")
    return batch


def centralize(batch, state):
    batch = _check_batch(batch, state)
    return (batch - state.o) / state.sigma


def centralize_backward(grad_out, state):
    return grad_out / state.sigma


def centralize_affine(batch, state, params):
    if params.gamma.shape != (state.dim,) or (
        params.beta is not None and params.beta.shape != (state.dim,)
    ):
        raise ShapeError("affine parameters must have length D")
    out = params.gamma * centralize(batch, state)
    if params.beta is not None:
        out = out + params.beta
    return out


def centralize_affine_backward(grad_out, batch, state, params):
    """Returns (grad_batch, grad_gamma, grad_beta); grad_beta is None without beta."""
    normed = centralize(batch, state)
    grad_gamma = (grad_out * normed).sum(axis=0)
    grad_beta = grad_out.sum(axis=0) if params.beta is not None else None
    return grad_out * params.gamma / state.sigma, grad_gamma, grad_beta


def batch_stats(batch):
    """Per-dimension mean and biased (divide-by-N) standard deviation."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] < 2:
        raise InsufficientDataError("batch statistics need at least 2 rows")
    return batch.mean(axis=0), batch.std(axis=0)


def update_stats(state, batch):
    """Moving-average update of the origin and deviation; returns a new state."""
    batch = _check_batch(batch, state)
    o_b, sigma_b = batch_stats(batch)
    rho = state.rho
    o_new = rho * state.o + (1.0 - rho) * o_b
    sigma_new = rho * state.sigma + (1.0 - rho) * sigma_b
    return replace(state, o=o_new, sigma=sigma_new, batches_seen=state.batches_seen + 1)
