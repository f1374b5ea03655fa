"""Single-mode Gaussian process machinery with a squared-exponential kernel.

All covariance algebra goes through one lower Cholesky factor of
``C + diag(noise^2)``; the log-determinant comes from the factor's diagonal.
Hyperparameters live in log space so box projection keeps them positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

__all__ = [
    "DEFAULT_LOG_BOUNDS",
    "BASE_JITTER",
    "NLML_SENTINEL",
    "CholeskyError",
    "KernelHyper",
    "GPDataset",
    "GPPosterior",
    "se_kernel",
    "covariance_matrix",
    "cross_covariance",
    "posterior",
    "nlml",
    "nlml_gradient",
    "nlml_value_and_gradient",
    "standardize",
]

# box constraints for (log gamma, log beta)
DEFAULT_LOG_BOUNDS = (
    (math.log(0.1), math.log(10.0)),
    (math.log(0.02), math.log(1.5)),
)
BASE_JITTER = 1e-6
NLML_SENTINEL = 1e12


class CholeskyError(RuntimeError):
    """Raised when C + diag(noise^2) is not numerically positive definite."""


@dataclass(frozen=True)
class KernelHyper:
    """SE-kernel hyperparameters stored as logs, projected into their box."""

    log_gamma: float
    log_beta: float
    bounds: tuple = DEFAULT_LOG_BOUNDS

    def __post_init__(self):
        (g_lo, g_hi), (b_lo, b_hi) = self.bounds
        object.__setattr__(self, "log_gamma", float(min(max(self.log_gamma, g_lo), g_hi)))
        object.__setattr__(self, "log_beta", float(min(max(self.log_beta, b_lo), b_hi)))

    @classmethod
    def from_physical(cls, gamma: float, beta: float, bounds=DEFAULT_LOG_BOUNDS) -> "KernelHyper":
        if gamma <= 0 or beta <= 0:
            raise ValueError(f"gamma and beta must be positive, got ({gamma}, {beta})")
        return cls(math.log(gamma), math.log(beta), bounds)

    @property
    def gamma(self) -> float:
        return math.exp(self.log_gamma)

    @property
    def beta(self) -> float:
        return math.exp(self.log_beta)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GPDataset:
    """Observations for one mode, in standardized units.

    Datasets built by :func:`standardize` carry the augmented form used by the
    expansion pipeline: a virtual base observation (height 0, value 0, jitter
    noise) followed by the sensor rows.  ``scale`` restores physical units.
    """

    x_obs: np.ndarray      # (n,) strictly increasing observation heights
    y_obs: np.ndarray      # (n,) observed values / scale
    noise_std: np.ndarray  # (n,) per-observation noise std / scale
    scale: float = 1.0

    def __post_init__(self):
        x = _frozen(self.x_obs)
        y = _frozen(self.y_obs)
        s = _frozen(self.noise_std)
        if x.ndim != 1 or x.shape != y.shape or x.shape != s.shape:
            raise ValueError("x_obs, y_obs and noise_std must be 1-D and equally long")
        if np.any(np.diff(x) <= 0):
            raise ValueError("observation heights must be strictly increasing")
        if np.any(s < 0):
            raise ValueError("noise standard deviations must be non-negative")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "x_obs", x)
        object.__setattr__(self, "y_obs", y)
        object.__setattr__(self, "noise_std", s)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def n_obs(self) -> int:
        return self.x_obs.size


@dataclass(frozen=True)
class GPPosterior:
    """Posterior mean and standard deviation over query heights, physical units."""

    query_heights: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "query_heights", _frozen(self.query_heights))
        object.__setattr__(self, "mean", _frozen(self.mean))
        object.__setattr__(self, "std", _frozen(self.std))


def se_kernel(x, x_other, hyper: KernelHyper):
    """Squared-exponential covariance gamma^2 exp(-(x-x')^2 / (2 beta^2))."""
    g = hyper.gamma
    b = hyper.beta
    diff = np.asarray(x, dtype=float) - np.asarray(x_other, dtype=float)
    return g * g * np.exp(-0.5 * diff * diff / (b * b))


def covariance_matrix(xs, hyper: KernelHyper) -> np.ndarray:
    """Symmetric SE Gram matrix over one set of heights."""
    xs = np.asarray(xs, dtype=float)
    return se_kernel(xs[:, None], xs[None, :], hyper)


def cross_covariance(xa, xb, hyper: KernelHyper) -> np.ndarray:
    """SE covariance between two sets of heights, shape (len(xa), len(xb))."""
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    return se_kernel(xa[:, None], xb[None, :], hyper)


def _chol_lower(data: GPDataset, hyper: KernelHyper) -> np.ndarray:
    """Lower Cholesky factor of C + diag(noise^2); CholeskyError on failure."""
    A = covariance_matrix(data.x_obs, hyper) + np.diag(data.noise_std ** 2)
    try:
        return cholesky(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise CholeskyError(
            f"covariance not positive definite at gamma={hyper.gamma:.6g}, "
            f"beta={hyper.beta:.6g} (n={data.n_obs})"
        ) from exc


def posterior(data: GPDataset, hyper: KernelHyper, query_heights) -> GPPosterior:
    """Posterior mean/std at the query heights, rescaled to physical units.

    Tiny negative predictive variances from round-off are clamped to zero
    before the square root.
    """
    xq = np.asarray(query_heights, dtype=float)
    L = _chol_lower(data, hyper)
    alpha = cho_solve((L, True), data.y_obs)
    Kq = cross_covariance(xq, data.x_obs, hyper)
    mean = Kq @ alpha
    v = solve_triangular(L, Kq.T, lower=True)
    var = np.maximum(hyper.gamma ** 2 - np.sum(v * v, axis=0), 0.0)
    return GPPosterior(query_heights=xq,
                       mean=mean * data.scale,
                       std=np.sqrt(var) * data.scale)


def nlml(data: GPDataset, hyper: KernelHyper) -> float:
    """Negative log-marginal likelihood; the 1e12 sentinel on Cholesky failure."""
    return nlml_value_and_gradient(data, hyper)[0]


def nlml_gradient(data: GPDataset, hyper: KernelHyper) -> np.ndarray:
    """Gradient of the NLML w.r.t. (log gamma, log beta); zeros on failure."""
    return nlml_value_and_gradient(data, hyper)[1]


def nlml_value_and_gradient(data: GPDataset, hyper: KernelHyper) -> tuple[float, np.ndarray]:
    """NLML and its log-space gradient from one Cholesky factorization.

    Uses -0.5 tr[(alpha alpha^T - A^-1) dC/dtheta] with dC/dlog gamma = 2C and
    dC/dlog beta = C .* dist^2 / beta^2.  A failed factorization is encoded as
    (NLML_SENTINEL, zero gradient) so optimizer line searches can recover.
    """
    try:
        L = _chol_lower(data, hyper)
    except CholeskyError:
        return NLML_SENTINEL, np.zeros(2)
    n = data.n_obs
    y = data.y_obs
    alpha = cho_solve((L, True), y)
    value = 0.5 * float(y @ alpha) + float(np.sum(np.log(np.diag(L)))) \
        + 0.5 * n * math.log(2.0 * math.pi)

    C = covariance_matrix(data.x_obs, hyper)
    A_inv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - A_inv
    sq_dist = (data.x_obs[:, None] - data.x_obs[None, :]) ** 2
    d_log_gamma = -0.5 * float(np.sum(W * (2.0 * C)))
    d_log_beta = -0.5 * float(np.sum(W * (C * sq_dist / hyper.beta ** 2)))
    return value, np.array([d_log_gamma, d_log_beta])


def standardize(sensor_heights, values, noise_std: float,
                base_jitter: float = BASE_JITTER) -> GPDataset:
    """Build the augmented, standardized dataset for one mode.

    The scale is the sample standard deviation (ddof=1) of the physical sensor
    values; values and noise are divided by it and a virtual base observation
    (height 0, value 0, jitter noise) is prepended.
    """
    x = np.asarray(sensor_heights, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("sensor_heights and values must be 1-D and equally long")
    if x.size < 2:
        raise ValueError("standardization needs at least 2 sensor values")
    if np.any(x <= 0) or np.any(x > 1):
        raise ValueError("sensor heights must lie in (0, 1]")
    if noise_std < 0:
        raise ValueError(f"noise_std must be non-negative, got {noise_std}")
    if base_jitter <= 0:
        raise ValueError(f"base_jitter must be positive, got {base_jitter}")
    scale = float(np.std(y, ddof=1))
    if scale <= 0.0 or not np.isfinite(scale):
        raise ValueError("degenerate mode data: sensor values have zero spread")
    return GPDataset(
        x_obs=np.concatenate(([0.0], x)),
        y_obs=np.concatenate(([0.0], y / scale)),
        noise_std=np.concatenate(([base_jitter], np.full(x.size, noise_std / scale))),
        scale=scale,
    )
