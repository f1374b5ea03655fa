"""Mass-orthogonality coupling of the per-mode GPs.

The joint objective adds lam * ||Phi~^T M Phi~ - I||_F^2 to the sum of the
per-mode NLMLs, where Phi~ collects the mass-normalized posterior mean shapes
over the non-base floors.  Every Jacobian needed to chain the penalty back to
the log-hyperparameters is analytic; a finite-difference audit lives in
:mod:`modegp.optimize`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve

from .gp import (
    CholeskyError,
    GPDataset,
    KernelHyper,
    _chol_lower,
    covariance_matrix,
    cross_covariance,
)

__all__ = [
    "JOINT_SENTINEL",
    "ModeBank",
    "ObjectiveEvaluation",
    "mass_normalize",
    "penalty",
    "penalty_gradient_modes",
    "normalization_jacobian",
    "posterior_mean_jacobian",
    "joint_objective",
]

JOINT_SENTINEL = 1e15
_MODAL_MASS_FLOOR = 1e-300


def mass_normalize(mu: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Scale a mode vector so mu^T M mu = 1."""
    mu = np.asarray(mu, dtype=float)
    q = float(mu @ M @ mu)
    if not q > _MODAL_MASS_FLOOR:
        raise ValueError(f"collapsed mean: modal mass {q:.3e} is not positive")
    return mu / np.sqrt(q)


def penalty(Phi: np.ndarray, M: np.ndarray) -> float:
    """Squared Frobenius norm of Phi^T M Phi - I."""
    Phi = np.asarray(Phi, dtype=float)
    R = Phi.T @ M @ Phi - np.eye(Phi.shape[1])
    return float(np.sum(R * R))


def penalty_gradient_modes(Phi: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Gradient of the penalty w.r.t. every mode-shape entry: 4 M Phi (Phi^T M Phi - I)."""
    Phi = np.asarray(Phi, dtype=float)
    R = Phi.T @ M @ Phi - np.eye(Phi.shape[1])
    return 4.0 * M @ Phi @ R


def normalization_jacobian(mu: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Jacobian of mu / sqrt(mu^T M mu) w.r.t. mu.

    Equals (I - mu mu^T M / (mu^T M mu)) / sqrt(mu^T M mu); its product with
    mu itself vanishes (normalization is scale invariant).
    """
    mu = np.asarray(mu, dtype=float)
    q = float(mu @ M @ mu)
    if not q > _MODAL_MASS_FLOOR:
        raise ValueError(f"collapsed mean: modal mass {q:.3e} is not positive")
    n = mu.size
    return (np.eye(n) - np.outer(mu, mu) @ M / q) / np.sqrt(q)


def posterior_mean_jacobian(data: GPDataset, hyper: KernelHyper,
                            query_heights) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the posterior mean w.r.t. (log gamma, log beta).

    Returned in physical units (multiplied by ``data.scale``).  With noiseless
    observations the log-gamma derivative vanishes identically: the
    interpolant does not depend on the kernel amplitude.
    """
    xq = np.asarray(query_heights, dtype=float)
    L = _chol_lower(data, hyper)  # CholeskyError propagates to the caller
    alpha = cho_solve((L, True), data.y_obs)
    Kq = cross_covariance(xq, data.x_obs, hyper)

    noise_var = data.noise_std ** 2
    d_gamma = 2.0 * (Kq @ cho_solve((L, True), noise_var * alpha)) * data.scale

    beta_sq = hyper.beta ** 2
    C = covariance_matrix(data.x_obs, hyper)
    dC = C * (data.x_obs[:, None] - data.x_obs[None, :]) ** 2 / beta_sq
    dKq = Kq * (xq[:, None] - data.x_obs[None, :]) ** 2 / beta_sq
    d_beta = (dKq @ alpha - Kq @ cho_solve((L, True), dC @ alpha)) * data.scale
    return d_gamma, d_beta


@dataclass(frozen=True)
class ModeBank:
    """The joint problem: per-mode datasets and hyperparameters, M, and lam.

    All modes share the observation heights and the query grid (the non-base
    floors the penalty is evaluated on).
    """

    datasets: tuple
    hypers: tuple
    mass_matrix: np.ndarray   # (N, N)
    query_heights: np.ndarray  # (N,) non-base floor heights
    lam: float = 1000.0

    def __post_init__(self):
        datasets = tuple(self.datasets)
        hypers = tuple(self.hypers)
        if len(datasets) == 0 or len(datasets) != len(hypers):
            raise ValueError("need one KernelHyper per GPDataset, at least one mode")
        x0 = datasets[0].x_obs
        for d in datasets[1:]:
            if not np.array_equal(d.x_obs, x0):
                raise ValueError("all modes must share the same observation heights")
        M = np.array(self.mass_matrix, dtype=float)
        q = np.array(self.query_heights, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("mass matrix must be square")
        if not np.allclose(M, M.T, rtol=0.0, atol=1e-12):
            raise ValueError("mass matrix must be symmetric")
        if q.shape != (M.shape[0],):
            raise ValueError("query grid length must match the mass matrix size")
        if self.lam < 0:
            raise ValueError(f"penalty weight must be non-negative, got {self.lam}")
        M.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "datasets", datasets)
        object.__setattr__(self, "hypers", hypers)
        object.__setattr__(self, "mass_matrix", M)
        object.__setattr__(self, "query_heights", q)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def n_modes(self) -> int:
        return len(self.datasets)

    def with_hypers(self, hypers) -> "ModeBank":
        return replace(self, hypers=tuple(hypers))


@dataclass(frozen=True)
class ObjectiveEvaluation:
    """One evaluation of the joint objective.

    When ``feasible`` the exact identity ``total == lam * penalty +
    nlml_per_mode.sum()`` holds; otherwise ``total`` is the sentinel, the
    gradient is zero and the remaining fields are NaN/None.
    """

    total: float
    nlml_per_mode: np.ndarray     # (n_modes,)
    penalty: float
    gradient: np.ndarray          # (2 n_modes,) order: g1, b1, g2, b2, ...
    feasible: bool
    posterior_means: np.ndarray | None = None  # (N, n_modes), physical units


def joint_objective(bank: ModeBank) -> ObjectiveEvaluation:
    """Evaluate J = lam * P + sum_j L_j and its full log-space gradient.

    The penalty chain runs mode block by mode block: only column j of the
    shape collection depends on mode j's hyperparameters, so each gradient
    entry needs one inner product against the penalty gradient column.
    """
    n_m = bank.n_modes
    M = bank.mass_matrix
    n_q = bank.query_heights.size

    def infeasible():
        return ObjectiveEvaluation(
            total=JOINT_SENTINEL,
            nlml_per_mode=np.full(n_m, np.nan),
            penalty=float("nan"),
            gradient=np.zeros(2 * n_m),
            feasible=False,
            posterior_means=None,
        )

    nlml_values = np.zeros(n_m)
    nlml_grads = np.zeros((n_m, 2))
    means = np.zeros((n_q, n_m))
    mean_jacs = []
    for j, (data, hyper) in enumerate(zip(bank.datasets, bank.hypers)):
        try:
            L = _chol_lower(data, hyper)
        except CholeskyError:
            return infeasible()
        y = data.y_obs
        n = data.n_obs
        alpha = cho_solve((L, True), y)
        nlml_values[j] = 0.5 * float(y @ alpha) + float(np.sum(np.log(np.diag(L)))) \
            + 0.5 * n * np.log(2.0 * np.pi)

        C = covariance_matrix(data.x_obs, hyper)
        A_inv = cho_solve((L, True), np.eye(n))
        W = np.outer(alpha, alpha) - A_inv
        sq_dist = (data.x_obs[:, None] - data.x_obs[None, :]) ** 2
        beta_sq = hyper.beta ** 2
        dC = C * sq_dist / beta_sq
        nlml_grads[j, 0] = -0.5 * float(np.sum(W * (2.0 * C)))
        nlml_grads[j, 1] = -0.5 * float(np.sum(W * dC))

        Kq = cross_covariance(bank.query_heights, data.x_obs, hyper)
        means[:, j] = (Kq @ alpha) * data.scale
        d_gamma = 2.0 * (Kq @ cho_solve((L, True), (data.noise_std ** 2) * alpha)) * data.scale
        dKq = Kq * (bank.query_heights[:, None] - data.x_obs[None, :]) ** 2 / beta_sq
        d_beta = (dKq @ alpha - Kq @ cho_solve((L, True), dC @ alpha)) * data.scale
        mean_jacs.append((d_gamma, d_beta))

    modal_mass = np.einsum("ij,ik,kj->j", means, M, means)
    if np.any(modal_mass <= _MODAL_MASS_FLOOR):
        return infeasible()
    Phi_t = means / np.sqrt(modal_mass)[None, :]
    P = penalty(Phi_t, M)
    G = penalty_gradient_modes(Phi_t, M)

    gradient = np.zeros(2 * n_m)
    for j in range(n_m):
        Jn = normalization_jacobian(means[:, j], M)
        for i, d_mu in enumerate(mean_jacs[j]):
            gradient[2 * j + i] = nlml_grads[j, i] + bank.lam * float(G[:, j] @ (Jn @ d_mu))

    total = bank.lam * P + float(nlml_values.sum())
    return ObjectiveEvaluation(
        total=total,
        nlml_per_mode=nlml_values,
        penalty=P,
        gradient=gradient,
        feasible=True,
        posterior_means=means,
    )
