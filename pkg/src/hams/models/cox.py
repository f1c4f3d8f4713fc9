"""Log-Gaussian Cox process on an ``m x m`` grid.

Cell counts are ``y_ij ~ Poisson(lambda_ij)`` with ``lambda_ij = exp(x_ij + mu) / n``
and ``n = m^2``. The latent field ``x`` is Gaussian with covariance

    C[(i, j), (i', j')] = sigma2 * exp(-dist / (m * beta)).

The parameters ``(sigma2, beta)`` carry independent ``Gamma(2, rate 0.5)``
priors and are sampled on the log scale ``(phi1, phi2) = (log sigma2, log beta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ..core import ModelDomainError, RngStream, TargetModel

__all__ = [
    "CoxModel",
    "grid_distances",
    "cox_covariance",
    "cox_latent_potential_grad",
    "cox_latent_target",
    "cox_latent_preconditioner_matrix",
    "cox_param_potential_grad",
    "cox_param_expected_hessian",
    "cox_param_target",
    "simulate_cox_data",
    "COX_TRUE",
]

EXP_LIMIT = 700.0

# Simulation settings: sigma2, beta and mu = log(126) - sigma2 / 2.
COX_TRUE = {"sigma2": 1.91, "beta": 0.3, "mu": math.log(126.0) - 0.5 * 1.91}

PRIOR_SHAPE, PRIOR_RATE = 2.0, 0.5


def grid_distances(m: int) -> np.ndarray:
    """Euclidean distances between the ``m^2`` cell indices, row-major order."""
    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    pts = np.column_stack([ii.ravel(), jj.ravel()]).astype(np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def cox_covariance(dist: np.ndarray, m: int, sigma2: float, beta: float) -> np.ndarray:
    return sigma2 * np.exp(-dist / (m * beta))


def _factor(C: np.ndarray):
    try:
        return cho_factor(C, lower=True, check_finite=False)
    except np.linalg.LinAlgError as err:
        raise ModelDomainError(f"covariance is not positive definite: {err}") from None


@dataclass(frozen=True, eq=False)
class CoxModel:
    """Counts on an ``m x m`` grid with covariance parameters ``(sigma2, beta)``."""

    m: int
    y: np.ndarray
    sigma2: float
    beta: float
    mu: float
    dist: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.sigma2 > 0.0 and self.beta > 0.0):
            raise ModelDomainError("sigma2 and beta must be positive")
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if y.size != self.m * self.m:
            raise ValueError("y must have m^2 entries")
        object.__setattr__(self, "y", y)
        if self.dist is None:
            object.__setattr__(self, "dist", grid_distances(self.m))

    @property
    def n(self) -> int:
        return self.m * self.m

    def covariance(self) -> np.ndarray:
        return cox_covariance(self.dist, self.m, self.sigma2, self.beta)

    def with_params(self, sigma2: float, beta: float) -> "CoxModel":
        return CoxModel(self.m, self.y, sigma2, beta, self.mu, self.dist)


def _latent_precision(model: CoxModel) -> np.ndarray:
    fac = _factor(model.covariance())
    Q = cho_solve(fac, np.eye(model.n), check_finite=False)
    return 0.5 * (Q + Q.T)


def cox_latent_potential_grad(x: np.ndarray, model: CoxModel, precision=None):
    """``U = x'C^{-1}x / 2 - sum(y x - exp(x + mu) / n)`` and its gradient."""
    Q = _latent_precision(model) if precision is None else precision
    return _latent_eval(np.asarray(x, dtype=np.float64), model, Q)


def _latent_eval(x, model, Q):
    z = x + model.mu
    if np.max(z) > EXP_LIMIT:
        raise ModelDomainError("exponent above overflow guard")
    rate = np.exp(z) / model.n
    qx = Q @ x
    value = 0.5 * float(x @ qx) - float(model.y @ x) + float(np.sum(rate))
    return value, rate + qx - model.y


def cox_latent_preconditioner_matrix(model: CoxModel, precision=None) -> np.ndarray:
    """``M = D + C^{-1}`` with ``D = exp(mu + sigma2/2) / n`` on the diagonal."""
    Q = _latent_precision(model) if precision is None else precision
    return Q + math.exp(model.mu + 0.5 * model.sigma2) / model.n * np.eye(model.n)


def cox_latent_target(model: CoxModel, with_hint: bool = True) -> TargetModel:
    """Latent conditional; the precision matrix is formed once per model instance."""
    Q = _latent_precision(model)
    M = cox_latent_preconditioner_matrix(model, Q) if with_hint else None

    def both(x):
        return _latent_eval(np.asarray(x, dtype=np.float64), model, Q)

    return TargetModel(
        dim=model.n,
        potential=lambda x: both(x)[0],
        gradient=lambda x: both(x)[1],
        potential_and_gradient=both,
        expected_hessian_hint=M,
        name="cox_latent",
    )


def _param_pieces(phi, dist, m):
    phi1, phi2 = (float(v) for v in phi)
    if max(abs(phi1), abs(phi2)) > 50.0:
        raise ModelDomainError("log-parameters outside the supported range")
    beta = math.exp(phi2)
    C = cox_covariance(dist, m, math.exp(phi1), beta)
    dC = C * dist / (m * beta)
    return phi1, phi2, C, dC


def cox_param_potential_grad(phi, x: np.ndarray, dist: np.ndarray, m: int):
    """Potential and gradient of ``p(phi1, phi2 | x)``.

    ``U = (e^phi1 + e^phi2)/2 - 2(phi1 + phi2) + x'C^{-1}x/2 + log det C / 2``.
    The derivative of ``C`` in ``phi2`` is ``C * dist / (m beta)``.
    """
    phi1, phi2, C, dC = _param_pieces(phi, dist, m)
    fac = _factor(C)
    n = C.shape[0]
    alpha = cho_solve(fac, x, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(fac[0]))))
    cinv_dc = cho_solve(fac, dC, check_finite=False)
    value = (
        PRIOR_RATE * (math.exp(phi1) + math.exp(phi2))
        - PRIOR_SHAPE * (phi1 + phi2)
        + 0.5 * float(x @ alpha)
        + 0.5 * logdet
    )
    d1 = PRIOR_RATE * math.exp(phi1) - PRIOR_SHAPE + 0.5 * n - 0.5 * float(x @ alpha)
    d2 = (
        PRIOR_RATE * math.exp(phi2)
        - PRIOR_SHAPE
        + 0.5 * float(np.trace(cinv_dc))
        - 0.5 * float(alpha @ dC @ alpha)
    )
    return value, np.array([d1, d2])


def cox_param_expected_hessian(phi, dist: np.ndarray, m: int) -> np.ndarray:
    """Prior curvature plus Fisher information of ``x | phi``."""
    phi1, phi2, C, dC = _param_pieces(phi, dist, m)
    fac = _factor(C)
    n = C.shape[0]
    cinv_dc = cho_solve(fac, dC, check_finite=False)
    cross = 0.5 * float(np.trace(cinv_dc))
    return np.array(
        [
            [0.5 * (math.exp(phi1) + n), cross],
            [cross, 0.5 * (math.exp(phi2) + float(np.sum(cinv_dc * cinv_dc.T)))],
        ]
    )


def cox_param_target(x: np.ndarray, dist: np.ndarray, m: int, hint_at=None) -> TargetModel:
    x = np.asarray(x, dtype=np.float64)

    def both(phi):
        return cox_param_potential_grad(phi, x, dist, m)

    hint = None if hint_at is None else cox_param_expected_hessian(hint_at, dist, m)
    return TargetModel(
        dim=2,
        potential=lambda p: both(p)[0],
        gradient=lambda p: both(p)[1],
        potential_and_gradient=both,
        expected_hessian_hint=hint,
        name="cox_params",
    )


def simulate_cox_data(m: int, sigma2: float, beta: float, mu: float, rng: RngStream):
    """Draw the latent field and Poisson counts; both flattened row-major."""
    dist = grid_distances(m)
    C = cox_covariance(dist, m, sigma2, beta)
    L = np.linalg.cholesky(C + 1e-12 * np.eye(m * m))
    x = L @ rng.normal(m * m)
    lam = np.exp(x + mu) / (m * m)
    y = rng.generator.poisson(lam).astype(np.float64)
    return x, y
