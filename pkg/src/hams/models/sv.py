"""Stochastic volatility model.

Latent log-volatilities follow a stationary AR(1):

    x_1 ~ N(0, sigma^2 / (1 - phi^2)),   x_t = phi x_{t-1} + sigma eta_t,

and the observations are ``y_t = beta exp(x_t / 2) z_t``.

Priors: ``pi(beta) ~ 1/beta``, ``sigma^2 ~ Inv-chi^2(10, 0.05)`` and
``(phi + 1) / 2 ~ Beta(20, 1.5)``. The parameter block is sampled in
``theta = (beta, alpha, gamma)`` with ``phi = tanh(alpha)`` and
``sigma = exp(gamma)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import ModelDomainError, RngStream, TargetModel

__all__ = [
    "SvModel",
    "ar1_precision_matvec",
    "ar1_precision_matrix",
    "ar1_covariance_matrix",
    "sv_latent_potential_grad",
    "sv_latent_target",
    "sv_param_potential_grad",
    "sv_param_expected_hessian",
    "sv_param_target",
    "simulate_sv_data",
    "sv_to_natural",
    "sv_to_working",
]

EXP_LIMIT = 700.0

# Prior constants: Inv-chi^2(nu, s^2) on sigma^2, Beta(p, q) on (phi + 1) / 2.
NU, S2 = 10.0, 0.05
BETA_P, BETA_Q = 20.0, 1.5


@dataclass(frozen=True)
class SvModel:
    """Observations and current parameters of the stochastic volatility model."""

    y: np.ndarray
    beta: float
    sigma: float
    phi: float

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        object.__setattr__(self, "y", y)
        _check_params(self.beta, self.sigma, self.phi)

    @property
    def T(self) -> int:
        return self.y.size

    def with_params(self, beta: float, sigma: float, phi: float) -> "SvModel":
        return SvModel(self.y, beta, sigma, phi)


def _check_params(beta, sigma, phi):
    if not sigma > 0.0:
        raise ModelDomainError("sigma must be positive")
    if not abs(phi) < 1.0:
        raise ModelDomainError("|phi| must be below 1")
    if not beta > 0.0:
        raise ModelDomainError("beta must be positive")


def _safe_exp(z: np.ndarray) -> np.ndarray:
    if np.max(z) > EXP_LIMIT:
        raise ModelDomainError("exponent above overflow guard")
    return np.exp(z)


def ar1_precision_matvec(x: np.ndarray, sigma: float, phi: float) -> np.ndarray:
    """``C^{-1} x`` for the stationary AR(1) covariance, in O(T)."""
    out = (1.0 + phi * phi) * x
    if x.size == 1:
        return (1.0 - phi * phi) * x / (sigma * sigma)
    out[0] = x[0]
    out[-1] = x[-1]
    out[1:] -= phi * x[:-1]
    out[:-1] -= phi * x[1:]
    return out / (sigma * sigma)


def ar1_precision_matrix(T: int, sigma: float, phi: float) -> np.ndarray:
    """Dense tridiagonal ``C^{-1}``: corners 1, interior ``1 + phi^2``, off-diagonal ``-phi``, over ``sigma^2``."""
    if T == 1:
        return np.array([[(1.0 - phi * phi) / (sigma * sigma)]])
    diag = np.full(T, 1.0 + phi * phi)
    diag[0] = diag[-1] = 1.0
    Q = np.diag(diag) - phi * (np.eye(T, k=1) + np.eye(T, k=-1))
    return Q / (sigma * sigma)


def ar1_covariance_matrix(T: int, sigma: float, phi: float) -> np.ndarray:
    """Closed-form stationary covariance ``sigma^2 phi^|i-j| / (1 - phi^2)``."""
    idx = np.arange(T)
    return sigma * sigma * phi ** np.abs(idx[:, None] - idx[None, :]) / (1.0 - phi * phi)


def sv_latent_potential_grad(x: np.ndarray, model: SvModel):
    """Potential and gradient of ``p(x | y, theta)``.

    ``U = x'C^{-1}x / 2 + sum(x_t + y_t^2 exp(-x_t) / beta^2) / 2`` and
    ``grad U = C^{-1}x - y^2 exp(-x) / (2 beta^2) + 1/2``.
    """
    x = np.asarray(x, dtype=np.float64)
    qx = ar1_precision_matvec(x, model.sigma, model.phi)
    w = model.y * model.y * _safe_exp(-x) / (model.beta * model.beta)
    value = 0.5 * float(x @ qx) + 0.5 * float(np.sum(x + w))
    grad = qx - 0.5 * w + 0.5
    return value, grad


def sv_latent_target(model: SvModel, with_hint: bool = True) -> TargetModel:
    """Latent conditional with hint ``M = C^{-1} + I/2``.

    ``with_hint=False`` skips building the dense hint, which Gibbs sweeps do
    not need once the preconditioner is frozen.
    """
    M = None
    if with_hint:
        M = ar1_precision_matrix(model.T, model.sigma, model.phi) + 0.5 * np.eye(model.T)

    def both(x):
        return sv_latent_potential_grad(x, model)

    return TargetModel(
        dim=model.T,
        potential=lambda x: both(x)[0],
        gradient=lambda x: both(x)[1],
        potential_and_gradient=both,
        expected_hessian_hint=M,
        name="sv_latent",
    )


def _log1p_tanh(alpha: float, sign: float) -> float:
    """``log(1 + sign * tanh(alpha))`` without cancellation."""
    return math.log(2.0) - float(np.logaddexp(0.0, -2.0 * sign * alpha))


def sv_to_natural(theta) -> tuple[float, float, float]:
    """``(beta, alpha, gamma) -> (beta, sigma, phi)``."""
    beta, alpha, gamma = (float(v) for v in theta)
    return beta, math.exp(gamma), math.tanh(alpha)


def sv_to_working(beta: float, sigma: float, phi: float) -> np.ndarray:
    return np.array([beta, math.atanh(phi), math.log(sigma)])


def sv_param_potential_grad(theta, x: np.ndarray, y: np.ndarray):
    """Potential and gradient of ``p(beta, alpha, gamma | x, y)``.

    Assembled from the observation likelihood, the AR(1) prior on ``x``, the
    three parameter priors and the Jacobians of ``sigma = exp(gamma)`` and
    ``phi = tanh(alpha)``:

        U = (T + 1) log beta + sum(y^2 exp(-x)) / (2 beta^2)
            + (T + 10) gamma + exp(-2 gamma) / 4 + exp(-2 gamma) Q(phi) / 2
            - 20.5 log(1 + phi) - 2 log(1 - phi)

    with ``Q(phi) = sigma^2 x'C^{-1}x``.
    """
    beta, alpha, gamma = (float(v) for v in theta)
    if not beta > 0.0:
        raise ModelDomainError("beta must be positive")
    if abs(gamma) > EXP_LIMIT / 2:
        raise ModelDomainError("gamma outside overflow guard")
    x = np.asarray(x, dtype=np.float64)
    T = x.size
    phi = math.tanh(alpha)
    if abs(phi) >= 1.0:
        raise ModelDomainError("phi rounds to +/-1")
    ysq_w = float(np.sum(y * y * _safe_exp(-x)))
    innov = x[1:] - phi * x[:-1]
    quad = float(innov @ innov) + (1.0 - phi * phi) * x[0] * x[0]
    lag_cross = float(innov @ x[:-1]) + phi * x[0] * x[0]
    inv_s2 = math.exp(-2.0 * gamma)
    log_1p = _log1p_tanh(alpha, 1.0)
    log_1m = _log1p_tanh(alpha, -1.0)

    # Exponents of log(1 + phi) and log(1 - phi): Beta prior, AR(1) start
    # variance and the tanh Jacobian together.
    w_plus = BETA_P + 0.5
    w_minus = BETA_Q + 0.5
    value = (
        (T + 1) * math.log(beta)
        + 0.5 * ysq_w / (beta * beta)
        + (T + NU) * gamma
        + 0.5 * NU * S2 * inv_s2
        + 0.5 * inv_s2 * quad
        - w_plus * log_1p
        - w_minus * log_1m
    )
    d_beta = (T + 1) / beta - ysq_w / beta**3
    d_gamma = T + NU - NU * S2 * inv_s2 - inv_s2 * quad
    d_phi_prior = -w_plus / (1.0 + phi) + w_minus / (1.0 - phi)
    d_alpha = (1.0 - phi * phi) * (d_phi_prior - inv_s2 * lag_cross)
    return value, np.array([d_beta, d_alpha, d_gamma])


def sv_param_expected_hessian(theta, T: int) -> np.ndarray:
    """Expected Hessian of the parameter potential, ordered ``(beta, alpha, gamma)``."""
    beta, alpha, gamma = (float(v) for v in theta)
    phi = math.tanh(alpha)
    one_m = 1.0 - phi * phi
    return np.array(
        [
            [(2 * T - 1) / beta**2, 0.0, 0.0],
            [0.0, 21.5 - 19.5 * phi * phi + (T - 1) * one_m, 2.0 * phi],
            [0.0, 2.0 * phi, math.exp(-2.0 * gamma) + 2.0 * T],
        ]
    )


def sv_param_target(x: np.ndarray, y: np.ndarray, hint_at=None) -> TargetModel:
    """Parameter conditional as a target on ``(beta, alpha, gamma)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    def both(theta):
        return sv_param_potential_grad(theta, x, y)

    hint = None if hint_at is None else sv_param_expected_hessian(hint_at, x.size)
    return TargetModel(
        dim=3,
        potential=lambda t: both(t)[0],
        gradient=lambda t: both(t)[1],
        potential_and_gradient=both,
        expected_hessian_hint=hint,
        name="sv_params",
    )


def simulate_sv_data(T: int, beta: float, sigma: float, phi: float, rng: RngStream):
    """Draw ``(x, y)`` from the generative model."""
    if not abs(phi) < 1.0 or sigma < 0.0:
        raise ValueError("need |phi| < 1 and sigma >= 0")
    eta = rng.normal(T)
    z = rng.normal(T)
    x = np.empty(T)
    x[0] = sigma / math.sqrt(1.0 - phi * phi) * eta[0]
    for t in range(1, T):
        x[t] = phi * x[t - 1] + sigma * eta[t]
    y = beta * np.exp(0.5 * x) * z
    return x, y
