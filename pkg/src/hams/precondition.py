"""Mass-matrix preconditioning through the linear change of variables ``xt = L' x``.

With ``M = L L'`` approximating the inverse target variance, the transformed
target ``Ut(xt) = U(L'^{-1} xt)`` is close to standard normal. Its gradient is
``L^{-1} grad U(x)``. HAMS-A/B run in the transformed space with unit mass.

:func:`hams_precond_step` is the streamlined iteration. It caches ``xt`` and
the transformed gradient, so one iteration costs two triangular solves plus
one inner product for the acceptance ratio.
:func:`hams_precond_reference_step` is the same chain written out the long way.
It exists to check the streamlined algebra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .core import AugmentedState, ContractError, RngStream, TargetModel, _check_dim
from .params import HamsConfig, Variant
from .samplers import StepOutcome, _evaluate, metropolis_accept

__all__ = [
    "Preconditioner",
    "PrecondCache",
    "cholesky_factor",
    "precond_wrap",
    "hams_precond_step",
    "hams_precond_reference_step",
]


class CholeskyError(np.linalg.LinAlgError):
    """Raised when a matrix is not positive definite."""


@dataclass(frozen=True, eq=False)
class Preconditioner:
    """``M = L L'`` with ``L`` lower triangular."""

    M: np.ndarray
    L: np.ndarray

    @property
    def dim(self) -> int:
        return self.L.shape[0]

    def solve_lower(self, v: np.ndarray) -> np.ndarray:
        """Solve ``L z = v``."""
        return solve_triangular(self.L, v, lower=True, check_finite=False)

    def solve_upper(self, v: np.ndarray) -> np.ndarray:
        """Solve ``L' z = v``."""
        return solve_triangular(self.L, v, lower=True, trans="T", check_finite=False)

    def to_tilde(self, x: np.ndarray) -> np.ndarray:
        """``L' x``."""
        return self.L.T @ x

    def from_tilde(self, xt: np.ndarray) -> np.ndarray:
        return self.solve_upper(xt)

    @classmethod
    def identity(cls, dim: int) -> "Preconditioner":
        eye = np.eye(dim)
        return cls(eye, eye.copy())


def cholesky_factor(M) -> Preconditioner:
    """Factor ``M = L L'``.

    Raises:
        CholeskyError: if ``M`` is not symmetric positive definite. The message
            names the first leading minor that is not positive.
    """
    M = np.array(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        raise ValueError("M must be symmetric")
    L, info = lapack.dpotrf(M, lower=1, clean=1)
    if info > 0:
        raise CholeskyError(f"M is not positive definite: leading minor of order {info} fails")
    if info < 0:
        raise ValueError(f"invalid argument {-info} passed to the Cholesky routine")
    L = np.ascontiguousarray(L)
    M.setflags(write=False)
    L.setflags(write=False)
    return Preconditioner(M, L)


def precond_wrap(target: TargetModel, P: Preconditioner) -> TargetModel:
    """Target in transformed coordinates ``xt = L' x``."""
    if P.dim != target.dim:
        raise ContractError(f"preconditioner has dimension {P.dim}, target {target.dim}")

    def both(xt):
        value, grad = target.evaluate(P.from_tilde(xt))
        return value, P.solve_lower(grad)

    hint = None
    if target.expected_hessian_hint is not None:
        half = P.solve_lower(target.expected_hessian_hint)
        hint = P.solve_lower(half.T)
        hint = 0.5 * (hint + hint.T)
    return TargetModel(
        dim=target.dim,
        potential=lambda xt: target.potential(P.from_tilde(xt)),
        gradient=lambda xt: both(xt)[1],
        potential_and_gradient=both,
        expected_hessian_hint=hint,
        name=f"{target.name}_preconditioned",
    )


class PrecondCache:
    """Per-chain cache: ``x``, ``xt = L' x``, ``L^{-1} grad U(x)`` and ``U(x)``."""

    __slots__ = ("x", "x_tilde", "grad_tilde", "potential")

    def __init__(self, x, x_tilde, grad_tilde, potential):
        self.x = x
        self.x_tilde = x_tilde
        self.grad_tilde = grad_tilde
        self.potential = potential

    @classmethod
    def initialize(cls, x: np.ndarray, target: TargetModel, P: Preconditioner) -> "PrecondCache":
        value, grad = target.evaluate(x)
        return cls(x, P.to_tilde(x), P.solve_lower(grad), value)


def hams_precond_step(
    state: AugmentedState,
    cfg: HamsConfig,
    target: TargetModel,
    P: Preconditioner,
    rng: RngStream,
    cache: Optional[PrecondCache] = None,
) -> StepOutcome:
    """One preconditioned HAMS-A/B iteration.

    ``cache`` is updated in place on acceptance and left alone on rejection.
    Without a cache one is built from ``state`` (costing an extra gradient).
    Draws ``zeta`` (unless ``a + b = 2``) and then one uniform, like
    :func:`~hams.samplers.hams_a_step`.
    """
    if cfg.variant not in (Variant.A, Variant.B):
        raise ContractError("preconditioned HAMS supports variants A and B")
    _check_dim(state, target)
    if cache is None:
        cache = PrecondCache.initialize(state.x, target, P)
    elif cache.x is not state.x and not np.array_equal(cache.x, state.x):
        raise ContractError("preconditioner cache is out of sync with the chain state")

    a, b, rem = cfg.a, cfg.b, cfg.remainder
    two_minus_a = 2.0 - a
    u = state.u
    k = state.dim
    zeta = rng.normal(k) if rem > 0.0 else np.zeros(k)
    xi = math.sqrt(a * b) * u
    if rem > 0.0:
        xi = xi + math.sqrt(a * rem) * zeta
    xt_star = cache.x_tilde - a * cache.grad_tilde + xi
    x_star = P.from_tilde(xt_star)
    pot_star, grad_star = _evaluate(target, x_star)
    if grad_star is None:
        rng.uniform()
        bad = AugmentedState(x_star, np.full_like(u, np.nan), math.inf, None)
        return StepOutcome(_rejected(state, cache), False, -math.inf, bad)
    gt_star = P.solve_lower(grad_star)
    xi_tilde = gt_star + cache.grad_tilde
    log_rho = float(
        cache.potential - pot_star + (xi_tilde @ (xi - 0.5 * a * xi_tilde)) / two_minus_a
    )
    if cfg.variant is Variant.A:
        u_star = (
            (2.0 * b / two_minus_a - 1.0) * u
            + (2.0 * math.sqrt(b * rem) / two_minus_a) * zeta
            - (math.sqrt(a * b) / two_minus_a) * xi_tilde
        )
    else:
        u_star = u - (math.sqrt(a * b) / two_minus_a) * xi_tilde
    proposal = AugmentedState(x_star, u_star, pot_star, grad_star)
    if metropolis_accept(log_rho, rng):
        cache.x, cache.x_tilde, cache.grad_tilde, cache.potential = (
            x_star,
            xt_star,
            gt_star,
            pot_star,
        )
        return StepOutcome(proposal, True, log_rho, proposal)
    return StepOutcome(_rejected(state, cache), False, log_rho, proposal)


def _rejected(state: AugmentedState, cache: PrecondCache) -> AugmentedState:
    return AugmentedState(cache.x, -state.u, cache.potential, None)


def hams_precond_reference_step(
    state: AugmentedState,
    cfg: HamsConfig,
    target: TargetModel,
    P: Preconditioner,
    rng: RngStream,
) -> StepOutcome:
    """Preconditioned HAMS-A/B with every quantity formed explicitly.

    Momentum and the backward noise are built from the full update formulas,
    and the ratio uses the Hamiltonians and both noise norms. Slower than
    :func:`hams_precond_step`, and equal to it in exact arithmetic.
    """
    if cfg.variant not in (Variant.A, Variant.B):
        raise ContractError("preconditioned HAMS supports variants A and B")
    _check_dim(state, target)
    a, b, rem = cfg.a, cfg.b, cfg.remainder
    two_minus_a = 2.0 - a
    x, u = state.x, state.u
    k = x.size
    zeta = rng.normal(k) if rem > 0.0 else np.zeros(k)
    pot0, grad0 = target.evaluate(x)
    x_tilde = P.L.T @ x
    xt_star = (
        x_tilde
        - a * P.solve_lower(grad0)
        + math.sqrt(a * b) * u
        + math.sqrt(a * rem) * zeta
    )
    x_star = P.solve_upper(xt_star)
    pot_star, grad_star = _evaluate(target, x_star)
    if grad_star is None:
        rng.uniform()
        bad = AugmentedState(x_star, np.full_like(u, np.nan), math.inf, None)
        return StepOutcome(AugmentedState(x, -u), False, -math.inf, bad)
    gsum = P.solve_lower(grad0 + grad_star)
    if cfg.variant is Variant.A:
        u_star = (
            (2.0 * b / two_minus_a - 1.0) * u
            - (math.sqrt(a * b) / two_minus_a) * gsum
            + (2.0 * math.sqrt(b * rem) / two_minus_a) * zeta
        )
        zeta_star = (
            (1.0 - 2.0 * b / two_minus_a) * zeta
            - (math.sqrt(a * rem) / two_minus_a) * gsum
            + (2.0 * math.sqrt(b * rem) / two_minus_a) * u
        )
    else:
        u_star = u - (math.sqrt(a * b) / two_minus_a) * gsum
        zeta_star = zeta - (math.sqrt(a * rem) / two_minus_a) * gsum
    h0 = pot0 + 0.5 * (u @ u)
    h_star = pot_star + 0.5 * (u_star @ u_star)
    log_rho = float(h0 - h_star + 0.5 * (zeta @ zeta) - 0.5 * (zeta_star @ zeta_star))
    proposal = AugmentedState(x_star, u_star, pot_star, grad_star)
    if metropolis_accept(log_rho, rng):
        return StepOutcome(proposal, True, log_rho, proposal)
    return StepOutcome(AugmentedState(x, -u, pot0, grad0), False, log_rho, proposal)
