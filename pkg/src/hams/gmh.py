"""Generalized Metropolis-Hastings with an invariance map ``J``.

A proposal ``y*`` drawn from ``Q(. | y0)`` is accepted with probability

    min(1, pi(J^{-1} y*) Q(J y0 | J^{-1} y*) / (pi(y0) Q(y* | y0)))

and a rejection moves the chain to ``J y0`` instead of staying put. The map
must leave the target invariant (``U(J^{-1} y) = U(y)``). HAMS is the
instance with ``J = diag(I, -I)`` acting on ``(x, u)``.

This module provides:

* :class:`InvarianceMap` and :class:`ProposalKernel`, the pluggable pieces
* :func:`gmh_step`, the generic transition
* the G2MS kernel ``y* = y0 - B grad U(y0) + Z`` with ``B = I - (I - A) J``
* :func:`decompose_var1`, which recovers ``(A, J)`` from a VAR(1) drift matrix
* :func:`ijump_step`, a lifted sampler that flips its direction on rejection
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, NamedTuple, Optional

import numpy as np
from scipy.linalg import cho_solve, cholesky

from .core import ContractError, RngStream, TargetModel

__all__ = [
    "InvarianceMap",
    "ProposalKernel",
    "GmhOutcome",
    "G2msConfig",
    "gmh_step",
    "g2ms_step",
    "g2ms_kernel",
    "decompose_var1",
    "ijump_step",
    "ijump_product_space",
    "gaussian_kernel",
]

ORTHOGONALITY_TOL = 1e-10
INVARIANCE_TOL = 1e-10


class GmhOutcome(NamedTuple):
    next: Any
    accepted: bool
    log_rho: float
    proposal: Any


@dataclass(frozen=True, eq=False)
class InvarianceMap:
    """A bijection ``J`` with its inverse.

    Linear maps are built with :meth:`from_matrix`, which checks orthogonality.
    Maps that act on discrete components, such as the direction flip of the
    lifted sampler, set ``is_orthogonal_like`` and skip that check.
    """

    apply: Callable[[Any], Any]
    apply_inverse: Callable[[Any], Any]
    is_orthogonal_like: bool = False
    matrix: Optional[np.ndarray] = None

    @classmethod
    def from_matrix(cls, J, tol: float = ORTHOGONALITY_TOL) -> "InvarianceMap":
        J = np.array(J, dtype=np.float64)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ValueError("J must be square")
        err = np.max(np.abs(J.T @ J - np.eye(J.shape[0])))
        if err > tol:
            raise ValueError(f"J is not orthogonal: max |J'J - I| = {err:.3e}")
        J.setflags(write=False)
        Jt = J.T
        return cls(lambda y: J @ y, lambda y: Jt @ y, False, J)

    @classmethod
    def identity(cls, dim: int) -> "InvarianceMap":
        return cls.from_matrix(np.eye(dim))

    @classmethod
    def momentum_flip(cls, k: int) -> "InvarianceMap":
        """``diag(I_k, -I_k)`` on stacked ``(x, u)`` vectors."""
        return cls.from_matrix(np.diag(np.r_[np.ones(k), -np.ones(k)]))

    def check_inverse(self, samples) -> float:
        """Max reconstruction error of ``J^{-1} J y`` over ``samples``."""
        worst = 0.0
        for y in samples:
            back = self.apply_inverse(self.apply(y))
            worst = max(worst, float(np.max(np.abs(np.asarray(back) - np.asarray(y)))))
        return worst

    def register(self, potential: Callable[[Any], float], samples, tol: float = INVARIANCE_TOL):
        """Check ``U(J^{-1} y) = U(y)`` on ``samples`` and return ``self``.

        Raises:
            ValueError: if the target is not invariant under this map.
        """
        for y in samples:
            u0 = potential(y)
            u1 = potential(self.apply_inverse(y))
            if abs(u1 - u0) > tol * max(1.0, abs(u0)):
                raise ValueError(
                    f"target is not invariant under J: U(y)={u0!r}, U(J^-1 y)={u1!r}"
                )
        return self


@dataclass(frozen=True, eq=False)
class ProposalKernel:
    """A proposal that can both draw ``y* ~ Q(. | y)`` and evaluate ``log Q``."""

    sample: Callable[[Any, RngStream], Any]
    log_density: Callable[[Any, Any], float]

    def __post_init__(self):
        if not callable(self.sample) or not callable(self.log_density):
            raise ContractError("a proposal kernel needs a sampler and a density evaluator")


def gaussian_kernel(shift: float = 0.0, scale: float = 1.0) -> ProposalKernel:
    """``y* ~ N(y + shift, scale^2 I)`` as a :class:`ProposalKernel`."""

    def sample(y, rng):
        y = np.asarray(y, dtype=np.float64)
        return y + shift + scale * rng.normal(y.size)

    def log_density(y_to, y_from):
        d = (np.asarray(y_to) - np.asarray(y_from) - shift) / scale
        return float(-0.5 * (d @ d) - d.size * math.log(scale))

    return ProposalKernel(sample, log_density)


def _potential_of(target) -> Callable[[Any], float]:
    if isinstance(target, TargetModel):
        return target.potential
    if callable(target):
        return target
    raise ContractError("target must be a TargetModel or a potential callable")


def gmh_step(y0, kernel: ProposalKernel, J: InvarianceMap, target, rng: RngStream) -> GmhOutcome:
    """One generalized Metropolis-Hastings transition.

    ``target`` is a :class:`~hams.core.TargetModel` or a callable returning the
    potential ``U(y)``. The proposal is drawn first, then one uniform.
    """
    potential = _potential_of(target)
    y_star = kernel.sample(y0, rng)
    forward = kernel.log_density(y_star, y0)
    if not math.isfinite(forward):
        raise ContractError("proposal kernel gave zero density to its own draw")
    pre_image = J.apply_inverse(y_star)
    y0_mapped = J.apply(y0)
    backward = kernel.log_density(y0_mapped, pre_image)
    log_rho = float(potential(y0) - potential(pre_image) + backward - forward)
    w = rng.uniform()
    if not math.isnan(log_rho) and w < math.exp(min(0.0, log_rho)):
        return GmhOutcome(y_star, True, log_rho, y_star)
    return GmhOutcome(y0_mapped, False, log_rho, y_star)


# ---------------------------------------------------------------------------
# G2MS
# ---------------------------------------------------------------------------


class G2msConfig:
    """Coefficient matrix ``A`` (``0 <= A <= 2I``) and orthogonal map ``J``.

    Only nonsingular noise covariances ``2A - A^2`` are supported.
    """

    def __init__(self, A, J: InvarianceMap):
        A = np.array(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if not np.allclose(A, A.T, rtol=1e-12, atol=1e-12):
            raise ValueError("A must be symmetric")
        if J.matrix is None or J.matrix.shape != A.shape:
            raise ValueError("J must be a matrix map with the same dimension as A")
        eig = np.linalg.eigvalsh(A)
        if eig.min() < -1e-12 or eig.max() > 2.0 + 1e-12:
            raise ValueError(f"A must satisfy 0 <= A <= 2I, eigenvalues in [{eig.min()}, {eig.max()}]")
        n = A.shape[0]
        eye = np.eye(n)
        cov = 2.0 * A - A @ A
        cov = 0.5 * (cov + cov.T)
        if np.linalg.eigvalsh(cov).min() <= 1e-12:
            raise ValueError(
                "2A - A^2 is singular; general G2MS supports nonsingular noise only "
                "(HAMS-A/B cover the singular HAMS cases)"
            )
        self.A = A
        self.J = J
        self.B = eye - (eye - A) @ J.matrix
        self.cov = cov
        self.chol = cholesky(cov, lower=True)
        # Explicit inverse: a matvec is far cheaper than a triangular solve per step.
        self.precision = cho_solve((self.chol, True), eye)
        self.dim = n
        residual = np.max(np.abs(self.B + self.B.T - self.B @ self.B.T - cov))
        if residual > 1e-10 * max(1.0, np.max(np.abs(cov))):
            raise ValueError(f"B + B' - BB' differs from 2A - A^2 by {residual:.3e}")

    def quad(self, z: np.ndarray) -> float:
        """``z' (2A - A^2)^{-1} z``."""
        return float(z @ (self.precision @ z))


class G2msProposal(NamedTuple):
    y_star: np.ndarray
    noise: np.ndarray
    noise_star: np.ndarray
    log_rho: float


def g2ms_map(y0: np.ndarray, cfg: G2msConfig, target: TargetModel, noise: np.ndarray) -> G2msProposal:
    """G2MS proposal for an explicit noise ``Z ~ N(0, 2A - A^2)``."""
    pot0, g0 = target.evaluate(y0)
    y_star = y0 - cfg.B @ g0 + noise
    pre_image = cfg.J.apply_inverse(y_star)
    pot_pre, g_pre = target.evaluate(pre_image)
    noise_star = cfg.J.apply(y0) - pre_image + cfg.B @ g_pre
    log_rho = pot0 - pot_pre + 0.5 * (cfg.quad(noise) - cfg.quad(noise_star))
    return G2msProposal(y_star, noise, noise_star, float(log_rho))


def g2ms_step(y0, cfg: G2msConfig, target: TargetModel, rng: RngStream) -> GmhOutcome:
    """One G2MS transition; a rejection returns ``J y0``."""
    y0 = np.asarray(y0, dtype=np.float64)
    if y0.size != cfg.dim or target.dim != cfg.dim:
        raise ContractError("state, target and G2MS configuration dimensions differ")
    noise = cfg.chol @ rng.normal(cfg.dim)
    prop = g2ms_map(y0, cfg, target, noise)
    w = rng.uniform()
    if not math.isnan(prop.log_rho) and w < math.exp(min(0.0, prop.log_rho)):
        return GmhOutcome(prop.y_star, True, prop.log_rho, prop.y_star)
    return GmhOutcome(cfg.J.apply(y0), False, prop.log_rho, prop.y_star)


def g2ms_kernel(cfg: G2msConfig, target: TargetModel) -> ProposalKernel:
    """The G2MS proposal as a value-plus-density kernel for :func:`gmh_step`."""

    def sample(y, rng):
        _, g = target.evaluate(y)
        return y - cfg.B @ g + cfg.chol @ rng.normal(cfg.dim)

    def log_density(y_to, y_from):
        _, g = target.evaluate(y_from)
        return -0.5 * cfg.quad(y_to - y_from + cfg.B @ g)

    return ProposalKernel(sample, log_density)


def decompose_var1(Btilde) -> tuple[np.ndarray, np.ndarray]:
    """Write ``I - Btilde = (I - A) J`` with ``A`` symmetric and ``J`` orthogonal.

    Uses the SVD ``I - Btilde = O1 diag(lam) O2``, giving
    ``A = I - O1 diag(lam) O1'`` and ``J = O1 O2``.

    Raises:
        ValueError: if ``Btilde + Btilde' - Btilde Btilde'`` is not positive
            semi-definite, i.e. the VAR(1) noise variance would be negative.
    """
    Bt = np.array(Btilde, dtype=np.float64)
    if Bt.ndim != 2 or Bt.shape[0] != Bt.shape[1]:
        raise ValueError("Btilde must be square")
    n = Bt.shape[0]
    eye = np.eye(n)
    cov = Bt + Bt.T - Bt @ Bt.T
    if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -1e-10:
        raise ValueError("Btilde + Btilde' - Btilde Btilde' is not positive semi-definite")
    o1, lam, o2 = np.linalg.svd(eye - Bt)
    A = eye - (o1 * lam) @ o1.T
    A = 0.5 * (A + A.T)
    return A, o1 @ o2


# ---------------------------------------------------------------------------
# I-Jump
# ---------------------------------------------------------------------------


def ijump_step(state, f_kernel: ProposalKernel, g_kernel: ProposalKernel, target, rng: RngStream) -> GmhOutcome:
    """Lifted jump sampler on ``(x, s)`` with direction ``s`` in ``{-1, +1}``.

    With ``s = +1`` the proposal comes from ``f`` and the reverse move is scored
    by ``g``; with ``s = -1`` the roles swap. A rejection keeps ``x`` and flips ``s``.
    """
    x0, s = state
    if s not in (-1, 1):
        raise ContractError("direction must be -1 or +1")
    potential = _potential_of(target)
    fwd, bwd = (f_kernel, g_kernel) if s == 1 else (g_kernel, f_kernel)
    x_star = fwd.sample(x0, rng)
    forward = fwd.log_density(x_star, x0)
    if not math.isfinite(forward):
        raise ContractError("proposal kernel gave zero density to its own draw")
    log_rho = float(potential(x0) - potential(x_star) + bwd.log_density(x0, x_star) - forward)
    w = rng.uniform()
    if not math.isnan(log_rho) and w < math.exp(min(0.0, log_rho)):
        return GmhOutcome((x_star, s), True, log_rho, (x_star, s))
    return GmhOutcome((x0, -s), False, log_rho, (x_star, s))


def ijump_product_space(f_kernel: ProposalKernel, g_kernel: ProposalKernel, target):
    """The lifted sampler as a GMH instance on ``y = (x, s)``.

    Returns ``(kernel, J, potential)`` with ``J(x, s) = (x, -s)`` and the
    proposal kernel choosing ``f`` or ``g`` by ``s`` while keeping ``s``.
    """
    potential = _potential_of(target)

    def sample(y, rng):
        x, s = y
        return ((f_kernel if s == 1 else g_kernel).sample(x, rng), s)

    def log_density(y_to, y_from):
        (x1, s1), (x0, s0) = y_to, y_from
        if s1 != s0:
            return -math.inf
        return (f_kernel if s0 == 1 else g_kernel).log_density(x1, x0)

    flip = InvarianceMap(
        lambda y: (y[0], -y[1]), lambda y: (y[0], -y[1]), is_orthogonal_like=True
    )
    return ProposalKernel(sample, log_density), flip, lambda y: potential(y[0])
