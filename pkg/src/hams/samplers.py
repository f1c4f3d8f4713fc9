"""One-step transition kernels.

Each ``*_step`` function draws its noise from an :class:`~hams.core.RngStream`,
then a single uniform, and returns a :class:`StepOutcome`. The noise-to-proposal
maps are exposed separately (``*_map`` / ``*_propose``) so tests can feed
explicit noises, for example to check that the HAMS maps are involutions.

Draw order per step (frozen so chains sharing a seed share their noise):

* general HAMS: ``k`` normals for the first block, ``k`` for the second, uniform
* HAMS-A/B: ``k`` normals for ``zeta`` (skipped when ``a + b = 2``), uniform
* RWM/pMALA/pMALA*/pCNL: ``k`` normals, uniform
* HMC: ``k`` normals for the fresh momentum, uniform
* UDL: ``k`` + ``k`` normals for the two refreshes, uniform
* GMC: ``k`` normals, uniform
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from enum import Enum
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .core import (
    AugmentedState,
    ContractError,
    ModelDomainError,
    RngStream,
    TargetModel,
    _check_dim,
)
from .params import HamsConfig, Variant, noise_block

__all__ = [
    "StepOutcome",
    "BaselineKind",
    "BaselineConfig",
    "ProposalCovariance",
    "HamsProposal",
    "hams_ab_map",
    "hams_a_phi_map",
    "hams_general_map",
    "hams_a_step",
    "hams_b_step",
    "hams_general_step",
    "grad_langevin_step",
    "leapfrog",
    "hmc_propose",
    "hmc_step",
    "udl_propose",
    "udl_step",
    "gmc_propose",
    "gmc_step",
    "metropolis_accept",
]


class StepOutcome(NamedTuple):
    next: AugmentedState
    accepted: bool
    log_rho: float
    proposal: AugmentedState


class BaselineKind(str, Enum):
    RWM = "RWM"
    PMALA = "pMALA"
    PMALA_STAR = "pMALAstar"
    PCNL = "pCNL"
    HMC = "HMC"
    UDL = "UDL"
    GMC = "GMC"


@dataclass(frozen=True)
class BaselineConfig:
    """Settings of a baseline sampler.

    ``epsilon`` is the step size. ``c`` is the momentum carryover for UDL and
    GMC, and ``nleap`` the number of leapfrog steps for HMC.
    """

    kind: BaselineKind
    epsilon: float
    c: float = 0.0
    nleap: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", BaselineKind(self.kind))
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")
        if self.kind in (BaselineKind.PMALA_STAR, BaselineKind.PCNL) and self.epsilon > 1.0:
            raise ValueError(f"{self.kind.value} requires epsilon <= 1")
        if self.kind in (BaselineKind.UDL, BaselineKind.GMC) and not 0.0 <= self.c <= 1.0:
            raise ValueError("carryover c must lie in [0, 1]")
        if self.kind is BaselineKind.HMC and int(self.nleap) < 1:
            raise ValueError("nleap must be at least 1")


class ProposalCovariance:
    """Proposal covariance ``Sigma`` with its lower Cholesky factor cached."""

    def __init__(self, sigma):
        sigma = np.array(sigma, dtype=np.float64)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError("Sigma must be a square matrix")
        if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-12):
            raise ValueError("Sigma must be symmetric")
        try:
            self.chol = cholesky(sigma, lower=True)
        except np.linalg.LinAlgError as err:
            raise ValueError(f"Sigma is not positive definite: {err}") from None
        self.sigma = sigma
        self.dim = sigma.shape[0]

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """``L^{-1} v``."""
        return solve_triangular(self.chol, v, lower=True, check_finite=False)


def metropolis_accept(log_rho: float, rng: RngStream) -> bool:
    """Draw one uniform ``w`` and accept iff ``w < min(1, exp(log_rho))``."""
    w = rng.uniform()
    if math.isnan(log_rho):
        return False
    return w < math.exp(min(0.0, log_rho))


def _evaluate(target: TargetModel, x: np.ndarray) -> Tuple[float, Optional[np.ndarray]]:
    try:
        value, grad = target.evaluate(x)
    except ModelDomainError:
        return math.inf, None
    if not math.isfinite(value) or not np.isfinite(grad).all():
        return math.inf, None
    return value, grad


def _failed(state: AugmentedState, x_star: np.ndarray, flip: bool) -> StepOutcome:
    """Outcome for a proposal that left the model's domain."""
    bad = AugmentedState(x_star, np.full_like(state.u, np.nan), math.inf, None)
    nxt = state.flipped() if flip else state
    return StepOutcome(nxt, False, -math.inf, bad)


# ---------------------------------------------------------------------------
# HAMS-A / HAMS-B
# ---------------------------------------------------------------------------


class HamsProposal(NamedTuple):
    """Proposal and backward noise produced by a HAMS map."""

    state: AugmentedState
    noise_star: Tuple[np.ndarray, ...]
    log_rho: float


def hams_ab_map(
    state: AugmentedState,
    cfg: HamsConfig,
    target: TargetModel,
    zeta: np.ndarray,
) -> Optional[HamsProposal]:
    """Deterministic HAMS-A/B proposal for a given noise vector ``zeta``.

    Returns ``None`` if the proposed position is outside the model's domain.
    """
    state = state.with_cache(target)
    a, b, rem = cfg.a, cfg.b, cfg.remainder
    x, u, g = state.x, state.u, state.grad
    s_ab = math.sqrt(a * b)
    s_ar = math.sqrt(a * rem)
    step = s_ab * u - a * g
    if rem > 0.0:
        step += s_ar * zeta
    x_star = x + step
    pot_star, g_star = _evaluate(target, x_star)
    if g_star is None:
        return None
    gsum = g + g_star
    two_minus_a = 2.0 - a
    if cfg.variant is Variant.A:
        rot = 2.0 * b / two_minus_a - 1.0
        cross = 2.0 * math.sqrt(b * rem) / two_minus_a
        u_star = rot * u - (s_ab / two_minus_a) * gsum
        zeta_star = (s_ar / two_minus_a) * gsum
        zeta_star -= cross * u
        if rem > 0.0:
            u_star += cross * zeta
            zeta_star += rot * zeta
        zeta_star *= -1.0
    elif cfg.variant is Variant.B:
        u_star = u - (s_ab / two_minus_a) * gsum
        zeta_star = zeta - (s_ar / two_minus_a) * gsum
    else:
        raise ContractError("hams_ab_map needs variant A or B")
    log_rho = (
        state.potential
        - pot_star
        + 0.5 * (u.dot(u) - u_star.dot(u_star) + zeta.dot(zeta) - zeta_star.dot(zeta_star))
    )
    proposal = AugmentedState(x_star, u_star, pot_star, g_star)
    return HamsProposal(proposal, (zeta_star,), float(log_rho))


def hams_a_phi_map(
    state: AugmentedState,
    cfg: HamsConfig,
    target: TargetModel,
    zeta: np.ndarray,
    phi: float,
) -> Optional[HamsProposal]:
    """HAMS-A proposal with an explicit gradient-correction coefficient ``phi``.

    Uses the single-noise form ``Z = sqrt(a (2 - a - b)) zeta``:
    ``x* = x + Zt`` with ``Zt = Z - a g + sqrt(ab) u``,
    ``u* = -u + sqrt(b/a) Zt + phi (Zt + g - g*)`` and
    ``Z* = Zt - a g* - sqrt(ab) u*``.
    With ``phi = sqrt(ab) / (2 - a)`` it coincides with :func:`hams_ab_map`.
    Requires ``a > 0`` and ``a + b < 2``.
    """
    state = state.with_cache(target)
    a, b, rem = cfg.a, cfg.b, cfg.remainder
    if a <= 0.0 or rem <= 0.0:
        raise ContractError("the explicit-phi form needs a > 0 and a + b < 2")
    x, u, g = state.x, state.u, state.grad
    scale = math.sqrt(a * rem)
    s_ab = math.sqrt(a * b)
    noise = scale * zeta
    z_tilde = noise - a * g + s_ab * u
    x_star = x + z_tilde
    pot_star, g_star = _evaluate(target, x_star)
    if g_star is None:
        return None
    u_star = -u + math.sqrt(b / a) * z_tilde + phi * (z_tilde + g - g_star)
    noise_star = z_tilde - a * g_star - s_ab * u_star
    zeta_star = noise_star / scale
    log_rho = (
        state.potential
        - pot_star
        + 0.5 * (u @ u - u_star @ u_star)
        + 0.5 * (zeta @ zeta - zeta_star @ zeta_star)
    )
    return HamsProposal(
        AugmentedState(x_star, u_star, pot_star, g_star), (zeta_star,), float(log_rho)
    )


def _hams_ab_step(state, cfg, target, rng, variant) -> StepOutcome:
    if cfg.variant is not variant:
        raise ContractError(f"expected a variant {variant.value} configuration")
    _check_dim(state, target)
    state = state.with_cache(target)
    k = state.dim
    zeta = rng.normal(k) if cfg.remainder > 0.0 else np.zeros(k)
    if cfg.phi is not None and variant is Variant.A:
        prop = hams_a_phi_map(state, cfg, target, zeta, cfg.phi)
    else:
        prop = hams_ab_map(state, cfg, target, zeta)
    if prop is None:
        rng.uniform()
        return _failed(state, state.x, flip=True)
    if metropolis_accept(prop.log_rho, rng):
        return StepOutcome(prop.state, True, prop.log_rho, prop.state)
    return StepOutcome(state.flipped(), False, prop.log_rho, prop.state)


def hams_a_step(
    state: AugmentedState, cfg: HamsConfig, target: TargetModel, rng: RngStream
) -> StepOutcome:
    """One HAMS-A iteration; a rejection returns ``(x, -u)``."""
    return _hams_ab_step(state, cfg, target, rng, Variant.A)


def hams_b_step(
    state: AugmentedState, cfg: HamsConfig, target: TargetModel, rng: RngStream
) -> StepOutcome:
    """One HAMS-B iteration; a rejection returns ``(x, -u)``."""
    return _hams_ab_step(state, cfg, target, rng, Variant.B)


# ---------------------------------------------------------------------------
# General HAMS
# ---------------------------------------------------------------------------


class _Block(NamedTuple):
    l11: float
    l21: float
    l22: float
    p11: float
    p12: float
    p22: float


def _general_block(cfg: HamsConfig) -> _Block:
    return _block_for(cfg.a1, cfg.a2, cfg.a3)


@lru_cache(maxsize=64)
def _block_for(a1: float, a2: float, a3: float) -> _Block:
    s11, s12, s22 = noise_block(a1, a2, a3)
    det = s11 * s22 - s12 * s12
    if s11 <= 0.0 or det <= 1e-14 * max(1.0, s11 * s22):
        raise ContractError(
            "2A - A^2 is singular for these coefficients; use HAMS-A or HAMS-B, "
            "which cover the singular cases"
        )
    l11 = math.sqrt(s11)
    l21 = s12 / l11
    l22 = math.sqrt(s22 - l21 * l21)
    return _Block(l11, l21, l22, s22 / det, -s12 / det, s11 / det)


def _block_quad(blk: _Block, z1: np.ndarray, z2: np.ndarray) -> float:
    return blk.p11 * z1.dot(z1) + 2.0 * blk.p12 * z1.dot(z2) + blk.p22 * z2.dot(z2)


def hams_general_map(
    state: AugmentedState,
    cfg: HamsConfig,
    target: TargetModel,
    z1: np.ndarray,
    z2: np.ndarray,
) -> Optional[HamsProposal]:
    """Deterministic general-HAMS proposal for explicit noises ``(z1, z2)``."""
    if cfg.variant is not Variant.GENERAL:
        raise ContractError("hams_general_map needs a general configuration")
    blk = _general_block(cfg)
    state = state.with_cache(target)
    a1, a2, a3 = cfg.a1, cfg.a2, cfg.a3
    phi = 0.0 if cfg.phi is None else cfg.phi
    x, u, g = state.x, state.u, state.grad
    zt1 = z1 - a1 * g + a2 * u
    zt2 = z2 - a2 * g + a3 * u
    x_star = x + zt1
    pot_star, g_star = _evaluate(target, x_star)
    if g_star is None:
        return None
    u_star = -u + zt2 + phi * (zt1 + g - g_star)
    z1_star = zt1 - a1 * g_star - a2 * u_star
    z2_star = zt2 - a2 * g_star - a3 * u_star
    log_rho = (
        state.potential
        - pot_star
        + 0.5 * (u @ u - u_star @ u_star)
        + 0.5 * (_block_quad(blk, z1, z2) - _block_quad(blk, z1_star, z2_star))
    )
    return HamsProposal(
        AugmentedState(x_star, u_star, pot_star, g_star), (z1_star, z2_star), float(log_rho)
    )


def sample_general_noise(cfg: HamsConfig, k: int, rng: RngStream) -> Tuple[np.ndarray, np.ndarray]:
    """Draw ``(Z1, Z2) ~ N(0, 2A - A^2)`` using the 2x2 per-coordinate factor."""
    blk = _general_block(cfg)
    e1 = rng.normal(k)
    e2 = rng.normal(k)
    return blk.l11 * e1, blk.l21 * e1 + blk.l22 * e2


def hams_general_step(
    state: AugmentedState, cfg: HamsConfig, target: TargetModel, rng: RngStream
) -> StepOutcome:
    """One iteration of general HAMS with block coefficients ``(a1, a2, a3)``."""
    _check_dim(state, target)
    state = state.with_cache(target)
    z1, z2 = sample_general_noise(cfg, state.dim, rng)
    prop = hams_general_map(state, cfg, target, z1, z2)
    if prop is None:
        rng.uniform()
        return _failed(state, state.x, flip=True)
    if metropolis_accept(prop.log_rho, rng):
        return StepOutcome(prop.state, True, prop.log_rho, prop.state)
    return StepOutcome(state.flipped(), False, prop.log_rho, prop.state)


# ---------------------------------------------------------------------------
# Position-only baselines
# ---------------------------------------------------------------------------


def _drift_coefficient(cfg: BaselineConfig) -> float:
    eps = cfg.epsilon
    if cfg.kind is BaselineKind.RWM:
        return 0.0
    if cfg.kind is BaselineKind.PMALA:
        return 0.5 * eps * eps
    if cfg.kind in (BaselineKind.PMALA_STAR, BaselineKind.PCNL):
        return eps * eps / (1.0 + math.sqrt(1.0 - eps * eps))
    raise ContractError(f"{cfg.kind.value} is not a position-only sampler")


def grad_langevin_step(
    state: AugmentedState,
    cfg: BaselineConfig,
    target: TargetModel,
    precond=None,
    rng: Optional[RngStream] = None,
) -> StepOutcome:
    """RWM, pMALA, pMALA* or pCNL step with proposal covariance ``eps^2 Sigma``.

    The proposal is ``x* = x - kappa Sigma grad U(x) + eps L z``, where
    ``L L' = Sigma`` and ``kappa`` depends on the method. pCNL is pMALA* with
    ``Sigma`` set to the prior covariance, so ``precond`` is required for it.
    The momentum is carried along untouched.
    """
    if rng is None:
        raise ContractError("rng is required")
    _check_dim(state, target)
    if precond is not None and not isinstance(precond, ProposalCovariance):
        precond = ProposalCovariance(precond)
    if cfg.kind is BaselineKind.PCNL and precond is None:
        raise ContractError("pCNL needs the prior covariance as precond")
    if precond is not None and precond.dim != state.dim:
        raise ContractError("Sigma dimension does not match the target")
    kappa = _drift_coefficient(cfg)
    eps = cfg.epsilon
    state = state.with_cache(target)
    x0, g0 = state.x, state.grad
    z = rng.normal(state.dim)
    if precond is None:
        x_star = x0 - kappa * g0 + eps * z
    else:
        x_star = x0 - kappa * (precond.sigma @ g0) + eps * (precond.chol @ z)
    pot_star, g_star = _evaluate(target, x_star)
    if pot_star == math.inf:
        rng.uniform()
        return _failed(state, x_star, flip=False)
    if kappa:
        back = x0 - x_star + kappa * (g_star if precond is None else precond.sigma @ g_star)
        r = back / eps if precond is None else precond.whiten(back) / eps
        log_rho = float(state.potential - pot_star + 0.5 * (z @ z - r @ r))
    else:
        # Symmetric proposal: the density ratio is exactly one.
        log_rho = float(state.potential - pot_star)
    proposal = AugmentedState(x_star, state.u, pot_star, g_star)
    if metropolis_accept(log_rho, rng):
        return StepOutcome(proposal, True, log_rho, proposal)
    return StepOutcome(state, False, log_rho, proposal)


# ---------------------------------------------------------------------------
# Momentum baselines
# ---------------------------------------------------------------------------


def leapfrog(
    state: AugmentedState, epsilon: float, nsteps: int, target: TargetModel
) -> AugmentedState:
    """``nsteps`` leapfrog updates with unit mass.

    Raises :class:`~hams.core.ModelDomainError` if the trajectory leaves the
    model's domain.
    """
    if int(nsteps) < 1:
        raise ContractError("nsteps must be at least 1")
    state = state.with_cache(target)
    x, u, g = state.x.copy(), state.u.copy(), state.grad
    half = 0.5 * epsilon
    pot = state.potential
    for _ in range(int(nsteps)):
        u = u - half * g
        x = x + epsilon * u
        pot, g = target.evaluate(x)
        if not math.isfinite(pot):
            raise ModelDomainError("non-finite potential along the leapfrog path")
        u = u - half * g
    return AugmentedState(x, u, pot, g)


def _safe_leapfrog(state, epsilon, nsteps, target) -> Optional[AugmentedState]:
    try:
        return leapfrog(state, epsilon, nsteps, target)
    except ModelDomainError:
        return None


def _energy(state: AugmentedState) -> float:
    return float(state.potential + 0.5 * (state.u @ state.u))


def hmc_propose(
    state: AugmentedState, cfg: BaselineConfig, target: TargetModel, u_fresh: np.ndarray
):
    """Return ``(start, proposal, log_rho)`` for HMC with resampled momentum ``u_fresh``.

    ``proposal`` is ``None`` when the trajectory failed.
    """
    state = state.with_cache(target)
    start = AugmentedState(state.x, u_fresh, state.potential, state.grad)
    end = _safe_leapfrog(start, cfg.epsilon, cfg.nleap, target)
    if end is None:
        return start, None, -math.inf
    return start, end, _energy(start) - _energy(end)


def hmc_step(
    state: AugmentedState, cfg: BaselineConfig, target: TargetModel, rng: RngStream
) -> StepOutcome:
    """HMC with full momentum refresh and ``cfg.nleap`` leapfrog steps.

    A rejection returns ``(x0, -u0)`` where ``u0`` is the freshly drawn momentum.
    """
    _check_dim(state, target)
    start, end, log_rho = hmc_propose(state, cfg, target, rng.normal(state.dim))
    if end is None:
        rng.uniform()
        return _failed(start, start.x, flip=True)
    if metropolis_accept(log_rho, rng):
        return StepOutcome(end, True, log_rho, end)
    return StepOutcome(start.flipped(), False, log_rho, end)


class UdlProposal(NamedTuple):
    u_plus: np.ndarray
    after_leapfrog: Optional[AugmentedState]
    proposal: Optional[AugmentedState]
    log_rho: float


def udl_propose(
    state: AugmentedState,
    cfg: BaselineConfig,
    target: TargetModel,
    z1: np.ndarray,
    z2: np.ndarray,
) -> UdlProposal:
    """UDL proposal for explicit refresh noises ``z1`` and ``z2``."""
    state = state.with_cache(target)
    keep = math.sqrt(cfg.c)
    fresh = math.sqrt(1.0 - cfg.c)
    u_plus = keep * state.u + fresh * z1
    start = AugmentedState(state.x, u_plus, state.potential, state.grad)
    mid = _safe_leapfrog(start, cfg.epsilon, 1, target)
    if mid is None:
        return UdlProposal(u_plus, None, None, -math.inf)
    u_star = keep * mid.u + fresh * z2
    proposal = AugmentedState(mid.x, u_star, mid.potential, mid.grad)
    return UdlProposal(u_plus, mid, proposal, _energy(start) - _energy(mid))


def udl_step(
    state: AugmentedState, cfg: BaselineConfig, target: TargetModel, rng: RngStream
) -> StepOutcome:
    """Underdamped Langevin step: refresh, one leapfrog, refresh, then accept or reject.

    Acceptance uses ``exp(H(x0, u+) - H(x*, u-))``. A rejection returns ``(x0, -u0)``.
    """
    _check_dim(state, target)
    state = state.with_cache(target)
    z1 = rng.normal(state.dim)
    z2 = rng.normal(state.dim)
    prop = udl_propose(state, cfg, target, z1, z2)
    if prop.proposal is None:
        rng.uniform()
        return _failed(state, state.x, flip=True)
    if metropolis_accept(prop.log_rho, rng):
        return StepOutcome(prop.proposal, True, prop.log_rho, prop.proposal)
    return StepOutcome(state.flipped(), False, prop.log_rho, prop.proposal)


def gmc_propose(
    state: AugmentedState, cfg: BaselineConfig, target: TargetModel, z: np.ndarray
) -> UdlProposal:
    """GMC proposal: one refresh then one leapfrog, no second refresh."""
    state = state.with_cache(target)
    u_plus = math.sqrt(cfg.c) * state.u + math.sqrt(1.0 - cfg.c) * z
    start = AugmentedState(state.x, u_plus, state.potential, state.grad)
    mid = _safe_leapfrog(start, cfg.epsilon, 1, target)
    if mid is None:
        return UdlProposal(u_plus, None, None, -math.inf)
    return UdlProposal(u_plus, mid, mid, _energy(start) - _energy(mid))


def gmc_step(
    state: AugmentedState, cfg: BaselineConfig, target: TargetModel, rng: RngStream
) -> StepOutcome:
    """GMC step; a rejection returns ``(x0, -u+)`` with ``u+`` the refreshed momentum."""
    _check_dim(state, target)
    state = state.with_cache(target)
    prop = gmc_propose(state, cfg, target, rng.normal(state.dim))
    rejected = AugmentedState(state.x, -prop.u_plus, state.potential, state.grad)
    if prop.proposal is None:
        rng.uniform()
        return StepOutcome(rejected, False, -math.inf, rejected)
    if metropolis_accept(prop.log_rho, rng):
        return StepOutcome(prop.proposal, True, prop.log_rho, prop.proposal)
    return StepOutcome(rejected, False, prop.log_rho, prop.proposal)
