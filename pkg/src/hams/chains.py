"""Chain driver: one object per running chain, whatever the method.

:class:`Chain` owns the state, the optional preconditioner and its cache, and
the current step size. It lets tuning, the Gibbs sweep and the CLI treat
every method uniformly. Baselines with a preconditioner run on the transformed
target ``xt = L' x``. HAMS-A/B use the cached preconditioned iteration. In
both cases :meth:`Chain.position` reports ``x`` in the original coordinates.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import AugmentedState, RngStream, TargetModel
from .params import HamsConfig, Variant, carryover_to_b, default_b, step_to_a
from .precondition import (
    PrecondCache,
    Preconditioner,
    hams_precond_step,
    precond_wrap,
)
from .samplers import (
    BaselineConfig,
    BaselineKind,
    ProposalCovariance,
    StepOutcome,
    grad_langevin_step,
    gmc_step,
    hams_a_step,
    hams_b_step,
    hams_general_step,
    hmc_step,
    udl_step,
)

log = logging.getLogger(__name__)

__all__ = ["METHODS", "Chain", "ChainRecord", "run_chain", "carryover_for"]

METHODS = (
    "HAMS-A",
    "HAMS-B",
    "HAMS-general",
    "RWM",
    "pMALA",
    "pMALAstar",
    "pCNL",
    "HMC",
    "UDL",
    "GMC",
)

_BASELINES = {kind.value: kind for kind in BaselineKind}


def carryover_for(method: str, epsilon: float) -> float:
    """Carryover ``c`` implied by the default ``b`` at step size ``epsilon``.

    HAMS-B uses its own default; HAMS-A, UDL and GMC use the HAMS-A default.
    """
    a = step_to_a(epsilon)
    if a == 0.0:
        return 1.0
    variant = Variant.B if method == "HAMS-B" else Variant.A
    return default_b(a, variant) / (2.0 - a)


class Chain:
    """A single Markov chain for one of :data:`METHODS`.

    Args:
        method: Method name.
        target: Target in the original coordinates.
        epsilon: Step size in ``(0, 1]`` (ignored by general HAMS).
        x0: Starting position in the original coordinates.
        u0: Starting momentum (zeros when omitted).
        c: Momentum carryover. ``None`` derives it from ``epsilon`` through
            the default ``b`` each time the step size changes.
        nleap: Leapfrog steps for HMC.
        preconditioner: Optional mass matrix factor.
        prior_cov: Prior covariance, required by pCNL.
        general: ``(a1, a2, a3, phi)`` for general HAMS.
    """

    def __init__(
        self,
        method: str,
        target: TargetModel,
        epsilon: float,
        x0: Sequence[float],
        u0: Optional[Sequence[float]] = None,
        *,
        c: Optional[float] = None,
        nleap: int = 1,
        preconditioner: Optional[Preconditioner] = None,
        prior_cov=None,
        general: Optional[Sequence[float]] = None,
    ):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        self.method = method
        self.fixed_c = c
        self.nleap = int(nleap)
        self.P = preconditioner
        self.prior = None
        if method == "pCNL":
            if prior_cov is None:
                raise ValueError("pCNL needs the prior covariance")
            self.prior = ProposalCovariance(prior_cov)
        if method == "HAMS-general":
            if general is None:
                raise ValueError("HAMS-general needs (a1, a2, a3, phi)")
            self.cfg = HamsConfig.general(*general)
        self.epsilon = float(epsilon)
        x0 = np.asarray(x0, dtype=np.float64)
        u0 = np.zeros_like(x0) if u0 is None else np.asarray(u0, dtype=np.float64)
        self.target = target
        self._setup_target(target)
        if self.transformed:
            x0 = self.P.to_tilde(x0)
        self.state = AugmentedState(x0, u0)
        self.cache: Optional[PrecondCache] = None
        self.set_epsilon(self.epsilon)

    @property
    def transformed(self) -> bool:
        """True when the state lives in ``xt = L' x`` coordinates."""
        return self.P is not None and self.method not in ("HAMS-A", "HAMS-B", "pCNL")

    def _setup_target(self, target: TargetModel) -> None:
        self.target = target
        self.work_target = precond_wrap(target, self.P) if self.transformed else target

    def retarget(self, target: TargetModel) -> None:
        """Swap in a new target (Gibbs sweeps), keeping position and momentum."""
        x = self.position()
        self._setup_target(target)
        if self.transformed:
            x = self.P.to_tilde(x)
        self.state = AugmentedState(x, self.state.u)
        self.cache = None

    def set_epsilon(self, epsilon: float) -> None:
        self.epsilon = float(epsilon)
        m = self.method
        if m == "HAMS-general":
            return
        if m in ("HAMS-A", "HAMS-B"):
            variant = Variant.A if m == "HAMS-A" else Variant.B
            a = step_to_a(self.epsilon)
            b = default_b(a, variant) if self.fixed_c is None else carryover_to_b(a, self.fixed_c)
            self.cfg = HamsConfig(variant, a=a, b=b)
            return
        c = self.fixed_c
        if c is None and m in ("UDL", "GMC"):
            c = carryover_for(m, self.epsilon)
        self.cfg = BaselineConfig(_BASELINES[m], self.epsilon, c=c or 0.0, nleap=self.nleap)

    @property
    def carryover(self) -> Optional[float]:
        if isinstance(self.cfg, HamsConfig) and self.cfg.variant is not Variant.GENERAL:
            return self.cfg.carryover
        if isinstance(self.cfg, BaselineConfig) and self.cfg.kind in (BaselineKind.UDL, BaselineKind.GMC):
            return self.cfg.c
        return None

    def position(self) -> np.ndarray:
        if self.transformed:
            return self.P.from_tilde(self.state.x)
        return self.state.x

    def step(self, rng: RngStream) -> StepOutcome:
        m = self.method
        st = self.state
        if m in ("HAMS-A", "HAMS-B") and self.P is not None:
            if self.cache is None:
                self.cache = PrecondCache.initialize(st.x, self.target, self.P)
            out = hams_precond_step(st, self.cfg, self.target, self.P, rng, self.cache)
        elif m == "HAMS-A":
            out = hams_a_step(st, self.cfg, self.work_target, rng)
        elif m == "HAMS-B":
            out = hams_b_step(st, self.cfg, self.work_target, rng)
        elif m == "HAMS-general":
            out = hams_general_step(st, self.cfg, self.work_target, rng)
        elif m in ("RWM", "pMALA", "pMALAstar"):
            out = grad_langevin_step(st, self.cfg, self.work_target, None, rng)
        elif m == "pCNL":
            out = grad_langevin_step(st, self.cfg, self.work_target, self.prior, rng)
        elif m == "HMC":
            out = hmc_step(st, self.cfg, self.work_target, rng)
        elif m == "UDL":
            out = udl_step(st, self.cfg, self.work_target, rng)
        else:
            out = gmc_step(st, self.cfg, self.work_target, rng)
        self.state = out.next
        return out

    def gradient_evaluations(self) -> int:
        """Gradient evaluations per iteration, used as a cost proxy."""
        return self.nleap if self.method == "HMC" else 1


@dataclass
class ChainRecord:
    """Draws and per-iteration metadata of a chain segment."""

    draws: np.ndarray
    accepted: np.ndarray
    log_rho: np.ndarray
    wall_time: np.ndarray
    epsilon: float
    carryover: Optional[float] = None
    stages: List[int] = field(default_factory=list)

    @property
    def acceptance_rate(self) -> float:
        return float(np.count_nonzero(self.accepted)) / max(1, self.accepted.size)

    @property
    def total_time(self) -> float:
        return float(self.wall_time[-1]) if self.wall_time.size else 0.0


class NonFiniteChainError(FloatingPointError):
    def __init__(self, iteration: int):
        super().__init__(f"chain produced a non-finite draw at iteration {iteration}")
        self.iteration = iteration


def run_chain(chain: Chain, n: int, rng: RngStream, sink=None) -> ChainRecord:
    """Run ``n`` iterations and collect draws in the original coordinates.

    ``sink``, if given, is called with ``(iteration, x, accepted, log_rho)``
    after every iteration, which lets callers stream draws to disk.
    """
    k = chain.target.dim
    work = np.empty((n, k))
    accepted = np.zeros(n, dtype=bool)
    log_rho = np.empty(n)
    wall = np.empty(n)
    start = time.perf_counter()
    for i in range(n):
        out = chain.step(rng)
        work[i] = chain.state.x
        accepted[i] = out.accepted
        log_rho[i] = out.log_rho
        wall[i] = time.perf_counter() - start
        if not math.isfinite(chain.state.x[0]) or not np.all(np.isfinite(chain.state.x)):
            raise NonFiniteChainError(i)
        if sink is not None:
            sink(i, chain.position(), out.accepted, out.log_rho)
    # Baselines under preconditioning carry xt; map all draws back at once.
    draws = chain.P.solve_upper(work.T).T if chain.transformed else work
    return ChainRecord(draws, accepted, log_rho, wall, chain.epsilon, chain.carryover)
