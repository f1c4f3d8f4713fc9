"""Gibbs alternation between the latent field and the model parameters.

A run follows four stages:

1. ``tune``: no preconditioning, step sizes adapted.
2. ``crude``: no preconditioning, fixed step sizes. Draws feed a crude
   posterior mean.
3. ``precond_tune``: preconditioners built once at the crude mean, step
   sizes adapted again.
4. ``collect``: preconditioned, fixed step sizes. These draws are kept.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..chains import Chain
from ..core import RngStream, TargetModel
from ..precondition import cholesky_factor
from ..tuning import TuningPolicy, adapt_step_size
from .cox import (
    CoxModel,
    cox_latent_preconditioner_matrix,
    cox_latent_target,
    cox_param_expected_hessian,
    cox_param_target,
)
from .sv import (
    SvModel,
    ar1_covariance_matrix,
    ar1_precision_matrix,
    sv_latent_target,
    sv_param_expected_hessian,
    sv_param_target,
    sv_to_natural,
)

log = logging.getLogger(__name__)

__all__ = [
    "BlockSpec",
    "GibbsSchedule",
    "GibbsRecord",
    "SvFamily",
    "CoxFamily",
    "gibbs_run",
]

STAGES = ("tune", "crude", "precond_tune", "collect")


@dataclass(frozen=True)
class BlockSpec:
    """Sampler settings for one Gibbs block.

    ``c`` applies while unpreconditioned. Once preconditioned, HAMS, UDL and
    GMC derive the carryover from the step size.
    """

    method: str
    epsilon: float = 0.1
    c: Optional[float] = None
    nleap: int = 1


@dataclass(frozen=True)
class GibbsSchedule:
    tune: int
    crude: int
    precond_tune: int
    collect: int

    def __post_init__(self):
        for name in STAGES:
            if int(getattr(self, name)) < 0:
                raise ValueError(f"stage {name} has a negative length")
        if self.crude < 1 and (self.precond_tune or self.collect):
            raise ValueError("the crude stage must have draws before preconditioned stages")

    def lengths(self) -> List[int]:
        return [int(getattr(self, name)) for name in STAGES]


class SvFamily:
    """Conditionals of the stochastic volatility posterior.

    Parameters are handled in working form ``(beta, alpha, gamma)``.
    """

    def __init__(self, y: np.ndarray):
        self.y = np.asarray(y, dtype=np.float64)
        self.dim_latent = self.y.size

    def latent_target(self, theta) -> TargetModel:
        beta, sigma, phi = sv_to_natural(theta)
        return sv_latent_target(SvModel(self.y, beta, sigma, phi), with_hint=False)

    def param_target(self, x) -> TargetModel:
        return sv_param_target(x, self.y)

    def latent_matrix(self, theta, x_mean) -> np.ndarray:
        _, sigma, phi = sv_to_natural(theta)
        return ar1_precision_matrix(self.dim_latent, sigma, phi) + 0.5 * np.eye(self.dim_latent)

    def param_matrix(self, theta, x_mean) -> np.ndarray:
        return sv_param_expected_hessian(theta, self.dim_latent)

    def latent_prior_cov(self, theta) -> np.ndarray:
        _, sigma, phi = sv_to_natural(theta)
        return ar1_covariance_matrix(self.dim_latent, sigma, phi)


class CoxFamily:
    """Conditionals of the Cox process posterior in ``(log sigma2, log beta)``."""

    def __init__(self, model: CoxModel):
        self.model = model
        self.dim_latent = model.n

    def _model(self, phi) -> CoxModel:
        return self.model.with_params(math.exp(phi[0]), math.exp(phi[1]))

    def latent_target(self, phi) -> TargetModel:
        return cox_latent_target(self._model(phi), with_hint=False)

    def param_target(self, x) -> TargetModel:
        return cox_param_target(x, self.model.dist, self.model.m)

    def latent_matrix(self, phi, x_mean) -> np.ndarray:
        return cox_latent_preconditioner_matrix(self._model(phi))

    def param_matrix(self, phi, x_mean) -> np.ndarray:
        return cox_param_expected_hessian(phi, self.model.dist, self.model.m)

    def latent_prior_cov(self, phi) -> np.ndarray:
        return self._model(phi).covariance()


@dataclass
class GibbsRecord:
    latent: np.ndarray
    params: np.ndarray
    latent_accepted: np.ndarray
    param_accepted: np.ndarray
    stage_boundaries: List[int]
    epsilon_trace: List[Dict[str, float]] = field(default_factory=list)
    crude_estimate: Optional[np.ndarray] = None
    preconditioner_builds: int = 0
    wall_time: float = 0.0
    stage_times: List[float] = field(default_factory=list)

    def stage_slice(self, name: str) -> slice:
        i = STAGES.index(name)
        return slice(self.stage_boundaries[i], self.stage_boundaries[i + 1])


def _make_chain(spec: BlockSpec, target, x, u, precond, prior_cov, preconditioned: bool):
    return Chain(
        spec.method,
        target,
        spec.epsilon,
        x,
        u,
        c=None if preconditioned else spec.c,
        nleap=spec.nleap,
        preconditioner=precond,
        prior_cov=prior_cov,
    )


def gibbs_run(
    latent_spec: BlockSpec,
    param_spec: Optional[BlockSpec],
    family,
    schedule: GibbsSchedule,
    rng: RngStream,
    x0,
    theta0,
    policy: Optional[TuningPolicy] = None,
    param_policy: Optional[TuningPolicy] = None,
) -> GibbsRecord:
    """Run the four-stage Gibbs protocol.

    With ``param_spec=None`` the parameters stay at ``theta0`` and only the
    latent block is sampled. Both blocks adapt on the latent policy's window.
    """
    latent_policy = policy or TuningPolicy.for_method(latent_spec.method)
    if param_spec is not None and param_policy is None:
        param_policy = TuningPolicy.for_method(param_spec.method)
    x = np.asarray(x0, dtype=np.float64).copy()
    theta = np.asarray(theta0, dtype=np.float64).copy()
    k = x.size
    latent_rng = rng.substream(1)
    param_rng = rng.substream(2)

    def prior_for(spec, th):
        return family.latent_prior_cov(th) if spec.method == "pCNL" else None

    lat = _make_chain(
        latent_spec, family.latent_target(theta), x, latent_rng.normal(k), None,
        prior_for(latent_spec, theta), False,
    )
    par = None
    if param_spec is not None:
        if param_spec.method == "pCNL":
            raise ValueError("pCNL is defined for the latent block only")
        par = _make_chain(
            param_spec, family.param_target(x), theta, param_rng.normal(theta.size), None,
            None, False,
        )

    total = sum(schedule.lengths())
    latent_draws = np.empty((total, k))
    param_draws = np.empty((total, theta.size))
    lat_acc = np.zeros(total, dtype=bool)
    par_acc = np.zeros(total, dtype=bool)
    boundaries = [0]
    trace: List[Dict[str, float]] = []
    crude = None
    builds = 0
    it = 0
    stage_times: List[float] = []
    start = time.perf_counter()
    for stage, length in zip(STAGES, schedule.lengths()):
        if stage == "precond_tune" and length + schedule.collect > 0:
            sl = slice(boundaries[1], boundaries[2])
            crude = param_draws[sl].mean(axis=0) if par is not None else theta.copy()
            x_mean = latent_draws[sl].mean(axis=0)
            P_lat = cholesky_factor(family.latent_matrix(crude, x_mean))
            builds += 1
            lat = _make_chain(
                latent_spec, family.latent_target(theta), lat.position(), lat.state.u,
                P_lat, prior_for(latent_spec, crude), True,
            )
            lat.set_epsilon(latent_spec.epsilon)
            if par is not None:
                P_par = cholesky_factor(family.param_matrix(crude, x_mean))
                par = _make_chain(
                    param_spec, family.param_target(lat.position()), par.position(),
                    par.state.u, P_par, None, True,
                )
        tuning = stage in ("tune", "precond_tune")
        window_acc = [0, 0]
        for j in range(length):
            if it > 0:
                lat.retarget(family.latent_target(theta))
            out = lat.step(latent_rng)
            x = lat.position()
            lat_acc[it] = out.accepted
            window_acc[0] += out.accepted
            if par is not None:
                par.retarget(family.param_target(x))
                pout = par.step(param_rng)
                theta = par.position().copy()
                par_acc[it] = pout.accepted
                window_acc[1] += pout.accepted
            latent_draws[it] = x
            param_draws[it] = theta
            it += 1
            if not np.all(np.isfinite(x)) or not np.all(np.isfinite(theta)):
                raise FloatingPointError(f"non-finite draw at Gibbs iteration {it - 1}")
            if tuning and (j + 1) % latent_policy.window == 0:
                rates = [w / latent_policy.window for w in window_acc]
                trace.append(
                    {
                        "iteration": it,
                        "stage": stage,
                        "latent_epsilon": lat.epsilon,
                        "latent_rate": rates[0],
                        "param_epsilon": par.epsilon if par else float("nan"),
                        "param_rate": rates[1] if par else float("nan"),
                    }
                )
                lat.set_epsilon(adapt_step_size(lat.epsilon, rates[0], latent_policy))
                if par is not None:
                    par.set_epsilon(adapt_step_size(par.epsilon, rates[1], param_policy))
                window_acc = [0, 0]
        boundaries.append(it)
        stage_times.append(time.perf_counter() - start - sum(stage_times))
        log.info("stage %s finished at iteration %d", stage, it)

    return GibbsRecord(
        latent=latent_draws,
        params=param_draws,
        latent_accepted=lat_acc,
        param_accepted=par_acc,
        stage_boundaries=boundaries,
        epsilon_trace=trace,
        crude_estimate=crude,
        preconditioner_builds=builds,
        wall_time=time.perf_counter() - start,
        stage_times=stage_times,
    )
