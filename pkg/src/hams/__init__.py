"""Hamiltonian assisted Metropolis sampling and its baselines."""

from .chains import METHODS, Chain, ChainRecord, run_chain
from .core import (
    AugmentedState,
    ContractError,
    ModelDomainError,
    RngStream,
    TargetModel,
    hamiltonian,
)
from .params import HamsConfig, Variant, default_b, default_phi, step_to_a
from .precondition import Preconditioner, cholesky_factor, hams_precond_step
from .samplers import hams_a_step, hams_b_step, hams_general_step

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "Chain",
    "ChainRecord",
    "run_chain",
    "AugmentedState",
    "ContractError",
    "ModelDomainError",
    "RngStream",
    "TargetModel",
    "hamiltonian",
    "HamsConfig",
    "Variant",
    "default_b",
    "default_phi",
    "step_to_a",
    "Preconditioner",
    "cholesky_factor",
    "hams_precond_step",
    "hams_a_step",
    "hams_b_step",
    "hams_general_step",
    "__version__",
]
