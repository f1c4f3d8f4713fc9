"""Targets, augmented states, the Hamiltonian and the seeded randomness contract.

Every sampler in the package works on a :class:`TargetModel` (a potential
``U(x) = -log pi(x)`` up to a constant, plus its gradient) and, for the
momentum-based methods, an :class:`AugmentedState` ``(x, u)`` with unit-mass
momentum ``u ~ N(0, I)``.

Randomness comes from :class:`RngStream`, a thin wrapper around NumPy's
``PCG64`` bit generator seeded through ``SeedSequence(seed, spawn_key=(stream_id,))``.
Standard normals use NumPy's ziggurat method (``Generator.standard_normal``) and
uniforms use ``Generator.random``. Both are frozen choices: two streams built
from the same ``(seed, stream_id)`` produce bit-identical variates for a fixed
NumPy version.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

__all__ = [
    "ContractError",
    "ModelDomainError",
    "TargetModel",
    "AugmentedState",
    "RngStream",
    "hamiltonian",
    "standard_normal_vector",
    "check_gradient",
]

MAX_STREAM = 2**64 - 1


class ContractError(ValueError):
    """Raised when a caller violates a documented precondition."""


class ModelDomainError(ArithmeticError):
    """Raised by a model when asked to evaluate outside its domain.

    Samplers treat this error at a proposed point as a rejection, so a
    proposal that wanders into an overflow region never crashes a chain.
    """


def _as_vector(x, name: str = "x") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class TargetModel:
    """A target density known through its potential energy.

    Args:
        dim: Dimension ``k`` of the position vector.
        potential: Callable returning ``U(x)`` in nats.
        gradient: Callable returning ``grad U(x)``.
        expected_hessian_hint: Optional ``k x k`` SPD matrix approximating the
            inverse target variance, used to build a preconditioner.
        potential_and_gradient: Optional callable returning both at once. When
            absent it is synthesised from the two separate callables.
        name: Label used in logs and output files.
    """

    dim: int
    potential: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    expected_hessian_hint: Optional[np.ndarray] = None
    potential_and_gradient: Optional[Callable[[np.ndarray], Tuple[float, np.ndarray]]] = None
    name: str = "target"

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ContractError("dim must be a positive integer")
        object.__setattr__(self, "dim", int(self.dim))
        if self.expected_hessian_hint is not None:
            hint = np.array(self.expected_hessian_hint, dtype=np.float64)
            if hint.shape != (self.dim, self.dim):
                raise ContractError("expected_hessian_hint must be dim x dim")
            hint.setflags(write=False)
            object.__setattr__(self, "expected_hessian_hint", hint)

    def evaluate(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        """Return ``(U(x), grad U(x))``."""
        if self.potential_and_gradient is not None:
            value, grad = self.potential_and_gradient(x)
        else:
            value, grad = self.potential(x), self.gradient(x)
        return float(value), np.asarray(grad, dtype=np.float64)

    @classmethod
    def standard_normal(cls, dim: int) -> "TargetModel":
        """``N(0, I_dim)``, the reference target for the rejection-free checks."""
        return cls.gaussian(np.eye(dim), name=f"std_normal_{dim}")

    @classmethod
    def gaussian(cls, precision, mean=None, name: str = "gaussian") -> "TargetModel":
        """Gaussian target specified through its precision matrix."""
        prec = np.array(precision, dtype=np.float64)
        prec = 0.5 * (prec + prec.T)
        k = prec.shape[0]
        mu = np.zeros(k) if mean is None else _as_vector(mean, "mean").copy()

        def both(x):
            d = x - mu
            g = prec @ d
            return 0.5 * float(d @ g), g

        return cls(
            dim=k,
            potential=lambda x: both(x)[0],
            gradient=lambda x: both(x)[1],
            potential_and_gradient=both,
            expected_hessian_hint=prec,
            name=name,
        )


@dataclass(frozen=True, eq=False)
class AugmentedState:
    """Position ``x`` and unit-mass momentum ``u``.

    ``potential`` and ``grad`` optionally cache ``U(x)`` and ``grad U(x)`` so a
    chain evaluates the gradient once per iteration. They are ignored by
    equality-style comparisons in the tests, which look at ``x`` and ``u``.
    """

    x: np.ndarray
    u: np.ndarray
    potential: Optional[float] = field(default=None, repr=False)
    grad: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        x = _as_vector(self.x, "x")
        u = _as_vector(self.u, "u")
        if x.shape != u.shape:
            raise ContractError(f"x has length {x.size} but u has length {u.size}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)

    @property
    def dim(self) -> int:
        return self.x.size

    def with_cache(self, target: TargetModel) -> "AugmentedState":
        """Return the same state with ``U(x)`` and its gradient filled in."""
        if self.potential is not None and self.grad is not None:
            return self
        _check_dim(self, target)
        value, grad = target.evaluate(self.x)
        return AugmentedState(self.x, self.u, value, grad)

    def flipped(self) -> "AugmentedState":
        """``(x, -u)`` keeping the cached potential and gradient."""
        return AugmentedState(self.x, -self.u, self.potential, self.grad)

    def cleared(self) -> "AugmentedState":
        """Drop the cache, e.g. after the target changed inside a Gibbs sweep."""
        return AugmentedState(self.x, self.u)


def _check_dim(state: AugmentedState, target: TargetModel) -> None:
    if state.x.size != target.dim:
        raise ContractError(
            f"state has dimension {state.x.size} but target has dimension {target.dim}"
        )


class RngStream:
    """Reproducible source of uniform and standard-normal variates.

    Args:
        seed: Master seed, an unsigned 64-bit integer.
        stream_id: Independent stream index, an unsigned 64-bit integer.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        for label, value in (("seed", seed), ("stream_id", stream_id)):
            if not (0 <= int(value) <= MAX_STREAM):
                raise ContractError(f"{label} must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self) -> float:
        return float(self._gen.random())

    def substream(self, index: int) -> "RngStream":
        """A new stream keyed on ``(seed, stream_id * 2**20 + index)``.

        Used by experiment drivers to give each chain block its own stream.
        """
        return RngStream(self.seed, (self.stream_id * 2**20 + int(index)) % (MAX_STREAM + 1))

    @property
    def generator(self) -> np.random.Generator:
        """The underlying NumPy generator, for simulators needing other laws."""
        return self._gen

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def hamiltonian(state: AugmentedState, target: TargetModel) -> float:
    """Total energy ``U(x) + u'u / 2``."""
    _check_dim(state, target)
    pot = state.potential if state.potential is not None else target.potential(state.x)
    return float(pot) + 0.5 * float(state.u @ state.u)


def standard_normal_vector(rng: RngStream, k: int) -> np.ndarray:
    """Draw ``k`` independent standard normals from ``rng``."""
    if int(k) < 1:
        raise ContractError("k must be at least 1")
    return rng.normal(int(k))


def check_gradient(
    target: TargetModel,
    x: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Max relative error between ``grad U(x)`` and central differences.

    The error of each coordinate is scaled by ``max(1, |g|)``, with ``|g|``
    the infinity norm of the analytic gradient. Badly scaled coordinates
    therefore do not blow the ratio up near zero.
    """
    x = _as_vector(x)
    grad = np.asarray(target.gradient(x), dtype=np.float64)
    fd = np.empty_like(grad)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        fd[i] = (target.potential(x + e) - target.potential(x - e)) / (2 * step)
    scale = max(1.0, float(np.max(np.abs(grad))))
    return float(np.max(np.abs(fd - grad)) / scale)
