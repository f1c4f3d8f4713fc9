"""Parameter algebra for HAMS.

Users configure HAMS through a step size ``epsilon`` and a carryover ``c``,
both in ``[0, 1]``. Internally the proposals use ``(a, b)``:

* ``a = 1 - sqrt(1 - epsilon**2)``
* ``b = c * (2 - a)``

For the general block form, ``A = [[a1 I, a2 I], [a2 I, a3 I]]``.

The default carryover minimises the largest eigenvalue modulus of the lag-1
autocovariance on a standard normal target. The default ``phi`` minimises the
leading coefficients of the log acceptance ratio on a normal target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

__all__ = [
    "Variant",
    "HamsConfig",
    "Validation",
    "step_to_a",
    "a_to_step",
    "carryover_to_b",
    "default_b",
    "default_phi",
    "validate_general_A",
    "noise_block",
]


class Variant(str, Enum):
    A = "A"
    B = "B"
    GENERAL = "General"


class Validation(NamedTuple):
    ok: bool
    diagnostic: str


def step_to_a(epsilon: float) -> float:
    """Step size ``a`` for a leapfrog-style step size ``epsilon``.

    Uses ``eps**2 / (1 + sqrt(1 - eps**2))``, which avoids cancellation for
    small ``eps`` and equals ``1 - sqrt(1 - eps**2)``.
    """
    eps = float(epsilon)
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {eps}")
    return eps * eps / (1.0 + math.sqrt(1.0 - eps * eps))


def a_to_step(a: float) -> float:
    """Inverse of :func:`step_to_a` on ``[0, 1]``: ``epsilon = sqrt(a (2 - a))``."""
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"a must lie in [0, 1], got {a}")
    return math.sqrt(a * (2.0 - a))


def carryover_to_b(a: float, c: float) -> float:
    if not 0.0 <= a <= 2.0:
        raise ValueError(f"a must lie in [0, 2], got {a}")
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"c must lie in [0, 1], got {c}")
    return c * (2.0 - a)


def default_b(a: float, variant: Variant | str) -> float:
    """Carryover ``b`` that minimises the lag-1 autocovariance spectral radius.

    * Variant A: ``(sqrt(2) - sqrt(a))**2``.
    * Variant B: ``a (2 - a) / (sqrt(2) + sqrt(2 - a))**2``.
    """
    variant = Variant(variant)
    if not 0.0 < a <= 2.0:
        raise ValueError(f"a must lie in (0, 2], got {a}")
    if variant is Variant.A:
        return (math.sqrt(2.0) - math.sqrt(a)) ** 2
    if variant is Variant.B:
        return a * (2.0 - a) / (math.sqrt(2.0) + math.sqrt(2.0 - a)) ** 2
    raise ValueError("default_b is defined for variants A and B only")


def default_phi(a: float, b: float, variant: Variant | str) -> float:
    """Gradient-correction coefficient ``phi`` for the momentum proposal.

    The HAMS-A/B update formulas already include this choice. The value is
    exposed for general HAMS and for checking the optimality results.

    * Variant A: ``sqrt(ab) / (2 - a)``.
    * Variant B: ``sqrt(b / a)``, in the parameterisation before the ``a``
      relabelling used by HAMS-B.
    """
    variant = Variant(variant)
    if b == 0.0:
        return 0.0
    if variant is Variant.A:
        if a >= 2.0:
            raise ZeroDivisionError("phi is singular for variant A at a = 2 with b > 0")
        return math.sqrt(a * b) / (2.0 - a)
    if variant is Variant.B:
        if a <= 0.0:
            raise ValueError("variant B requires a > 0")
        return math.sqrt(b / a)
    raise ValueError("default_phi is defined for variants A and B only")


def validate_general_A(a1: float, a2: float, a3: float) -> Validation:
    """Check ``a1, a3 >= 0``, ``a1 + a3 <= 2`` and ``a1 a3 >= a2**2``."""
    if a1 < 0.0:
        return Validation(False, f"a1 >= 0 violated (a1={a1})")
    if a3 < 0.0:
        return Validation(False, f"a3 >= 0 violated (a3={a3})")
    if a1 + a3 > 2.0:
        return Validation(False, f"a1 + a3 <= 2 violated (a1 + a3 = {a1 + a3})")
    if a1 * a3 < a2 * a2:
        return Validation(False, f"a1*a3 >= a2^2 violated ({a1 * a3} < {a2 * a2})")
    return Validation(True, "ok")


def noise_block(a1: float, a2: float, a3: float) -> tuple[float, float, float]:
    """Entries ``(s11, s12, s22)`` of the per-coordinate block of ``2A - A^2``."""
    s11 = 2.0 * a1 - a1 * a1 - a2 * a2
    s12 = 2.0 * a2 - a2 * (a1 + a3)
    s22 = 2.0 * a3 - a3 * a3 - a2 * a2
    return s11, s12, s22


@dataclass(frozen=True)
class HamsConfig:
    """Coefficients of a HAMS proposal.

    For variants A and B only ``a`` and ``b`` are used, and ``phi`` is the
    default built into the update formulas unless overridden (variant A only,
    which then switches to the explicit-``phi`` form of the momentum proposal).
    For the general variant ``a1, a2, a3`` and ``phi`` are used.
    """

    variant: Variant
    a: float = 0.0
    b: float = 0.0
    phi: Optional[float] = None
    a1: float = 0.0
    a2: float = 0.0
    a3: float = 0.0
    allow_zero_a: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant is Variant.GENERAL:
            check = validate_general_A(self.a1, self.a2, self.a3)
            if not check.ok:
                raise ValueError(f"invalid general HAMS coefficients: {check.diagnostic}")
            return
        a, b = float(self.a), float(self.b)
        if a < 0.0 or b < 0.0:
            raise ValueError(f"a and b must be non-negative, got a={a}, b={b}")
        if (2.0 - a) - b < 0.0:
            raise ValueError(f"a + b <= 2 violated (a={a}, b={b})")
        if a == 0.0 and not self.allow_zero_a:
            raise ValueError("a = 0 freezes x; pass allow_zero_a=True to build it deliberately")
        if a == 2.0 and b == 0.0:
            raise ValueError("(a, b) = (2, 0) is the excluded corner")

    @classmethod
    def from_step(
        cls,
        variant: Variant | str,
        epsilon: float,
        c: Optional[float] = None,
    ) -> "HamsConfig":
        """Build from ``(epsilon, c)``. Without ``c`` the default carryover is used."""
        a = step_to_a(epsilon)
        b = default_b(a, variant) if c is None else carryover_to_b(a, c)
        return cls(Variant(variant), a=a, b=b)

    @classmethod
    def general(cls, a1: float, a2: float, a3: float, phi: float = 0.0) -> "HamsConfig":
        return cls(Variant.GENERAL, a1=a1, a2=a2, a3=a3, phi=phi)

    @property
    def remainder(self) -> float:
        """``2 - a - b``, clamped to exactly zero when it rounds below zero."""
        return max((2.0 - self.a) - self.b, 0.0)

    @property
    def carryover(self) -> float:
        """``c = b / (2 - a)``."""
        return self.b / (2.0 - self.a)
