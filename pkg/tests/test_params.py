import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hams.params import (
    HamsConfig,
    Variant,
    a_to_step,
    carryover_to_b,
    default_b,
    default_phi,
    step_to_a,
    validate_general_A,
)


@pytest.mark.parametrize("eps,a", [(0.0, 0.0), (1.0, 1.0), (0.6, 0.2)])
def test_step_to_a_examples(eps, a):
    assert step_to_a(eps) == pytest.approx(a, abs=1e-15)


@given(st.floats(0.0, 1.0))
def test_step_to_a_identity(eps):
    assert step_to_a(eps) == pytest.approx(1.0 - math.sqrt(1.0 - eps * eps), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("eps", [-0.1, 1.1])
def test_step_to_a_domain(eps):
    with pytest.raises(ValueError):
        step_to_a(eps)


# d a / d eps = eps / (1 - a), so rounding eps costs about 1e-16 / (1 - a) in a.
# The 1e-12 round trip is only attainable for 1 - a >= 1e-4; a = 1 itself is exact.
@given(st.floats(1e-6, 1.0 - 1e-4))
def test_round_trip_a(a):
    assert step_to_a(a_to_step(a)) == pytest.approx(a, rel=1e-12)


def test_round_trip_a_endpoint():
    assert step_to_a(a_to_step(1.0)) == 1.0


@given(st.floats(0.0, 0.99), st.floats(1e-4, 0.009))
def test_step_to_a_increasing(eps, d):
    assert step_to_a(eps + d) > step_to_a(eps)


def test_carryover_examples():
    assert carryover_to_b(0.7, 0.0) == 0.0
    assert carryover_to_b(0.5, 1.0) == 1.5
    assert carryover_to_b(0.2, 0.76) == pytest.approx(1.368, abs=1e-15)
    with pytest.raises(ValueError):
        carryover_to_b(0.5, 1.2)


def test_default_b_examples():
    assert default_b(2.0, "A") == pytest.approx(0.0, abs=1e-15)
    assert default_b(0.5, "A") == pytest.approx(0.5, abs=1e-15)
    assert default_b(1.0, "B") == pytest.approx(3 - 2 * math.sqrt(2), abs=1e-15)
    with pytest.raises(ValueError):
        default_b(0.0, "A")


@given(st.floats(1e-6, 2.0 - 1e-6), st.sampled_from(["A", "B"]))
def test_default_b_inside_range(a, v):
    b = default_b(a, v)
    assert 0.0 < b < 2.0 - a


def test_default_phi_examples():
    assert default_phi(0.5, 0.0, "A") == 0.0
    assert default_phi(0.5, 0.0, "B") == 0.0
    assert default_phi(0.5, 0.5, "A") == pytest.approx(1 / 3, abs=1e-15)
    assert default_phi(1.0, 1.0, "A") == pytest.approx(1.0)
    assert default_phi(2.0, 0.0, "A") == 0.0
    with pytest.raises(ZeroDivisionError):
        default_phi(2.0, 0.1, "A")
    with pytest.raises(ValueError):
        default_phi(0.0, 0.5, "B")


def test_validate_general_A_examples():
    assert validate_general_A(0.5, 0.3, 0.5).ok
    bad = validate_general_A(1.0, 1.1, 1.0)
    assert not bad.ok and "a2" in bad.diagnostic
    assert validate_general_A(0.0, 0.0, 0.0).ok
    assert not validate_general_A(1.5, 0.0, 1.0).ok


def test_config_invariants():
    with pytest.raises(ValueError):
        HamsConfig(Variant.A, a=1.5, b=0.6)
    with pytest.raises(ValueError):
        HamsConfig(Variant.A, a=0.0, b=1.0)
    assert HamsConfig(Variant.A, a=0.0, b=1.0, allow_zero_a=True).b == 1.0
    with pytest.raises(ValueError):
        HamsConfig(Variant.B, a=2.0, b=0.0)
    with pytest.raises(ValueError):
        HamsConfig.general(1.0, 1.1, 1.0)


def test_from_step_uses_default_or_carryover():
    cfg = HamsConfig.from_step("A", 0.6)
    assert cfg.a == pytest.approx(0.2)
    assert cfg.b == pytest.approx(default_b(0.2, "A"))
    cfg = HamsConfig.from_step("B", 0.6, c=0.76)
    assert cfg.b == pytest.approx(1.368)
    assert cfg.carryover == pytest.approx(0.76)
