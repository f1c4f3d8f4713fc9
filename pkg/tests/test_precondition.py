import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hams.core import AugmentedState, ContractError, RngStream, TargetModel, check_gradient
from hams.models.sv import SvModel, simulate_sv_data, sv_latent_target
from hams.params import HamsConfig
from hams.precondition import (
    CholeskyError,
    PrecondCache,
    Preconditioner,
    cholesky_factor,
    hams_precond_reference_step,
    hams_precond_step,
    precond_wrap,
)
from hams.samplers import hams_a_step, hams_b_step


def test_identity_factor():
    P = cholesky_factor(np.eye(3))
    assert np.array_equal(P.L, np.eye(3))


def test_hand_cholesky():
    P = cholesky_factor([[4.0, 2.0], [2.0, 3.0]])
    assert np.allclose(P.L, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], atol=1e-15)


def test_indefinite_names_minor():
    with pytest.raises(CholeskyError, match="order 2"):
        cholesky_factor([[1.0, 2.0], [2.0, 1.0]])


@settings(max_examples=50)
@given(st.integers(1, 8), st.integers(0, 2**31))
def test_factor_and_solves(k, seed):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(k, k))
    M = G @ G.T + k * np.eye(k)
    P = cholesky_factor(M)
    assert np.linalg.norm(P.L @ P.L.T - M) / np.linalg.norm(M) <= 1e-10
    assert np.allclose(np.tril(P.L), P.L) and np.all(np.diag(P.L) > 0)
    v = rng.normal(size=k)
    assert np.allclose(P.L @ P.solve_lower(v), v, atol=1e-10)
    assert np.allclose(P.L.T @ P.solve_upper(v), v, atol=1e-10)


def _sv(T=50, seed=1):
    x, y = simulate_sv_data(T, 0.65, 0.15, 0.98, RngStream(seed))
    t = sv_latent_target(SvModel(y, 0.65, 0.15, 0.98))
    return x, t


def test_wrap_identity_is_original():
    x, t = _sv(10)
    w = precond_wrap(t, Preconditioner.identity(10))
    assert w.potential(x) == t.potential(x)
    assert np.allclose(w.gradient(x), t.gradient(x))


def test_wrap_gradient_fd():
    x, t = _sv(30)
    P = cholesky_factor(t.expected_hessian_hint)
    w = precond_wrap(t, P)
    rng = np.random.default_rng(2)
    for _ in range(5):
        assert check_gradient(w, P.to_tilde(x + 0.1 * rng.normal(size=30))) <= 1e-6


def test_wrap_hamiltonian_identity():
    x, t = _sv(10)
    P = cholesky_factor(t.expected_hessian_hint)
    w = precond_wrap(t, P)
    assert w.potential(P.to_tilde(x)) == pytest.approx(t.potential(x), rel=1e-13)


@pytest.mark.parametrize("variant", ["A", "B"])
def test_identity_preconditioner_matches_plain_chain(variant):
    x, t = _sv(20)
    cfg = HamsConfig.from_step(variant, 0.3)
    P = Preconditioner.identity(20)
    r1, r2 = RngStream(5), RngStream(5)
    s1 = s2 = AugmentedState(x, np.zeros(20))
    cache = PrecondCache.initialize(x, t, P)
    step = hams_a_step if variant == "A" else hams_b_step
    for _ in range(100):
        o1 = hams_precond_step(s1, cfg, t, P, r1, cache)
        o2 = step(s2, cfg, t, r2)
        assert o1.accepted == o2.accepted
        assert np.allclose(o1.next.x, o2.next.x, atol=1e-12)
        assert np.allclose(o1.next.u, o2.next.u, atol=1e-12)
        s1, s2 = o1.next, o2.next


@pytest.mark.parametrize("variant", ["A", "B"])
def test_rejection_free_under_matching_gaussian(variant):
    rng = np.random.default_rng(4)
    G = rng.normal(size=(6, 6))
    M = G @ G.T + np.eye(6)
    t = TargetModel.gaussian(M)
    P = cholesky_factor(M)
    cfg = HamsConfig.from_step(variant, 0.8)
    r = RngStream(1)
    s = AugmentedState(rng.normal(size=6), rng.normal(size=6))
    cache = PrecondCache.initialize(s.x, t, P)
    for _ in range(300):
        out = hams_precond_step(s, cfg, t, P, r, cache)
        assert out.accepted and abs(out.log_rho) <= 1e-8
        s = out.next


def test_cache_desync_raises():
    x, t = _sv(5)
    P = Preconditioner.identity(5)
    cache = PrecondCache.initialize(x, t, P)
    with pytest.raises(ContractError):
        hams_precond_step(AugmentedState(x + 1.0, np.zeros(5)), HamsConfig.from_step("A", 0.3), t, P,
                          RngStream(0), cache)


@pytest.mark.parametrize("variant", ["A", "B"])
def test_ratio_algebra_matches_long_form(variant):
    x, t = _sv(15)
    P = cholesky_factor(t.expected_hessian_hint)
    rng = np.random.default_rng(9)
    for i in range(30):
        cfg = HamsConfig(variant, a=rng.uniform(0.05, 1.0), b=rng.uniform(0.0, 0.9))
        s = AugmentedState(x + 0.2 * rng.normal(size=15), rng.normal(size=15))
        o1 = hams_precond_step(s, cfg, t, P, RngStream(i))
        o2 = hams_precond_reference_step(s, cfg, t, P, RngStream(i))
        assert o1.log_rho == pytest.approx(o2.log_rho, abs=1e-10)
