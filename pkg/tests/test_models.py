import math

import numpy as np
import pytest

from hams.core import ModelDomainError, RngStream, check_gradient
from hams.models import (
    BlockSpec,
    CoxFamily,
    CoxModel,
    GibbsSchedule,
    SvFamily,
    SvModel,
    ar1_correlation,
    ar1_covariance_matrix,
    ar1_precision_matrix,
    ar1_precision_matvec,
    cox_latent_preconditioner_matrix,
    cox_latent_target,
    cox_param_expected_hessian,
    cox_param_target,
    gibbs_run,
    mvn_target,
    read_series,
    simulate_cox_data,
    simulate_sv_data,
    sv_latent_target,
    sv_param_expected_hessian,
    sv_param_potential_grad,
    sv_param_target,
    sv_to_working,
    write_series,
)

SV_TRUE = (0.65, 0.15, 0.98)


@pytest.mark.parametrize("T", [1, 2, 5, 50])
def test_ar1_precision_inverts_covariance(T):
    C = ar1_covariance_matrix(T, 0.15, 0.98)
    Q = ar1_precision_matrix(T, 0.15, 0.98)
    assert np.linalg.norm(Q @ C - np.eye(T)) <= 1e-8


def test_matvec_matches_dense():
    x = np.random.default_rng(0).normal(size=30)
    assert np.allclose(ar1_precision_matvec(x, 0.3, 0.7), ar1_precision_matrix(30, 0.3, 0.7) @ x)


def test_sv_latent_gradient_at_origin():
    y = np.array([0.5, -1.0, 2.0])
    t = sv_latent_target(SvModel(y, 0.65, 0.15, 0.98))
    assert np.allclose(t.gradient(np.zeros(3)), 0.5 - 0.5 * y**2 / 0.65**2)


def test_sv_latent_fd():
    x, y = simulate_sv_data(40, *SV_TRUE, RngStream(1))
    t = sv_latent_target(SvModel(y, *SV_TRUE))
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert check_gradient(t, x + 0.3 * rng.normal(size=40)) <= 1e-5


def test_sv_param_fd():
    x, y = simulate_sv_data(40, *SV_TRUE, RngStream(2))
    t = sv_param_target(x, y)
    rng = np.random.default_rng(2)
    base = sv_to_working(*SV_TRUE)
    for _ in range(20):
        th = base + np.array([0.1, 0.3, 0.3]) * rng.normal(size=3)
        th[0] = abs(th[0]) + 0.05
        assert check_gradient(t, th) <= 1e-5


def test_sv_param_domain():
    with pytest.raises(ModelDomainError):
        sv_param_potential_grad([-0.1, 0.0, 0.0], np.zeros(3), np.ones(3))


def test_sv_expected_hessian_diagonal_monte_carlo():
    # The beta and gamma entries are exact expectations over (x, y).
    T, rng = 20, RngStream(3)
    theta = sv_to_working(*SV_TRUE)
    H = sv_param_expected_hessian(theta, T)
    h = 1e-4
    vals = []
    for _ in range(3000):
        x, y = simulate_sv_data(T, *SV_TRUE, rng)
        row = []
        for i in (0, 2):
            e = np.zeros(3)
            e[i] = h
            g_plus = sv_param_potential_grad(theta + e, x, y)[1][i]
            g_minus = sv_param_potential_grad(theta - e, x, y)[1][i]
            row.append((g_plus - g_minus) / (2 * h))
        vals.append(row)
    vals = np.array(vals)
    se = vals.std(axis=0) / math.sqrt(len(vals))
    assert abs(vals[:, 0].mean() - H[0, 0]) <= 4 * se[0]
    assert abs(vals[:, 1].mean() - H[2, 2]) <= 4 * se[1]


def test_sv_simulator_moments():
    x, y = simulate_sv_data(200000, 0.65, 0.15, 0.9, RngStream(4))
    assert x.var() == pytest.approx(0.15**2 / (1 - 0.81), rel=0.05)
    assert np.corrcoef(x[:-1], x[1:])[0, 1] == pytest.approx(0.9, abs=0.01)


def test_sv_zero_sigma_gives_iid_normals():
    x, y = simulate_sv_data(100000, 0.65, 0.0, 0.9, RngStream(5))
    assert np.all(x == 0.0)
    assert y.std() == pytest.approx(0.65, rel=0.02)


def _cox(m=4, seed=0):
    mu = math.log(126.0) - 0.5 * 1.91
    x, y = simulate_cox_data(m, 1.91, 0.3, mu, RngStream(seed))
    return x, CoxModel(m, y, 1.91, 0.3, mu)


def test_cox_latent_fd():
    x, model = _cox()
    t = cox_latent_target(model)
    rng = np.random.default_rng(6)
    for _ in range(20):
        assert check_gradient(t, x + 0.2 * rng.normal(size=16)) <= 1e-5


def test_cox_latent_origin_gradient():
    _, model = _cox()
    g = cox_latent_target(model).gradient(np.zeros(16))
    assert np.allclose(g, math.exp(model.mu) / 16 - model.y)


def test_cox_param_fd():
    x, model = _cox()
    t = cox_param_target(x, model.dist, model.m)
    rng = np.random.default_rng(7)
    for _ in range(20):
        phi = np.array([math.log(1.91), math.log(0.3)]) + 0.3 * rng.normal(size=2)
        assert check_gradient(t, phi) <= 1e-5


def test_cox_preconditioner_diagonal_shift():
    _, model = _cox()
    M = cox_latent_preconditioner_matrix(model)
    Q = np.linalg.inv(model.covariance())
    D = math.exp(model.mu + 0.5 * model.sigma2) / model.n
    assert np.allclose(M - Q, D * np.eye(16), atol=1e-6 * np.abs(Q).max())


@pytest.mark.parametrize("sigma2", [0.5, 1.91, 4.0])
@pytest.mark.parametrize("beta", [0.1, 0.3, 1.0])
def test_cox_param_hessian_spd(sigma2, beta):
    _, model = _cox()
    H = cox_param_expected_hessian([math.log(sigma2), math.log(beta)], model.dist, model.m)
    assert np.allclose(H, H.T)
    assert np.all(np.linalg.eigvalsh(H) > 0)


def test_cox_rejects_nonpositive():
    with pytest.raises(ModelDomainError):
        CoxModel(2, np.zeros(4), -1.0, 0.3, 0.0)


def test_mvn_target_gradient():
    t = mvn_target(ar1_correlation(5, 0.9))
    x = np.arange(5.0)
    assert np.allclose(t.gradient(x), np.linalg.solve(ar1_correlation(5, 0.9), x))


def test_series_round_trip(tmp_path):
    v = np.random.default_rng(8).normal(size=17)
    p = write_series(tmp_path / "y.txt", v, 99)
    back, seed = read_series(p)
    assert seed == 99 and np.array_equal(back, v)


def test_series_length_mismatch(tmp_path):
    p = write_series(tmp_path / "y.txt", np.ones(3), 1)
    p.write_text(p.read_text() + "2.0\n")
    with pytest.raises(ValueError):
        read_series(p)


def test_schedule_validation():
    with pytest.raises(ValueError):
        GibbsSchedule(1, 0, 5, 5)
    with pytest.raises(ValueError):
        GibbsSchedule(-1, 1, 1, 1)


def test_gibbs_sv_smoke():
    x, y = simulate_sv_data(20, *SV_TRUE, RngStream(9))
    rec = gibbs_run(
        BlockSpec("HAMS-A", 0.3), BlockSpec("HAMS-A", 0.05, c=0.1), SvFamily(y),
        GibbsSchedule(250, 100, 250, 100), RngStream(10), x, sv_to_working(*SV_TRUE),
    )
    assert rec.stage_boundaries == [0, 250, 350, 600, 700]
    assert rec.preconditioner_builds == 1
    assert rec.crude_estimate.shape == (3,)
    assert rec.latent[rec.stage_slice("collect")].shape == (100, 20)
    assert np.all(np.isfinite(rec.params))
    stages = {t["stage"] for t in rec.epsilon_trace}
    assert stages == {"tune", "precond_tune"}


def test_gibbs_params_frozen_when_disabled():
    x, model = _cox(3)
    phi = np.array([math.log(1.91), math.log(0.3)])
    rec = gibbs_run(
        BlockSpec("UDL", 0.3, c=0.76), None, CoxFamily(model), GibbsSchedule(0, 50, 0, 50),
        RngStream(11), x, phi,
    )
    assert np.all(rec.params == phi)
    assert not rec.param_accepted.any()
    assert rec.preconditioner_builds == 1


def test_gibbs_rejects_pcnl_param_block():
    x, y = simulate_sv_data(10, *SV_TRUE, RngStream(12))
    with pytest.raises(ValueError):
        gibbs_run(BlockSpec("HAMS-A"), BlockSpec("pCNL"), SvFamily(y), GibbsSchedule(0, 5, 0, 5),
                  RngStream(0), x, sv_to_working(*SV_TRUE))
