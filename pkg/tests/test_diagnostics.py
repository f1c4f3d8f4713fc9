import numpy as np
import pytest

from hams.diagnostics import (
    DegenerateSeriesError,
    acf,
    batch_means_stderr,
    ess_bartlett,
    summarize_chain,
)


def ar1(n, rho, seed):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - rho**2)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + e[i]
    return x


def test_acf_matches_direct_sum():
    x = np.random.default_rng(0).normal(size=500)
    c = x - x.mean()
    direct = np.array([c[: -k] @ c[k:] for k in range(1, 21)]) / (c @ c)
    assert np.allclose(acf(x, 20), direct, atol=1e-12)


def test_acf_of_ar1_is_geometric():
    r = acf(ar1(200000, 0.8, 1), 5)
    assert np.allclose(r, 0.8 ** np.arange(1, 6), atol=0.02)


def test_ess_white_noise_near_n():
    x = np.random.default_rng(2).normal(size=20000)
    assert ess_bartlett(x, 200) == pytest.approx(20000, rel=0.1)


def test_ess_ar1_closed_form():
    rho, K, n = 0.5, 200, 200000
    k = np.arange(1, K + 1)
    expected = n / (1 + 2 * np.sum((1 - k / K) * rho**k))
    assert ess_bartlett(ar1(n, rho, 3), K) == pytest.approx(expected, rel=0.05)


def test_degenerate_series():
    with pytest.raises(DegenerateSeriesError):
        acf(np.ones(100), 5)


def test_floor_for_pathological_series():
    x = np.r_[np.zeros(50), np.ones(50)]
    assert ess_bartlett(x, 98) <= 100.0


def test_summary_excludes_degenerate_columns():
    rng = np.random.default_rng(5)
    d = np.column_stack([rng.normal(size=200), np.ones(200), rng.normal(size=200)])
    rep = summarize_chain(d, 2.0, K=50)
    assert rep.degenerate == [1]
    assert np.isnan(rep.per_coordinate_ess[1])
    assert rep.min_ess_per_second == pytest.approx(rep.min / 2.0)


def test_batch_means_iid():
    x = np.random.default_rng(6).normal(size=50000)
    assert batch_means_stderr(x) == pytest.approx(1 / np.sqrt(50000), rel=0.3)
