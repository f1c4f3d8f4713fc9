"""Correlated multivariate normal target."""

from __future__ import annotations

import numpy as np

from ..core import TargetModel


def ar1_correlation(k: int, rho: float = 0.9) -> np.ndarray:
    """``C[i, j] = rho**|i - j|``."""
    idx = np.arange(k)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def mvn_target(cov) -> TargetModel:
    """``N(0, cov)`` with precision precomputed; the hint is the precision."""
    cov = np.asarray(cov, dtype=np.float64)
    precision = np.linalg.inv(cov)
    precision = 0.5 * (precision + precision.T)
    return TargetModel.gaussian(precision, name=f"mvn_{cov.shape[0]}")
