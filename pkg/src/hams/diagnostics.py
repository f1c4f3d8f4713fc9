"""Autocorrelation, Bartlett-window effective sample size and batch means."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "DegenerateSeriesError",
    "EssReport",
    "acf",
    "ess_bartlett",
    "summarize_chain",
    "batch_means_stderr",
    "DEFAULT_ESS_CUTOFF",
]

DEFAULT_ESS_CUTOFF = 3000


class DegenerateSeriesError(ValueError):
    """The series has zero variance, so correlations are undefined."""


def acf(series, max_lag: int) -> np.ndarray:
    """Autocorrelations at lags ``1..max_lag``.

    Uses the biased normalisation: the lag-``k`` sum of centred products is
    divided by ``n`` times the sample variance. Computed via FFT.
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    n = x.size
    max_lag = int(max_lag)
    if max_lag < 1:
        raise ValueError("max_lag must be at least 1")
    if n < max_lag + 2:
        raise ValueError(f"series of length {n} is too short for max_lag={max_lag}")
    centred = x - x.mean()
    var = float(centred @ centred)
    if not var > 0.0 or var <= 1e-300 * n:
        raise DegenerateSeriesError("series has zero variance")
    size = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(centred, size)
    cov = np.fft.irfft(spec * np.conj(spec), size)[: max_lag + 1]
    return cov[1:] / var


def ess_bartlett(series, K: int = DEFAULT_ESS_CUTOFF) -> float:
    """Effective sample size with a Bartlett lag window of width ``K``.

    ``ESS = n / (1 + 2 * sum_{k=1}^{K} (1 - k/K) rho(k))``. ``K`` is clamped
    to ``n - 2``. A non-positive or tiny denominator is floored at ``1/n``
    with a warning. The estimate can exceed ``n`` for negatively correlated
    chains.
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    n = x.size
    if n < 10:
        raise ValueError("need at least 10 draws")
    k_eff = min(int(K), n - 2)
    rho = acf(x, k_eff)
    weights = 1.0 - np.arange(1, k_eff + 1) / k_eff
    denom = 1.0 + 2.0 * float(weights @ rho)
    floor = 1.0 / n
    if denom < floor:
        log.warning("ESS denominator %.3e below floor; clamped to 1/n", denom)
        denom = floor
    return n / denom


@dataclass
class EssReport:
    per_coordinate_ess: np.ndarray
    min: float
    median: float
    max: float
    n: int
    K: int
    time_seconds: float
    min_ess_per_second: float
    degenerate: List[int] = field(default_factory=list)


def summarize_chain(draws, wall_time: float, K: int = DEFAULT_ESS_CUTOFF) -> EssReport:
    """Per-coordinate ESS of an ``n x k`` draw matrix.

    Coordinates with zero variance are listed in ``degenerate`` and left out
    of the summary statistics (their entry in ``per_coordinate_ess`` is NaN).
    """
    d = np.asarray(draws, dtype=np.float64)
    if d.ndim == 1:
        d = d[:, None]
    n, k = d.shape
    if n < 10 or k < 1:
        raise ValueError("need at least 10 draws of at least one coordinate")
    ess = np.full(k, np.nan)
    bad: List[int] = []
    for j in range(k):
        try:
            ess[j] = ess_bartlett(d[:, j], K)
        except DegenerateSeriesError:
            bad.append(j)
    if bad:
        log.warning("degenerate coordinates excluded from ESS summary: %s", bad)
    good = ess[np.isfinite(ess)]
    if good.size == 0:
        raise DegenerateSeriesError("every coordinate is degenerate")
    lo = float(good.min())
    per_sec = lo / wall_time if wall_time > 0 else float("inf")
    return EssReport(
        per_coordinate_ess=ess,
        min=lo,
        median=float(np.median(good)),
        max=float(good.max()),
        n=n,
        K=min(int(K), n - 2),
        time_seconds=float(wall_time),
        min_ess_per_second=per_sec,
        degenerate=bad,
    )


def batch_means_stderr(series, n_batches: int = 50) -> float:
    """Batch-means standard error of the sample mean.

    Trailing draws that do not fill a whole batch are dropped.
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    size = x.size // int(n_batches)
    if size < 1:
        raise ValueError("more batches than draws")
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))
