"""Interval estimates for replica averages."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtri

from ..hierarchy import wilson_interval


def mean_stderr(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 2:
        return float(x.mean()) if len(x) else math.nan, math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def median_iqr(x) -> tuple[float, float, float]:
    q1, med, q3 = np.percentile(np.asarray(x, dtype=np.float64), [25, 50, 75])
    return float(med), float(q1), float(q3)


def hoeffding_halfwidth(n: int, lo: float, hi: float, alpha: float = 0.05) -> float:
    """Two-sided half width for the mean of n independent values in [lo, hi]."""
    if n <= 0:
        return math.inf
    return (hi - lo) * math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


def hoeffding_interval(x, lo: float, hi: float, alpha: float = 0.05) -> tuple[float, float, float]:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise ValueError("values outside the declared range")
    m = float(x.mean())
    w = hoeffding_halfwidth(len(x), lo, hi, alpha)
    return m, max(lo, m - w), min(hi, m + w)


def normal_interval(x, z: float = 1.96) -> tuple[float, float, float]:
    m, se = mean_stderr(x)
    return m, m - z * se, m + z * se


def coverage(sampler, truth: float, n: int, trials: int, lo: float, hi: float, seed: int = 0,
             alpha: float = 0.05) -> tuple[float, float]:
    """Empirical coverage of (Hoeffding, normal) intervals on synthetic data from sampler(rng, n)."""
    rng = np.random.default_rng(seed)
    hits_h = hits_n = 0
    z = float(ndtri(1.0 - alpha / 2.0))
    for _ in range(trials):
        x = sampler(rng, n)
        _, a, b = hoeffding_interval(x, lo, hi, alpha)
        hits_h += a <= truth <= b
        _, a, b = normal_interval(x, z)
        hits_n += a <= truth <= b
    return hits_h / trials, hits_n / trials


__all__ = ["mean_stderr", "median_iqr", "hoeffding_halfwidth", "hoeffding_interval", "normal_interval",
           "coverage", "wilson_interval"]
