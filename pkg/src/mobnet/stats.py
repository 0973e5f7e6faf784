"""Estimators and test statistics used by the experiment layer.

Everything returns (estimate, se) pairs or plain statistics; no verdicts are
taken here so reports can carry estimate, SE, threshold and sample count
side by side.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps


def mean_se(samples: np.ndarray) -> tuple[float, float]:
    """Sample mean and its standard error."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n == 0:
        return math.nan, math.nan
    if n == 1:
        return float(x[0]), math.inf
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n))


def ratio_estimate(numer: np.ndarray, denom: np.ndarray) -> tuple[float, float]:
    """Renewal-reward ratio estimate with the delta-method standard error.

    numer and denom are per-cycle rewards and lengths; the estimator is
    sum(numer)/sum(denom) and the SE uses the variance of the per-cycle
    residual numer - ratio * denom.
    """
    numer = np.asarray(numer, dtype=float)
    denom = np.asarray(denom, dtype=float)
    n = len(numer)
    total = denom.sum()
    if n == 0 or total == 0:
        return math.nan, math.nan
    ratio = numer.sum() / total
    if n == 1:
        return float(ratio), math.inf
    resid = numer - ratio * denom
    se = math.sqrt(resid.var(ddof=1) / n) / (total / n)
    return float(ratio), float(se)


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float, float]:
    """Wilson score interval: (point estimate, lower, upper)."""
    if n == 0:
        return math.nan, math.nan, math.nan
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return p, max(0.0, center - half), min(1.0, center + half)


def binomial_se(successes: int, n: int) -> float:
    if n == 0:
        return math.nan
    p = successes / n
    return math.sqrt(p * (1.0 - p) / n)


def ks_distance(samples: np.ndarray, cdf) -> float:
    """One-sample Kolmogorov-Smirnov distance against a CDF callable."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    f = np.asarray(cdf(x), dtype=float)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def ks_two_sample(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov distance."""
    return float(sps.ks_2samp(a, b, method="asymp").statistic)


def dkw_band(n: int, confidence: float = 0.95) -> float:
    """Dvoretzky-Kiefer-Wolfowitz half-width for the empirical CDF."""
    if n == 0:
        return math.inf
    return math.sqrt(math.log(2.0 / (1.0 - confidence)) / (2.0 * n))


def median_interval(samples: np.ndarray, confidence: float = 0.95):
    """Median and an order-statistic confidence interval."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    med = float(np.median(x))
    if n < 8:
        return med, float(x[0]), float(x[-1])
    z = sps.norm.ppf(0.5 + confidence / 2.0)
    half = z * math.sqrt(n) / 2.0
    lo = int(max(0, math.floor(n / 2 - half)))
    hi = int(min(n - 1, math.ceil(n / 2 + half)))
    return med, float(x[lo]), float(x[hi])


def weighted_slope(x: np.ndarray, y: np.ndarray, se_y: np.ndarray):
    """Weighted least-squares line fit; returns (slope, slope_se, intercept).

    Weights are inverse-variance from the per-point standard errors.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    se_y = np.asarray(se_y, dtype=float)
    w = 1.0 / np.maximum(se_y, 1e-12) ** 2
    W = w.sum()
    xbar = (w * x).sum() / W
    ybar = (w * y).sum() / W
    sxx = (w * (x - xbar) ** 2).sum()
    if sxx <= 0.0:
        return math.nan, math.inf, float(ybar)
    slope = (w * (x - xbar) * (y - ybar)).sum() / sxx
    intercept = ybar - slope * xbar
    slope_se = math.sqrt(1.0 / sxx)
    return float(slope), float(slope_se), float(intercept)


def log_frequency(hits: int, n: int) -> tuple[float, float]:
    """log of a small empirical frequency with a delta-method SE.

    Uses the (hits + 1/2)/(n + 1) continuity correction so zero counts stay
    finite.
    """
    p = (hits + 0.5) / (n + 1.0)
    se = math.sqrt(max(1.0 - p, 0.0) / ((hits + 0.5)))
    return math.log(p), se
