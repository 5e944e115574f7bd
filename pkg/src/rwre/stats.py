"""Shared statistical helpers: seeded bootstrap, binomial intervals, fits."""

from __future__ import annotations

import numpy as np
from scipy import stats as sps

from . import rng


def binomial_ci(k: int, n: int, confidence: float = 0.99):
    """Clopper-Pearson interval; exact, works at k = 0 and k = n."""
    if n <= 0:
        return (0.0, 1.0)
    alpha = 1.0 - confidence
    lo = 0.0 if k == 0 else float(sps.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(sps.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return (lo, hi)


def rule_of_three(n: int) -> float:
    """One-sided upper bound for a probability after n all-negative trials."""
    return 3.0 / max(n, 1)


def bootstrap_ci(values: np.ndarray, stat, seed: int, n_boot: int = 1000,
                 confidence: float = 0.99):
    """Seeded nonparametric percentile bootstrap of a statistic."""
    values = np.asarray(values)
    n = values.shape[0]
    if n == 0:
        return (float("nan"), float("nan"))
    stream = rng.CounterStream(rng.derive_key(seed, 0xB5))
    reps = np.empty(n_boot)
    for i in range(n_boot):
        idx = (stream.uniforms(n) * n).astype(np.int64)
        reps[i] = stat(values[idx])
    alpha = 1.0 - confidence
    return (float(np.quantile(reps, alpha / 2)), float(np.quantile(reps, 1 - alpha / 2)))


def mean_ci(values: np.ndarray, confidence: float = 0.99):
    """Normal-theory interval for a mean."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if n < 2:
        return (float("-inf"), float("inf"))
    m = float(values.mean())
    se = float(values.std(ddof=1)) / np.sqrt(n)
    z = float(sps.norm.ppf(0.5 + confidence / 2))
    return (m - z * se, m + z * se)


def loglog_slope(x: np.ndarray, y: np.ndarray):
    """Least-squares slope and intercept of log y against log x."""
    lx = np.log(np.asarray(x, dtype=np.float64))
    ly = np.log(np.asarray(y, dtype=np.float64))
    a = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, _, _ = np.linalg.lstsq(a, ly, rcond=None)
    fitted = a @ coef
    return float(coef[0]), float(coef[1]), (ly - fitted)


def verdict_from_ci(ci, threshold: float, direction: str) -> str:
    """Three-valued verdict; decisive only when the CI excludes the threshold.

    direction "below": the condition asserts value < threshold.
    direction "above": the condition asserts value > threshold.
    """
    lo, hi = ci
    if not np.isfinite(lo) or not np.isfinite(hi):
        return "inconclusive"
    if direction == "below":
        if hi < threshold:
            return "holds"
        if lo > threshold:
            return "fails"
    elif direction == "above":
        if lo > threshold:
            return "holds"
        if hi < threshold:
            return "fails"
    else:
        raise ValueError(direction)
    return "inconclusive"
