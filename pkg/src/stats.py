"""Confidence intervals, Wilson bounds and affine fits for experiment summaries."""
from __future__ import annotations

import math
from typing import Sequence, Tuple

import numpy as np

from . import config


def wilson_interval(successes: int, trials: int, z: float = config.CONFIDENCE_Z) -> Tuple[float, float]:
    if trials <= 0:
        return 0.0, 0.0
    p = successes / trials
    denom = 1 + (z ** 2) / trials
    center = p + (z ** 2) / (2 * trials)
    margin = z * math.sqrt((p * (1 - p) + (z ** 2) / (4 * trials)) / trials)
    return max(0.0, (center - margin) / denom), min(1.0, (center + margin) / denom)


def mean_ci(values: Sequence[float], z: float = config.CONFIDENCE_Z) -> Tuple[float, float, float]:
    """Mean with a normal-approximation interval; a single value gives a degenerate interval."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return 0.0, 0.0, 0.0
    mean = float(arr.mean())
    if arr.size == 1:
        return mean, mean, mean
    half = z * float(arr.std(ddof=1)) / math.sqrt(arr.size)
    return mean, mean - half, mean + half


def affine_fit(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float, float]:
    """Least-squares line; returns (slope, intercept, r_squared)."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size < 2:
        raise ValueError("affine fit needs at least two points")
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - float((residual ** 2).sum()) / ss_tot
    return float(slope), float(intercept), r2


def proportion_trend(
    xs: Sequence[float], successes: Sequence[int], trials: Sequence[int], z: float = config.CONFIDENCE_Z
) -> Tuple[float, float, bool]:
    """Slope of success proportion against x with a binomial standard error.

    Returns (slope, standard_error, significant).
    """
    x = np.asarray(xs, dtype=float)
    n = np.asarray(trials, dtype=float)
    p = np.asarray(successes, dtype=float) / n
    dx = x - x.mean()
    sxx = float((dx ** 2).sum())
    if sxx == 0:
        return 0.0, 0.0, False
    slope = float((dx * (p - p.mean())).sum()) / sxx
    pooled = float(np.sum(successes)) / float(n.sum())
    se = math.sqrt(float((dx ** 2 * pooled * (1 - pooled) / n).sum())) / sxx
    significant = se > 0 and abs(slope) > z * se
    return slope, se, bool(significant)
