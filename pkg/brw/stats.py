# brw/stats.py
import math
from typing import Tuple

import numpy as np
from scipy.stats import norm


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion; (0, 1) when trials == 0."""
    if trials <= 0:
        return 0.0, 1.0
    z = float(norm.ppf(1 - (1 - confidence) / 2))
    phat = successes / trials
    denom = 1 + z**2 / trials
    centre = phat + z**2 / (2 * trials)
    margin = z * math.sqrt((phat * (1 - phat) + z**2 / (4 * trials)) / trials)
    lower = (centre - margin) / denom
    upper = (centre + margin) / denom
    # the interval always contains phat; clamp rounding at the ends
    return max(0.0, min(float(lower), phat)), min(1.0, max(float(upper), phat))


def binomial_stderr(successes: int, trials: int) -> float:
    if trials <= 0:
        return math.inf
    phat = successes / trials
    return math.sqrt(phat * (1 - phat) / trials)


def mean_stderr(samples: np.ndarray) -> Tuple[float, float]:
    """Sample mean and its standard error."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        return math.nan, math.inf
    if samples.size == 1:
        return float(samples[0]), math.inf
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size))


def intervals_overlap(m1: float, s1: float, m2: float, s2: float, k: float = 3.0) -> bool:
    return (m1 - k * s1) <= (m2 + k * s2) and (m2 - k * s2) <= (m1 + k * s1)
