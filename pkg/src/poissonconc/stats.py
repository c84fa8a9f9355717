"""Small statistical helpers for Monte Carlo certification."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from .errors import InvalidArgumentError


def clopper_pearson(k: int, n: int, confidence: float = 0.99):
    """Exact two-sided binomial interval ``(lower, upper)`` for ``k`` successes in ``n``."""
    k = int(k)
    n = int(n)
    if n <= 0 or k < 0 or k > n:
        raise InvalidArgumentError("need 0 <= k <= n and n > 0")
    if not 0 < confidence < 1:
        raise InvalidArgumentError("confidence must lie in (0, 1)")
    a = 1.0 - confidence
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def clopper_pearson_upper(k: int, n: int, confidence: float = 0.99) -> float:
    return clopper_pearson(k, n, confidence)[1]


def mean_and_se(values) -> tuple:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise InvalidArgumentError("need at least two samples")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def variance_and_se(values) -> tuple:
    """Unbiased sample variance with a large-sample standard error.

    The error uses the fourth central moment, ``Var(s^2) ~ (m4 - s^4) / n``.
    """
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 4:
        raise InvalidArgumentError("need at least four samples")
    s2 = float(v.var(ddof=1))
    m4 = float(np.mean((v - v.mean()) ** 4))
    return s2, math.sqrt(max(m4 - s2 * s2, 0.0) / n)
