"""Statistical primitives: independent t-test, Benjamini-Hochberg, point-biserial correlation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateGroup, DomainError

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAX_ITER = 10_000


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p: float


def _beta_cf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise DomainError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), evaluated by continued fraction on whichever side converges fast."""
    if not (a > 0 and b > 0) or not math.isfinite(a) or not math.isfinite(b):
        raise DomainError(f"shape parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    p = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
    return min(1.0, max(0.0, p))


def t_test_independent(x: Sequence[float], y: Sequence[float], variant: str = "student") -> TTestResult:
    """Two-sided independent-samples t-test; ``variant`` is "student" (pooled) or "welch"."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n1, n2 = x.size, y.size
    if n1 < 2 or n2 < 2:
        raise DegenerateGroup(f"each sample needs at least 2 values, got {n1} and {n2}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("t-test inputs must be finite")
    variant = variant.lower()
    if variant not in ("student", "welch"):
        raise ValueError(f"unknown t-test variant {variant!r}")

    diff = float(x.mean() - y.mean())
    v1, v2 = float(x.var(ddof=1)), float(y.var(ddof=1))
    if variant == "student":
        df = float(n1 + n2 - 2)
        pooled = ((n1 - 1) * v1 + (n2 - 1) * v2) / df
        se2 = pooled * (1.0 / n1 + 1.0 / n2)
    else:
        a, b = v1 / n1, v2 / n2
        se2 = a + b
        df = se2 * se2 / (a * a / (n1 - 1) + b * b / (n2 - 1)) if se2 > 0 else float(n1 + n2 - 2)

    if se2 == 0.0:
        # both samples constant
        if diff == 0.0:
            return TTestResult(0.0, df, 1.0)
        return TTestResult(math.copysign(math.inf, diff), df, 0.0)
    t = float(diff / math.sqrt(se2))
    return TTestResult(t, float(df), t_two_sided_p(t, df))


def bh_adjust(p: Sequence[float]) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, returned in input order."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise DomainError("p-values must be a 1-d vector")
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise DomainError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="mergesort")
    ranked = p[order] * m / np.arange(1, m + 1)
    ranked = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(ranked, 1.0)
    return out


@dataclass(frozen=True)
class Correlation:
    r: float
    p: float


def point_biserial(x: Sequence[float], y: Sequence[int]) -> Correlation:
    """Point-biserial correlation of continuous ``x`` with binary ``y`` plus its two-sided p."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n = x.size
    if n != y.size:
        raise DomainError(f"length mismatch: {n} values, {y.size} labels")
    if n < 3:
        raise DegenerateGroup(f"need at least 3 observations, got {n}")
    ones = y == 1
    if not np.all(ones | (y == 0)):
        raise DomainError("labels must be 0/1")
    n1 = int(ones.sum())
    n0 = n - n1
    if n1 == 0 or n0 == 0:
        raise DegenerateGroup("both label values must be present")
    s = x.std()
    if s == 0.0:
        return Correlation(0.0, 1.0)
    r = (x[ones].mean() - x[~ones].mean()) / s * math.sqrt(n1 * n0 / (n * n))
    r = float(min(1.0, max(-1.0, r)))
    if abs(r) == 1.0:
        return Correlation(r, 0.0)
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return Correlation(r, t_two_sided_p(t, n - 2))
