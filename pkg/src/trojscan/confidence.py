"""Prediction-stability statistics.

Reduces the multiset of noisy predictions to (p1, p2, delta), attaches
exact Clopper-Pearson binomial intervals, and maps delta through the
sigmoid confidence bound that the detector thresholds.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterable


@dataclass(frozen=True)
class PredictionProfile:
    """Tally of m noisy predictions: top-two frequencies and their gap."""

    m: int
    counts: dict[int, int]
    p1: float
    p2: float
    delta: float


@dataclass(frozen=True)
class BoundParams:
    """Sigmoid steepness (alpha) and offset (beta) for the confidence bound."""

    alpha: float = 10.0
    beta: float = 0.05

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError("alpha must be finite and positive")
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValueError("beta must be finite and non-negative")

    def to_json(self) -> dict[str, Any]:
        return {"alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "BoundParams":
        return cls(alpha=obj["alpha"], beta=obj["beta"])


@dataclass(frozen=True)
class BinomialInterval:
    low: float
    high: float
    confidence: float


def profile(labels: Iterable[int], m: int) -> PredictionProfile:
    """Tally predicted labels; p1/p2 are the top two frequencies.

    A single observed class gives p2 = 0; a tie between the top two
    counts gives p1 = p2 (hence delta = 0, the benign-leaning outcome).
    """
    labels = [int(v) for v in labels]
    if m < 1:
        raise ValueError("m must be at least 1")
    if len(labels) != m:
        raise ValueError(f"expected {m} labels, got {len(labels)}")
    counts = Counter(labels)
    ordered = sorted(counts.values(), reverse=True)
    c1 = ordered[0]
    c2 = ordered[1] if len(ordered) > 1 else 0
    p1 = c1 / m
    p2 = c2 / m
    return PredictionProfile(m=m, counts=dict(counts), p1=p1, p2=p2, delta=p1 - p2)


# --- exact binomial interval ------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    # continued fraction for the regularized incomplete beta (modified Lentz)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m2 in range(1, 400):
        two_m = 2 * m2
        aa = m2 * (b - m2) * x / ((qam + two_m) * (a + two_m))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m2) * (qab + m2) * x / ((a + two_m) * (qap + two_m))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def beta_quantile(q: float, a: float, b: float) -> float:
    """Invert the regularized incomplete beta by bisection (width < 1e-12)."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("quantile level must lie in [0, 1]")
    if q == 0.0:
        return 0.0
    if q == 1.0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if regularized_incomplete_beta(a, b, mid) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def clopper_pearson(successes: int, m: int, confidence: float = 0.95) -> BinomialInterval:
    """Exact binomial interval via Beta quantiles."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if not 0 <= successes <= m:
        raise ValueError("successes must lie in [0, m]")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    half_alpha = (1.0 - confidence) / 2.0
    low = 0.0 if successes == 0 else beta_quantile(half_alpha, successes, m - successes + 1)
    high = 1.0 if successes == m else beta_quantile(1.0 - half_alpha, successes + 1, m - successes)
    return BinomialInterval(low=low, high=high, confidence=confidence)


def profile_intervals(prof: PredictionProfile, confidence: float = 0.95) -> tuple[BinomialInterval, BinomialInterval]:
    """Diagnostic intervals for p1 and p2 at finite m."""
    c1 = round(prof.p1 * prof.m)
    c2 = round(prof.p2 * prof.m)
    return (
        clopper_pearson(c1, prof.m, confidence),
        clopper_pearson(c2, prof.m, confidence),
    )


# --- nonlinear confidence bound ---------------------------------------------


def confidence_bound(prof: PredictionProfile, sigma: float, params: BoundParams) -> float:
    """L = sigmoid(alpha * (delta * sigma - beta)); larger means more Trojan-like."""
    if not 0.0 <= sigma <= 1.0:
        raise ValueError("sigma must lie in [0, 1]")
    d = params.alpha * (prof.delta * sigma - params.beta)
    if d >= 0.0:
        return 1.0 / (1.0 + math.exp(-d))
    e = math.exp(d)
    return e / (1.0 + e)
