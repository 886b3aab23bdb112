"""Non-parametric survival estimators and the two-sample log-rank test."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from statistics import NormalDist

import numba
import numpy as np


class SurvivalError(ValueError):
    pass


@dataclass(frozen=True)
class KaplanMeierCurve:
    """Product-limit estimate at each distinct event time.

    The curve is right-continuous: between two event times the survival
    equals its value at the earlier one, and it is 1 before the first.
    """

    event_times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    ci_lower: np.ndarray | None = None
    ci_upper: np.ndarray | None = None
    confidence_level: float | None = None

    def __call__(self, t):
        """Evaluate the step function at time(s) ``t``."""
        pos = np.searchsorted(self.event_times, t, side="right")
        padded = np.concatenate(([1.0], self.survival))
        return padded[pos]

    def to_csv(self) -> str:
        lines = ["time,at_risk,events,survival,ci_lower,ci_upper"]
        lo = self.ci_lower if self.ci_lower is not None else self.survival
        hi = self.ci_upper if self.ci_upper is not None else self.survival
        for row in zip(self.event_times, self.at_risk, self.events, self.survival, lo, hi):
            t, n, d, s, a, b = row
            lines.append(f"{int(t)},{int(n)},{int(d)},{s:.10g},{a:.10g},{b:.10g}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CumulativeHazard:
    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        pos = np.searchsorted(self.times, t, side="right")
        return np.concatenate(([0.0], self.values))[pos]


@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    p_value: float
    observed_a: float
    expected_a: float
    variance: float

    @property
    def degenerate(self) -> bool:
        return self.variance <= 0.0


def _check(events, durations) -> tuple[np.ndarray, np.ndarray]:
    events = np.asarray(events, dtype=np.int64).ravel()
    durations = np.asarray(durations).ravel()
    if len(events) == 0:
        raise SurvivalError("at least one sample is required")
    if len(events) != len(durations):
        raise SurvivalError("events and durations differ in length")
    if np.any(durations < 0):
        raise SurvivalError("durations must be non-negative")
    if not np.all((events == 0) | (events == 1)):
        raise SurvivalError("events must be 0 or 1")
    return events, durations


def _counts_at(times, events, durations) -> tuple[np.ndarray, np.ndarray]:
    at_risk = len(durations) - np.searchsorted(np.sort(durations), times, side="left")
    hit = np.sort(durations[events == 1])
    deaths = np.searchsorted(hit, times, side="right") - np.searchsorted(hit, times, side="left")
    return at_risk.astype(np.int64), deaths.astype(np.int64)


def risk_table(events, durations) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct event times with the number at risk and the number of events.

    A sample censored at an event time is still at risk at that time.
    """
    events, durations = _check(events, durations)
    times = np.unique(durations[events == 1])
    at_risk, deaths = _counts_at(times, events, durations)
    return times, at_risk, deaths


def km_fit(events, durations) -> KaplanMeierCurve:
    times, at_risk, n_events = risk_table(events, durations)
    return KaplanMeierCurve(times, _product_limit(at_risk, n_events), at_risk, n_events)


def _product_limit(at_risk, n_events) -> np.ndarray:
    # Between censorings the factors (n - d)/n telescope, so each run of
    # event times costs one division; uncensored data gives (N - deaths)/N
    # correctly rounded.
    survival = np.empty(len(at_risk))
    before = 1.0
    start = 0
    for j in range(len(at_risk)):
        if j > 0 and at_risk[j] != at_risk[j - 1] - n_events[j - 1]:
            before = survival[j - 1]
            start = j
        survival[j] = before * ((at_risk[j] - n_events[j]) / at_risk[start])
    return survival


def greenwood_ci(
    curve: KaplanMeierCurve, level: float = 0.95, transform: str = "log-log"
) -> KaplanMeierCurve:
    """Attach pointwise confidence bounds from Greenwood's variance.

    ``transform="log-log"`` builds the interval for log(-log S) and maps it
    back, which keeps it inside [0, 1]; ``"plain"`` is the untransformed
    S +/- z*se clipped to [0, 1]. Where S is 0 or 1 the bounds equal S.
    """
    if not 0.0 < level < 1.0:
        raise SurvivalError(f"confidence level must lie in (0, 1), got {level}")
    if transform not in ("log-log", "plain"):
        raise SurvivalError(f"unknown transform {transform!r}")
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    s = curve.survival
    n, d = curve.at_risk.astype(float), curve.events.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        gw = np.cumsum(np.where(n > d, d / (n * (n - d)), np.inf))
        if transform == "log-log":
            log_s = np.log(s)
            se = np.sqrt(gw) / np.abs(log_s)
            lower = s ** np.exp(z * se)
            upper = s ** np.exp(-z * se)
        else:
            se = s * np.sqrt(gw)
            lower = s - z * se
            upper = s + z * se
    flat = (s <= 0.0) | (s >= 1.0) | ~np.isfinite(lower) | ~np.isfinite(upper)
    lower = np.clip(np.where(flat, s, lower), 0.0, 1.0)
    upper = np.clip(np.where(flat, s, upper), 0.0, 1.0)
    return replace(curve, ci_lower=lower, ci_upper=upper, confidence_level=level)


def nelson_aalen(events, durations) -> CumulativeHazard:
    times, at_risk, n_events = risk_table(events, durations)
    return CumulativeHazard(times, np.cumsum(n_events / at_risk))


@numba.njit(cache=True, nogil=True)
def logrank_terms(n, d, n_a, d_a):
    """Observed, expected and variance of group-A events over a risk table.

    ``n``/``d`` are pooled at-risk and event counts per time, ``n_a``/``d_a``
    the same for group A. Times with ``n <= 1`` add nothing to the variance.
    """
    observed = 0.0
    expected = 0.0
    variance = 0.0
    for j in range(n.shape[0]):
        nj = n[j]
        dj = d[j]
        if dj == 0 or nj == 0:
            continue
        observed += d_a[j]
        expected += dj * (n_a[j] / nj)
        if nj > 1:
            # n_a * n_b first so the term is exactly symmetric in the groups
            variance += dj * (n_a[j] * (nj - n_a[j])) * (nj - dj) / (nj * nj * (nj - 1.0))
    return observed, expected, variance


def log_rank(events_a, durations_a, events_b, durations_b) -> LogRankResult:
    """Two-sample log-rank test (chi-square with one degree of freedom)."""
    events_a, durations_a = _check(events_a, durations_a)
    events_b, durations_b = _check(events_b, durations_b)
    events = np.concatenate([events_a, events_b])
    durations = np.concatenate([durations_a, durations_b])
    times = np.unique(durations[events == 1])

    n_a, d_a = (c.astype(np.float64) for c in _counts_at(times, events_a, durations_a))
    n_b, d_b = (c.astype(np.float64) for c in _counts_at(times, events_b, durations_b))
    observed, expected, variance = logrank_terms(n_a + n_b, d_a + d_b, n_a, d_a)
    if variance <= 0.0:
        return LogRankResult(0.0, 1.0, observed, expected, variance)
    # antisymmetric per-time terms keep the statistic bit-identical under a label swap
    score = np.sum((d_a * n_b - d_b * n_a) / (n_a + n_b))
    stat = score**2 / variance
    return LogRankResult(stat, chi2_sf(stat, 1), observed, expected, variance)


def _gamma_series(a: float, x: float) -> float:
    # lower regularized P(a, x), valid for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a: float, x: float) -> float:
    # upper regularized Q(a, x) by modified Lentz, valid for x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gammaincc(a: float, x: float) -> float:
    """Upper regularized incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cont_frac(a, x)


def chi2_sf(x: float, df: int) -> float:
    """Upper tail probability of the chi-square distribution."""
    if x <= 0:
        return 1.0
    return min(1.0, max(0.0, gammaincc(df / 2.0, x / 2.0)))
