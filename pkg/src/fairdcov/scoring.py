"""Accuracy scores and the paired Wilcoxon degradation test."""

from __future__ import annotations

import itertools
import warnings

import numpy as np
from scipy import stats

from .errors import CapTooSmall, EmptyInput, InvalidForecast, InvalidRate, ShapeMismatch
from .fairness import TestResult

TAIL_MASS = 1e-6


def rps(forecast, observed: int) -> float:
    """Ranked probability score of one discrete forecast over ordered categories."""
    p = np.asarray(forecast, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise InvalidForecast("forecast needs at least two categories")
    if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidForecast("forecast probabilities must lie in [0, 1] and sum to 1")
    if not 0 <= observed < p.size:
        raise InvalidForecast(f"observed category {observed} outside 0..{p.size - 1}")
    cum = np.cumsum(p)
    obs = (np.arange(p.size) >= observed).astype(np.float64)
    return float(np.sum((cum - obs) ** 2))


def rps_binary(prob, labels) -> np.ndarray:
    """Per-observation RPS of binary forecasts; equals the squared error ``(p - y)**2``."""
    p = np.asarray(prob, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeMismatch("probabilities and labels differ in shape")
    return (p - y) ** 2


def poisson_cap(mean, observed, cap: int | None = None) -> int:
    """Smallest truncation point (at least ``cap``) with tail mass below ``TAIL_MASS``."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    observed = np.atleast_1d(np.asarray(observed))
    k = int(observed.max()) + 30 if cap is None else int(cap)
    top = float(mean.max())
    while stats.poisson.sf(k, top) >= TAIL_MASS:
        k *= 2
    return k


def rps_poisson(rate, exposure, observed, cap: int | None = None) -> np.ndarray | float:
    """RPS of truncated, renormalised Poisson forecasts with mean ``exposure * rate``.

    Vectorised over observations; a scalar call returns a float.
    """
    scalar = np.ndim(rate) == 0 and np.ndim(observed) == 0
    rate = np.atleast_1d(np.asarray(rate, dtype=np.float64))
    exposure = np.broadcast_to(np.asarray(exposure, dtype=np.float64), rate.shape)
    observed = np.atleast_1d(np.asarray(observed)).astype(np.int64)
    if np.any(rate < 0) or np.any(exposure <= 0):
        raise InvalidRate("rates must be >= 0 and exposures > 0")
    mean = rate * exposure
    if cap is not None and observed.max() > cap:
        raise CapTooSmall(f"observed count {observed.max()} exceeds cap {cap}")
    k = poisson_cap(mean, observed, cap)
    grid = np.arange(k + 1)
    cdf = stats.poisson.cdf(grid[None, :], mean[:, None])
    cdf = cdf / cdf[:, -1:]
    obs = (grid[None, :] >= observed[:, None]).astype(np.float64)
    out = np.sum((cdf - obs) ** 2, axis=1)
    return float(out[0]) if scalar else out


def accuracy(probs, labels, threshold=0.5) -> float:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    if p.size == 0:
        raise EmptyInput("no predictions")
    if p.shape != y.shape:
        raise ShapeMismatch("probabilities and labels differ in shape")
    return float(np.mean((p >= threshold) == (y == 1)))


def poisson_deviance(y, mu) -> float:
    """Mean unit Poisson deviance, with ``y log(y / mu) = 0`` at ``y = 0``."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if y.shape != mu.shape:
        raise ShapeMismatch("counts and means differ in shape")
    if np.any(mu <= 0):
        raise InvalidRate("predicted means must be positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(np.mean(2.0 * (term - (y - mu))))


def signed_ranks(baseline, regularised) -> tuple[np.ndarray, np.ndarray]:
    """Nonzero differences ``regularised - baseline`` and their average ranks."""
    a = np.asarray(baseline, dtype=np.float64)
    b = np.asarray(regularised, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch("paired score sequences differ in length")
    d = b - a
    d = d[d != 0]
    return d, stats.rankdata(np.abs(d))


def wilcoxon_one_sided(baseline, regularised) -> TestResult:
    """One-sided signed-rank test that ``regularised`` scores exceed ``baseline``.

    Normal approximation with a ``-0.5`` continuity correction. With no
    nonzero differences the p-value is 1 and ``degenerate`` is set.
    """
    d, ranks = signed_ranks(baseline, regularised)
    n = d.size
    if n == 0:
        warnings.warn("all paired differences are zero", RuntimeWarning, stacklevel=2)
        return TestResult(0.0, 1.0, "wilcoxon", degenerate=True)
    w_plus = float(ranks[d > 0].sum())
    z = (w_plus - n * (n + 1) / 4 - 0.5) / np.sqrt(n * (n + 1) * (2 * n + 1) / 24)
    return TestResult(w_plus, float(stats.norm.sf(z)), "wilcoxon")


def wilcoxon_exact_p(baseline, regularised) -> float:
    """Exact upper-tail p-value of ``W+`` by enumerating all sign patterns (small n)."""
    d, ranks = signed_ranks(baseline, regularised)
    n = d.size
    if n == 0:
        return 1.0
    if n > 20:
        raise ValueError("exact enumeration limited to 20 nonzero differences")
    w_plus = ranks[d > 0].sum()
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        if np.dot(signs, ranks) >= w_plus - 1e-12:
            hits += 1
    return hits / 2 ** n
