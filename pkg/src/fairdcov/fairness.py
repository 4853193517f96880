"""Subgroup fairness metrics and independence tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import dcov
from .errors import DegenerateVariance, EmptyInput, SampleTooSmall, ShapeMismatch

SMOOTHING = 1e-10

# Seed-sequence spawn offsets per attribute stream in the mutual test.
_MUTUAL_STREAM_OFFSET = 1000


@dataclass(frozen=True)
class BinningSpec:
    """Quantile cut points for continuous attributes and histogram granularity.

    ``cuts`` maps an attribute name to cut points frozen on the training split.
    """

    quantiles: tuple[float, ...] = (1 / 3, 2 / 3)
    hist_bins: int = 20
    cuts: dict[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.hist_bins < 2:
            raise ValueError("hist_bins must be at least 2")
        q = np.asarray(self.quantiles)
        if q.size and (np.any(np.diff(q) <= 0) or q[0] <= 0 or q[-1] >= 1):
            raise ValueError("quantiles must be strictly increasing inside (0, 1)")


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    replicates: int = 0
    degenerate: bool = False


def fit_cuts(values, quantiles=(1 / 3, 2 / 3)) -> np.ndarray:
    """Cut points from linear-interpolation quantiles of ``values``.

    Duplicate cuts collapse, and cuts at or below the sample minimum are
    dropped so the lowest bin is never empty on the fitting data.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyInput("cannot fit cut points on an empty sample")
    q = np.asarray(quantiles, dtype=np.float64)
    if np.any(np.diff(q) <= 0) or np.any(q <= 0) or np.any(q >= 1):
        raise ValueError("quantiles must be strictly increasing inside (0, 1)")
    cuts = np.unique(np.quantile(values, q))
    return cuts[cuts > values.min()]


def apply_cuts(values, cuts) -> np.ndarray:
    """Bin label = number of cut points ``<=`` value (ties go to the upper bin)."""
    values = np.asarray(values, dtype=np.float64)
    return np.searchsorted(np.asarray(cuts, dtype=np.float64), values, side="right")


def bin_continuous(values, quantiles=(1 / 3, 2 / 3)) -> np.ndarray:
    """Fit cut points on ``values`` and label them in one go."""
    values = np.asarray(values, dtype=np.float64)
    return apply_cuts(values, fit_cuts(values, quantiles))


def subgroup_index(keys) -> tuple[np.ndarray, np.ndarray]:
    """Map rows of subgroup keys to dense integer ids.

    Returns ``(ids, unique_keys)``; ``keys`` may be 1-D or ``(n, d)``.
    """
    keys = np.asarray(keys)
    if keys.ndim == 1:
        keys = keys[:, None]
    uniq, ids = np.unique(keys, axis=0, return_inverse=True)
    return ids.reshape(-1), uniq


def uf_metric(yhat, keys) -> float:
    """Share of prediction variance explained by subgroup means."""
    y = np.asarray(yhat, dtype=np.float64).reshape(-1)
    ids, _ = subgroup_index(keys)
    if y.size < 2:
        raise SampleTooSmall("UF needs at least two predictions")
    if ids.size != y.size:
        raise ShapeMismatch("one key per prediction required")
    total = np.var(y)
    if total <= 1e-12:
        raise DegenerateVariance(f"prediction variance {total:.3g} is too small")
    counts = np.bincount(ids)
    means = np.bincount(ids, weights=y) / counts
    between = np.sum(counts * (means - y.mean()) ** 2) / y.size
    return float(between / total)


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats for two histograms on the same bins.

    Bins where ``p`` is empty contribute nothing. Empty ``q`` bins under
    positive ``p`` mass are smoothed with ``SMOOTHING`` and renormalised.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeMismatch("histograms must share bins")
    p = p / p.sum()
    q = q / q.sum()
    if np.any((q == 0) & (p > 0)):
        q = np.where(q == 0, SMOOTHING, q)
        q = q / q.sum()
    mask = p > 0
    return float(max(np.sum(p[mask] * np.log(p[mask] / q[mask])), 0.0))


def prediction_histogram_edges(yhat, bins=20) -> np.ndarray | None:
    """Equal-width edges over the pooled range; ``None`` when the range is empty."""
    y = np.asarray(yhat, dtype=np.float64).reshape(-1)
    lo, hi = float(y.min()), float(y.max())
    if hi <= lo:
        return None
    return np.linspace(lo, hi, bins + 1)


def js_divergence(yhat, keys, spec: BinningSpec | None = None) -> float:
    """Proportion-weighted KL of each subgroup's prediction histogram from the pooled one."""
    spec = spec or BinningSpec()
    y = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise EmptyInput("no predictions")
    ids, _ = subgroup_index(keys)
    if ids.size != y.size:
        raise ShapeMismatch("one key per prediction required")
    edges = prediction_histogram_edges(y, spec.hist_bins)
    if edges is None:
        return 0.0
    pooled, _ = np.histogram(y, bins=edges)
    total = 0.0
    for g in range(ids.max() + 1):
        member = ids == g
        n_g = int(member.sum())
        if n_g == 0:
            continue
        cond, _ = np.histogram(y[member], bins=edges)
        total += n_g / y.size * kl_divergence(cond, pooled)
    return total


def _attr_matrix(attrs) -> np.ndarray:
    if isinstance(attrs, (list, tuple)):
        return dcov.concat_blocks(attrs)
    return dcov.as_block(attrs)


def chi2_independence_test(yhat, attrs) -> TestResult:
    """Distance-correlation chi-square test against the concatenated attributes."""
    x = dcov.as_block(yhat)
    s = _attr_matrix(attrs)
    if x.shape[0] < 4:
        raise SampleTooSmall("need n >= 4")
    r = dcov.dcorr2(x, s)
    degenerate = r == 0.0 and (dcov._is_constant(x) or dcov._is_constant(s))
    statistic = x.shape[0] * r
    return TestResult(statistic, chi2_p_value(statistic), "chi2", degenerate=degenerate)


def chi2_p_value(statistic: float) -> float:
    return float(stats.chi2.sf(statistic, df=1)) if statistic > 0 else 1.0


def permutation_p_value(t0: float, permuted: Sequence[float]) -> float:
    permuted = np.asarray(permuted, dtype=np.float64)
    return float((1 + np.sum(permuted > t0)) / (1 + permuted.size))


def permutation_test_joint(yhat, attrs, replicates=199, seed=0) -> TestResult:
    """Permute attribute rows as one unit and compare concatenated dCov."""
    x = dcov.as_block(yhat)
    s = _attr_matrix(attrs)
    n = x.shape[0]
    if n < 4:
        raise SampleTooSmall("need n >= 4")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    ux, us = dcov.ucentred(x), dcov.ucentred(s)
    scale = n * (n - 3)
    t0 = float(np.sum(ux * us)) / scale
    rng = np.random.default_rng(seed)
    permuted = np.empty(replicates)
    for r in range(replicates):
        perm = rng.permutation(n)
        # U-centring commutes with a simultaneous row/column permutation.
        permuted[r] = float(np.sum(ux * us[np.ix_(perm, perm)])) / scale
    return TestResult(t0, permutation_p_value(t0, permuted), "perm_joint", replicates)


def _jdcov_from_centred(us: Sequence[np.ndarray], n: int) -> float:
    prod = 1.0 - us[0]
    for u in us[1:]:
        prod = prod * (1.0 - u)
    return float(np.sum(prod)) / (n * (n - 3)) - n / (n - 3)


def permutation_test_mutual(yhat, attrs, replicates=199, seed=0) -> TestResult:
    """Permute each attribute block on its own stream and compare joint dCov."""
    blocks = [dcov.as_block(yhat), *[dcov.as_block(a) for a in attrs]]
    n = blocks[0].shape[0]
    if n < 4:
        raise SampleTooSmall("need n >= 4")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    us = [dcov.ucentred(b) for b in blocks]
    t0 = _jdcov_from_centred(us, n)
    rngs = [np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(_MUTUAL_STREAM_OFFSET + k,)))
            for k in range(len(attrs))]
    permuted = np.empty(replicates)
    for r in range(replicates):
        shuffled = [us[0]]
        for u, rng in zip(us[1:], rngs):
            perm = rng.permutation(n)
            shuffled.append(u[np.ix_(perm, perm)])
        permuted[r] = _jdcov_from_centred(shuffled, n)
    return TestResult(t0, permutation_p_value(t0, permuted), "perm_mutual", replicates)
