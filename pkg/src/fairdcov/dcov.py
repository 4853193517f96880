"""Distance covariance estimators.

Every estimator here is built on U-centred pairwise distance matrices.
For a sample ``x`` of size ``n`` the U-centred matrix is

.. math::

    \\tilde{U}_x(i, j) = |x_i - x_j| - \\frac{r_i + r_j}{n - 2}
        + \\frac{s}{(n - 1)(n - 2)}, \\quad i \\neq j,

with ``r_i`` the i-th row sum and ``s`` the grand sum of the distance
matrix; the diagonal is zero. The unbiased squared distance covariance is
the Frobenius product of two such matrices scaled by ``1 / (n (n - 3))``.

Large samples are processed in row chunks so that no ``n x n`` matrix is
held in memory; small samples go through the same code with one chunk.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    ArityError,
    InvalidSample,
    InvalidWeight,
    SampleTooSmall,
    ShapeMismatch,
)

# Rows per chunk once n exceeds this; the n x n path is used below it.
CHUNK_THRESHOLD = 3000
CHUNK_ROWS = 512


@dataclass(frozen=True)
class CCdCovDecomposition:
    marginal_terms: tuple[float, ...]
    eta: float
    total: float


@dataclass(frozen=True)
class JdCovDecomposition:
    pred_attr_terms: tuple[float, ...]
    attr_attr_terms: tuple[float, ...]
    zeta: float
    total: float


def as_block(x) -> np.ndarray:
    """Coerce ``x`` to a finite float64 ``(n, p)`` array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    elif arr.ndim != 2:
        raise InvalidSample(f"expected a 1-D or 2-D sample, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InvalidSample("sample contains non-finite entries")
    return arr


def _is_constant(block: np.ndarray) -> bool:
    return bool(np.all(block == block[0]))


def _check_pair(x, y, minimum=4):
    x, y = as_block(x), as_block(y)
    if x.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"sample sizes differ: {x.shape[0]} != {y.shape[0]}")
    if x.shape[0] < minimum:
        raise SampleTooSmall(f"need n >= {minimum}, got n={x.shape[0]}")
    return x, y


def _check_blocks(blocks, minimum_blocks=2):
    blocks = [as_block(b) for b in blocks]
    if len(blocks) < minimum_blocks:
        raise ArityError(f"need at least {minimum_blocks} blocks, got {len(blocks)}")
    n = blocks[0].shape[0]
    for b in blocks[1:]:
        if b.shape[0] != n:
            raise ShapeMismatch("all blocks must share the same sample size")
    if n < 4:
        raise SampleTooSmall(f"need n >= 4, got n={n}")
    return blocks


def pairwise_distance_matrix(block) -> np.ndarray:
    """Euclidean distances between all pairs of rows."""
    x = as_block(block)
    if x.shape[0] == 0:
        raise InvalidSample("empty sample")
    if x.shape[1] == 1:
        return np.abs(x - x.T)
    return cdist(x, x)


def u_centre(distances) -> np.ndarray:
    """U-centre a symmetric distance matrix.

    Row sums are used for both the row and column corrections, which keeps
    the output exactly symmetric for exactly symmetric input.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ShapeMismatch("distance matrix must be square")
    n = d.shape[0]
    if n < 4:
        raise SampleTooSmall(f"U-centring needs n >= 4, got n={n}")
    r = d.sum(axis=1)
    s = r.sum()
    u = d - r[:, None] / (n - 2) - r[None, :] / (n - 2) + s / ((n - 1) * (n - 2))
    np.fill_diagonal(u, 0.0)
    return u


def ucentred(block) -> np.ndarray:
    """U-centred distance matrix of a sample (zero matrix for constant samples)."""
    x = as_block(block)
    if x.shape[0] >= 4 and _is_constant(x):
        return np.zeros((x.shape[0], x.shape[0]))
    return u_centre(pairwise_distance_matrix(x))


def _distance_rows(x: np.ndarray, rows: slice) -> np.ndarray:
    if x.shape[1] == 1:
        return np.abs(x[rows] - x.T)
    return cdist(x[rows], x)


def _row_sums(x: np.ndarray, chunk: int) -> np.ndarray:
    n = x.shape[0]
    out = np.empty(n)
    for start in range(0, n, chunk):
        rows = slice(start, min(start + chunk, n))
        out[rows] = _distance_rows(x, rows).sum(axis=1)
    return out


def iter_ucentred_rows(blocks: Sequence[np.ndarray], chunk: int | None = None
                       ) -> Iterator[tuple[slice, list[np.ndarray]]]:
    """Yield ``(rows, [U_block[rows, :] for each block])`` over row chunks.

    With ``chunk=None`` the whole matrix is a single chunk when ``n`` is at
    most ``CHUNK_THRESHOLD`` and ``CHUNK_ROWS`` rows otherwise.
    """
    n = blocks[0].shape[0]
    if chunk is None:
        chunk = n if n <= CHUNK_THRESHOLD else CHUNK_ROWS
    constant = [_is_constant(b) for b in blocks]
    sums = [None if c else _row_sums(b, chunk) for b, c in zip(blocks, constant)]
    for start in range(0, n, chunk):
        rows = slice(start, min(start + chunk, n))
        idx = np.arange(rows.start, rows.stop)
        out = []
        for b, c, r in zip(blocks, constant, sums):
            if c:
                out.append(np.zeros((idx.size, n)))
                continue
            s = r.sum()
            u = (_distance_rows(b, rows) - r[rows, None] / (n - 2)
                 - r[None, :] / (n - 2) + s / ((n - 1) * (n - 2)))
            u[np.arange(idx.size), idx] = 0.0
            out.append(u)
        yield rows, out


def dcov2_unbiased(x, y, *, chunk: int | None = None) -> float:
    """Unbiased estimator of squared distance covariance.

    The value can be slightly negative; it is never clamped.
    """
    x, y = _check_pair(x, y)
    if _is_constant(x) or _is_constant(y):
        return 0.0
    n = x.shape[0]
    total = 0.0
    for _, (ux, uy) in iter_ucentred_rows([x, y], chunk):
        total += float(np.sum(ux * uy))
    return total / (n * (n - 3))


def dcov2_expanded(x, y) -> float:
    """Same estimator written in raw distance sums (no centring step).

    Kept as an independent cross-check of :func:`dcov2_unbiased`.
    """
    x, y = _check_pair(x, y)
    return _expanded_form(pairwise_distance_matrix(x), pairwise_distance_matrix(y))


def dcorr2(x, y) -> float:
    """Bias-corrected squared distance correlation; 0 for a degenerate denominator."""
    x, y = _check_pair(x, y)
    n = x.shape[0]
    xy = xx = yy = 0.0
    for _, (ux, uy) in iter_ucentred_rows([x, y]):
        xy += float(np.sum(ux * uy))
        xx += float(np.sum(ux * ux))
        yy += float(np.sum(uy * uy))
    scale = n * (n - 3)
    denom = (xx / scale) * (yy / scale)
    if not np.isfinite(denom) or denom <= 0.0:
        return 0.0
    return (xy / scale) / np.sqrt(denom)


def concat_blocks(attrs) -> np.ndarray:
    """Column-concatenate attribute samples of equal length."""
    blocks = [as_block(a) for a in attrs]
    if not blocks:
        raise ArityError("need at least one attribute block")
    n = blocks[0].shape[0]
    if any(b.shape[0] != n for b in blocks):
        raise ShapeMismatch("attribute blocks must share the same sample size")
    return np.hstack(blocks)


def ccdcov(yhat, attrs) -> float:
    """Distance covariance between predictions and the column-concatenated attributes."""
    return dcov2_unbiased(yhat, concat_blocks(attrs))


def _expanded_form(a: np.ndarray, b: np.ndarray) -> float:
    n = a.shape[0]
    cross = np.sum(a * b)
    grand = a.sum() * b.sum() / ((n - 1) * (n - 2))
    rows = 2.0 / (n - 2) * np.dot(a.sum(axis=1), b.sum(axis=1))
    return float((cross + grand - rows) / (n * (n - 3)))


def ccdcov_decompose(yhat, attrs) -> CCdCovDecomposition:
    """Split the concatenated estimator into per-attribute terms plus the joint term.

    The joint term is the raw-sum bilinear form applied to the prediction
    distances and ``xi = |s_k - s_l| - sum_i |s_{k,i} - s_{l,i}|``.
    """
    yhat = as_block(yhat)
    blocks = [as_block(s) for s in attrs]
    _check_blocks([yhat, *blocks])
    marginal = tuple(dcov2_unbiased(yhat, s) for s in blocks)
    a = pairwise_distance_matrix(yhat)
    xi = pairwise_distance_matrix(np.hstack(blocks))
    for s in blocks:
        xi -= pairwise_distance_matrix(s)
    eta = _expanded_form(a, xi)
    return CCdCovDecomposition(marginal, eta, ccdcov(yhat, blocks))


def separate_sum(yhat, attrs, weights) -> float:
    """Weighted sum of per-attribute distance covariances."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(attrs),):
        raise ShapeMismatch("need one weight per attribute block")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise InvalidWeight("weights must be finite and non-negative")
    return float(sum(w * dcov2_unbiased(yhat, s) for w, s in zip(weights, attrs)))


def jdcov_decompose(blocks) -> JdCovDecomposition:
    """Pairwise terms and the higher-order remainder of the joint estimator.

    The first block is the prediction. ``zeta`` collects every product of
    three or more U-centred matrices that appears when expanding
    ``prod_i (1 - U_i)``. The centred kernels enter with negated distances,
    so a product over ``k`` blocks carries the sign ``(-1)**k``; pairs are
    unaffected and every higher-order term estimates a non-negative
    population quantity.
    """
    blocks = _check_blocks(blocks)
    n = blocks[0].shape[0]
    m = len(blocks)
    pairs = list(itertools.combinations(range(m), 2))
    higher = [c for k in range(3, m + 1) for c in itertools.combinations(range(m), k)]
    pair_sums = dict.fromkeys(pairs, 0.0)
    zeta = 0.0
    for _, us in iter_ucentred_rows(blocks):
        for i, j in pairs:
            pair_sums[i, j] += float(np.sum(us[i] * us[j]))
        for combo in higher:
            prod = us[combo[0]] * us[combo[1]]
            for k in combo[2:]:
                prod = prod * us[k]
            zeta += (-1) ** len(combo) * float(np.sum(prod))
    scale = n * (n - 3)
    pred_attr = tuple(pair_sums[0, j] / scale for j in range(1, m))
    attr_attr = tuple(pair_sums[i, j] / scale for i, j in pairs if i > 0)
    zeta /= scale
    total = sum(pred_attr) + sum(attr_attr) + zeta
    return JdCovDecomposition(pred_attr, attr_attr, zeta, total)


def jdcov2(blocks) -> float:
    """Bias-corrected squared joint distance covariance (pairwise terms plus ``zeta``)."""
    return jdcov_decompose(blocks).total


def jdcov2_product(blocks) -> float:
    """Product form ``sum_{k,l} prod_i (1 - U_i(k,l)) / (n (n-3)) - n / (n-3)``.

    The subtracted constant is the empty-product term of the expansion summed
    over all ``n**2`` index pairs; with it this equals :func:`jdcov2`.
    """
    blocks = _check_blocks(blocks)
    n = blocks[0].shape[0]
    total = 0.0
    for _, us in iter_ucentred_rows(blocks):
        prod = 1.0 - us[0]
        for u in us[1:]:
            prod = prod * (1.0 - u)
        total += float(np.sum(prod))
    return total / (n * (n - 3)) - n / (n - 3)
