"""Stratified splitting, stratified folds and subgroup oversampling."""

from __future__ import annotations

import numpy as np

from ..errors import EmptyInput
from ..fairness import subgroup_index


def strata_labels(response, keys, task: str = "binary") -> np.ndarray:
    """Dense stratum ids from the observed response and the joint subgroup key.

    Counts are reduced to zero / non-zero so strata stay populated.
    """
    y = np.asarray(response, dtype=np.float64)
    y = (y > 0).astype(np.int64) if task == "poisson" else y.astype(np.int64)
    keys = np.asarray(keys).reshape(len(y), -1)
    ids, _ = subgroup_index(np.column_stack([y, keys]))
    return ids


def _allocate(sizes: np.ndarray, fraction: float, total: int) -> np.ndarray:
    """Largest-remainder allocation of ``total`` held-out rows across strata.

    Singleton strata receive nothing; ties in the remainder go to the
    earlier stratum.
    """
    eligible = sizes > 1
    quota = sizes * fraction * eligible
    base = np.floor(quota).astype(np.int64)
    base = np.minimum(base, np.maximum(sizes - 1, 0))
    left = total - int(base.sum())
    if left > 0:
        room = eligible & (base < sizes - 1)
        rem = np.where(room, quota - base, -np.inf)
        order = np.lexsort((np.arange(sizes.size), -rem))
        order = order[np.isfinite(rem[order])][:left]
        base[order] += 1
    return base


def stratified_split(strata, fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Split row indices into ``(kept, held_out)`` with ``held_out`` about ``fraction``.

    Each stratum contributes within one row of its proportional share and
    singleton strata stay on the kept side. Both outputs are sorted.
    """
    strata = np.asarray(strata)
    n = strata.size
    if n == 0:
        raise EmptyInput("cannot split an empty table")
    ids, _ = subgroup_index(strata)
    sizes = np.bincount(ids)
    target = int(round(n * fraction))
    target = min(target, int(np.sum(np.maximum(sizes - 1, 0)[sizes > 1])))
    take = _allocate(sizes, fraction, target)
    rng = np.random.default_rng(seed)
    held = []
    for g in range(sizes.size):
        members = np.flatnonzero(ids == g)
        if take[g]:
            held.append(rng.permutation(members)[:take[g]])
    held = np.sort(np.concatenate(held)) if held else np.array([], dtype=np.int64)
    kept = np.setdiff1d(np.arange(n), held)
    return kept, held


def stratified_folds(strata, k: int = 5, seed: int = 0) -> np.ndarray:
    """Fold label ``0..k-1`` per row, balanced within every stratum."""
    strata = np.asarray(strata)
    if strata.size == 0:
        raise EmptyInput("cannot fold an empty table")
    ids, _ = subgroup_index(strata)
    rng = np.random.default_rng(seed)
    folds = np.empty(strata.size, dtype=np.int64)
    offset = 0
    for g in range(ids.max() + 1):
        members = rng.permutation(np.flatnonzero(ids == g))
        folds[members] = (np.arange(members.size) + offset) % k
        offset = (offset + members.size) % k
    return folds


def oversample_subgroups(keys, min_count: int = 30, seed: int = 0) -> np.ndarray:
    """Row indices with small subgroups topped up to ``min_count`` by resampling.

    The original rows come first in order, followed by duplicates drawn with
    replacement from each undersized subgroup.
    """
    keys = np.asarray(keys)
    n = keys.shape[0]
    if n == 0:
        return np.array([], dtype=np.int64)
    ids, _ = subgroup_index(keys)
    rng = np.random.default_rng(seed)
    extra = []
    for g in range(ids.max() + 1):
        members = np.flatnonzero(ids == g)
        if 0 < members.size < min_count:
            extra.append(rng.choice(members, size=min_count - members.size, replace=True))
    return np.concatenate([np.arange(n), *extra]) if extra else np.arange(n)
