"""SMOTE for fixed-length categorical sequences.

Real-valued SMOTE places a synthetic sample at ``x + lam * (z - x)`` for a
base sample ``x`` and one of its nearest neighbours ``z``.  Symbols cannot be
interpolated, so here ``lam ~ U(0, 1)`` is drawn once per synthetic sequence
and each position independently takes ``z``'s symbol with probability
``lam`` and ``x``'s symbol otherwise.  Neighbours are ranked by Hamming
distance with ties broken by input order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMinority


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")


def _symbols(seq) -> np.ndarray:
    return np.asarray(getattr(seq, "states", seq))


def hamming_distance(a, b) -> int:
    a, b = _symbols(a), _symbols(b)
    if a.shape != b.shape:
        raise ValueError("sequences differ in length")
    return int(np.count_nonzero(a != b))


def nearest_neighbors(X: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    """Indices of the ``min(k, n - 1)`` nearest other rows of ``X`` by Hamming distance."""
    n = X.shape[0]
    k = min(k, n - 1)
    out = np.empty((n, k), dtype=np.intp)
    for lo in range(0, n, chunk):
        block = X[lo:lo + chunk]
        dist = (block[:, None, :] != X[None, :, :]).sum(axis=2)
        rows = np.arange(block.shape[0])
        dist[rows, lo + rows] = X.shape[1] + 1
        # stable sort keeps lower input index first among equal distances
        out[lo:lo + chunk] = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return out


def smote_oversample_with_parents(minority, target_count: int, cfg: SmoteConfig = SmoteConfig()):
    """Like :func:`smote_oversample` but also return the ``(base, neighbour)``
    input indices each synthetic sequence was built from."""
    minority = list(minority)
    if not minority:
        raise EmptyMinority("cannot oversample an empty minority class")
    n = len(minority)
    if target_count < n:
        raise ValueError(f"target_count {target_count} is below the minority size {n}")
    n_new = target_count - n
    seq_type = type(minority[0])
    X = np.stack([_symbols(s) for s in minority])
    if n_new == 0:
        return [], []
    rng = np.random.default_rng(cfg.seed)
    if n == 1:
        return [minority[0]] * n_new, [(0, 0)] * n_new
    neighbors = nearest_neighbors(X, cfg.k_neighbors)
    out, parents = [], []
    for i in range(n_new):
        base = i % n
        nb = int(neighbors[base, rng.integers(neighbors.shape[1])])
        lam = rng.random()
        take = rng.random(X.shape[1]) < lam
        row = np.where(take, X[nb], X[base])
        out.append(seq_type(tuple(int(v) for v in row)) if seq_type is not np.ndarray else row)
        parents.append((base, nb))
    return out, parents


def smote_oversample(minority, target_count: int, cfg: SmoteConfig = SmoteConfig()) -> list:
    """Return ``target_count - len(minority)`` synthetic sequences.

    Base samples are visited cyclically in input order, one synthetic
    sequence per visit.  With ``len(minority) <= k_neighbors`` every other
    member is a candidate neighbour; a single-member class is copied.
    """
    return smote_oversample_with_parents(minority, target_count, cfg)[0]
