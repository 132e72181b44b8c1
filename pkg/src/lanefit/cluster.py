"""Instance assignment: mean shift from a seed, then threshold at ``2 * delta_v``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import ClusterMargins, EmbeddingSet


@dataclass
class ClusterResult:
    labels: np.ndarray        # (n,) 1..K, 0 marks noise
    centers: np.ndarray       # (K, dim) converged modes

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    def sizes(self):
        return np.bincount(self.labels, minlength=self.K + 1)[1:]


def mean_shift(points, seed, bandwidth: float, max_iters: int = 30, tol: float = 1e-4):
    """Flat-kernel mean shift started at ``seed`` (an index or a vector).

    Each step moves to the mean of all points within ``bandwidth``; stops when
    the move is below ``tol`` or after ``max_iters`` steps.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    m = X[seed].copy() if np.ndim(seed) == 0 else np.asarray(seed, dtype=float).copy()
    return _shift(X, np.einsum("ij,ij->i", X, X), m, bandwidth, max_iters, tol)[0]


def _shift(X, sq, m, bandwidth, max_iters, tol):
    """Mean shift from ``m``; returns the mode and squared distances of all points to it.

    Iterations only look at a window of points within ``3 * bandwidth`` of the
    point the window was built around; any point inside the kernel is in the
    window as long as the mode has travelled less than ``2 * bandwidth`` from
    there, otherwise the window is rebuilt.  Distances use precomputed norms.
    """
    bw2 = bandwidth * bandwidth
    anchor = m
    win2 = (3.0 * bandwidth) ** 2
    d2 = sq - 2.0 * (X @ m) + m @ m
    idx = np.flatnonzero(d2 <= win2)
    Xw, sqw = X[idx], sq[idx]
    for _ in range(max_iters):
        if np.sum((m - anchor) ** 2) > (2.0 * bandwidth) ** 2:
            anchor = m
            d2 = sq - 2.0 * (X @ m) + m @ m
            idx = np.flatnonzero(d2 <= win2)
            Xw, sqw = X[idx], sq[idx]
        near = (sqw - 2.0 * (Xw @ m) + m @ m <= bw2).astype(float)
        cnt = near.sum()
        if cnt == 0:
            break
        new = (near @ Xw) / cnt
        moved = np.sqrt(np.sum((new - m) ** 2))
        m = new
        if moved < tol:
            break
    diff = X - m
    return m, np.einsum("ij,ij->i", diff, diff)


def cluster_instances(es: EmbeddingSet, margins: ClusterMargins = ClusterMargins(),
                      bandwidth: float | None = None, max_iters: int = 30,
                      min_size: int = 1) -> ClusterResult:
    """Partition embeddings into lane instances.

    The first unassigned pixel seeds a mean shift (all pixels contribute to
    the density); every still-unassigned pixel within ``2 * delta_v`` of the
    mode joins a new cluster.  Pixels are never reassigned.  Clusters smaller
    than ``min_size`` are relabeled 0 (noise).
    """
    X = es.embeddings
    n = X.shape[0]
    bw = margins.delta_v if bandwidth is None else bandwidth
    tol = 1e-4 * margins.delta_v
    radius2 = (2.0 * margins.delta_v) ** 2
    labels = np.zeros(n, dtype=int)
    centers = []
    unassigned = np.ones(n, dtype=bool)
    sq = np.einsum("ij,ij->i", X, X)
    start = 0
    while True:
        idx = np.flatnonzero(unassigned[start:])
        if idx.size == 0:
            break
        seed = start + idx[0]
        start = seed
        mode, d2 = _shift(X, sq, X[seed].copy(), bw, max_iters, tol)
        take = unassigned & (d2 <= radius2)
        take[seed] = True          # the seed always joins, even if the mode drifted off
        centers.append(mode)
        labels[take] = len(centers)
        unassigned &= ~take

    centers = np.array(centers).reshape(-1, X.shape[1] if X.ndim == 2 else 1)
    if min_size > 1 and len(centers):
        sizes = np.bincount(labels, minlength=len(centers) + 1)[1:]
        keep = np.flatnonzero(sizes >= min_size)
        remap = np.zeros(len(centers) + 1, dtype=int)
        remap[keep + 1] = np.arange(1, keep.size + 1)
        labels = remap[labels]
        centers = centers[keep]
    return ClusterResult(labels, centers)


def same_partition(a, b) -> bool:
    """True when two labelings group the pixels identically (ids may differ)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        return False
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))
