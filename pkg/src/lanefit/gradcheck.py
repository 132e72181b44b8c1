"""Analytic-vs-finite-difference gradient checks on seeded random instances."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embed import ClusterMargins, EmbeddingSet, discriminative_loss, discriminative_loss_grad
from .geometry import Homography
from .hoptim import loss_gradient

HINGE_CLEARANCE = 1e-3


def relative_error(g, ref) -> float:
    g = np.ravel(g)
    ref = np.ravel(ref)
    den = max(np.linalg.norm(g), np.linalg.norm(ref), 1e-300)
    return float(np.linalg.norm(g - ref) / den)


def embed_fd_grad(es: EmbeddingSet, margins: ClusterMargins, h: float = 1e-6):
    X = es.embeddings
    out = np.zeros_like(X)
    for i in range(X.shape[0]):
        for k in range(X.shape[1]):
            Xp = X.copy()
            Xm = X.copy()
            Xp[i, k] += h
            Xm[i, k] -= h
            lp = discriminative_loss(EmbeddingSet(Xp, es.labels), margins)[0]
            lm = discriminative_loss(EmbeddingSet(Xm, es.labels), margins)[0]
            out[i, k] = (lp - lm) / (2 * h)
    return out


def _hinge_clear(es, margins, clearance):
    from .embed import cluster_means

    mu = cluster_means(es)
    ids, inv = np.unique(es.labels, return_inverse=True)
    r = np.linalg.norm(es.embeddings - mu[inv], axis=1)
    if np.any(np.abs(r - margins.delta_v) < clearance) or np.any(r < clearance):
        return False
    if ids.size > 1:
        D = np.linalg.norm(mu[:, None] - mu[None], axis=2)[np.triu_indices(ids.size, 1)]
        if np.any(np.abs(D - margins.delta_d) < clearance) or np.any(D < clearance):
            return False
    return True


def random_embedding_instance(rng, margins=ClusterMargins(), clearance=HINGE_CLEARANCE):
    """Labeled embeddings with some hinge active, every hinge argument away from 0."""
    while True:
        C = int(rng.integers(1, 5))
        dim = int(rng.integers(1, 5))
        n = int(rng.integers(C, 5 * C + 1))
        labels = np.concatenate([np.arange(1, C + 1), rng.integers(1, C + 1, n - C)])
        centers = rng.normal(scale=margins.delta_d / 2, size=(C, dim))
        X = centers[labels - 1] + rng.normal(scale=margins.delta_v * 1.2, size=(n, dim))
        es = EmbeddingSet(X, labels)
        if _hinge_clear(es, margins, clearance) and discriminative_loss(es, margins)[0] > 1e-6:
            return es


def random_lane_instance(rng, degree=None):
    """Normalized-coordinate transform and lanes with every point well off the horizon."""
    deg = degree if degree is not None else int(rng.integers(2, 4))
    while True:
        theta = np.array([1 + 0.3 * rng.standard_normal(), 0.3 * rng.standard_normal(),
                          0.2 * rng.standard_normal(), 1 + 0.3 * rng.standard_normal(),
                          0.2 * rng.standard_normal(), rng.uniform(-0.8, 0.8)])
        H = Homography.from_params(theta)
        if abs(H.det) < 0.1:
            continue
        lanes = []
        for _ in range(int(rng.integers(1, 5))):
            n = int(rng.integers(deg + 3, 30))
            y = np.sort(rng.uniform(0.0, 1.0, n))
            x = (rng.uniform(-1, 1) + rng.normal() * y + rng.normal() * y ** 2
                 + 0.5 * rng.normal() / (y + 1.5) + 0.02 * rng.standard_normal(n))
            lanes.append(np.column_stack([x, y]))
        ys = np.concatenate([p[:, 1] for p in lanes])
        if np.min(theta[5] * ys + 1.0) > 0.1:
            return H, lanes, deg


@dataclass
class CheckResult:
    name: str
    instances: int
    worst_rel_err: float
    worst_instance: int
    worst_index: int            # parameter (or flattened embedding coordinate) index
    tolerance: float
    errors: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.worst_rel_err < self.tolerance


def check_embedding_gradients(instances=100, seed=0, tol=1e-4, margins=ClusterMargins()):
    rng = np.random.default_rng(seed)
    errs, worst = [], (0.0, -1, -1)
    for k in range(instances):
        es = random_embedding_instance(rng, margins)
        g = discriminative_loss_grad(es, margins)
        fd = embed_fd_grad(es, margins)
        err = relative_error(g, fd)
        errs.append(err)
        if err >= worst[0]:
            worst = (err, k, int(np.argmax(np.abs(g - fd).ravel())))
    return CheckResult("discriminative_loss", instances, worst[0], worst[1], worst[2], tol, errs)


def check_reprojection_gradients(instances=100, seed=0, tol=1e-4):
    rng = np.random.default_rng(seed)
    errs, worst = [], (0.0, -1, -1)
    for k in range(instances):
        H, lanes, deg = random_lane_instance(rng)
        g = loss_gradient(H, lanes, deg, "analytic")
        fd = loss_gradient(H, lanes, deg, "central")
        err = relative_error(g, fd)
        errs.append(err)
        if err >= worst[0]:
            worst = (err, k, int(np.argmax(np.abs(g - fd))))
    return CheckResult("reprojection_loss", instances, worst[0], worst[1], worst[2], tol, errs)
