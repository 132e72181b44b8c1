"""Discriminative instance-embedding loss, its gradient, and a free-embedding trainer.

The loss pulls every embedding to within ``delta_v`` of its cluster mean and
pushes cluster means at least ``delta_d`` apart; both terms are squared hinges.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingLabels, ParseError

DELTA_V = 0.5
DELTA_D = 3.0
EMBED_DIM = 4


@dataclass(frozen=True)
class ClusterMargins:
    delta_v: float = DELTA_V
    delta_d: float = DELTA_D

    def __post_init__(self):
        if self.delta_v <= 0 or self.delta_d <= 0:
            raise ValueError("margins must be positive")

    @property
    def separable(self) -> bool:
        """True when ``delta_d > 6 delta_v``, the regime where thresholding is exact."""
        return self.delta_d > 6 * self.delta_v


@dataclass
class EmbeddingSet:
    embeddings: np.ndarray                 # (n, dim)
    labels: np.ndarray | None = None       # (n,) ints 1..C
    pixels: np.ndarray | None = None       # (n, 2) image x, row

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=float)
        if emb.ndim == 1:
            emb = emb.reshape(-1, 1) if emb.size else emb.reshape(0, 1)
        if not np.all(np.isfinite(emb)):
            raise ValueError("embeddings must be finite")
        self.embeddings = emb
        if self.labels is not None:
            lab = np.asarray(self.labels).astype(int).reshape(-1)
            if lab.size != emb.shape[0]:
                raise ValueError("one label per embedding required")
            self.labels = lab
        if self.pixels is not None:
            pix = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
            if pix.shape[0] != emb.shape[0]:
                raise ValueError("one pixel position per embedding required")
            self.pixels = pix

    @property
    def n_pixels(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


def _groups(labels):
    if labels is None:
        raise MissingLabels("embedding set carries no labels")
    ids, inverse = np.unique(labels, return_inverse=True)
    return ids, inverse


def cluster_means(es: EmbeddingSet):
    """Mean embedding per cluster, ordered by label id."""
    ids, inv = _groups(es.labels)
    sums = np.zeros((ids.size, es.dim))
    np.add.at(sums, inv, es.embeddings)
    counts = np.bincount(inv, minlength=ids.size)
    return sums / counts[:, None]


def discriminative_loss(es: EmbeddingSet, margins: ClusterMargins = ClusterMargins()):
    """Return ``(L, L_var, L_dist)``.

    ``L_dist`` sums over ordered pairs of distinct clusters and is divided by
    ``C (C - 1)``; with a single cluster there are no pairs and it is 0.
    """
    ids, inv = _groups(es.labels)
    C = ids.size
    if C == 0:
        raise MissingLabels("no clusters")
    mu = cluster_means(es)
    counts = np.bincount(inv, minlength=C)
    dist = np.linalg.norm(es.embeddings - mu[inv], axis=1)
    hv = np.maximum(dist - margins.delta_v, 0.0) ** 2
    per_cluster = np.bincount(inv, weights=hv, minlength=C) / counts
    l_var = float(per_cluster.sum() / C)
    l_dist = 0.0
    if C > 1:
        D = np.linalg.norm(mu[:, None, :] - mu[None, :, :], axis=2)
        hd = np.maximum(margins.delta_d - D, 0.0) ** 2
        np.fill_diagonal(hd, 0.0)
        l_dist = float(hd.sum() / (C * (C - 1)))
    return l_var + l_dist, l_var, l_dist


def discriminative_loss_grad(es: EmbeddingSet, margins: ClusterMargins = ClusterMargins()):
    """Gradient of the total loss w.r.t. every embedding, shape ``(n, dim)``.

    Cluster means depend on their members and that dependence is included.
    Hinge boundaries and coincident points use the zero subgradient.
    """
    ids, inv = _groups(es.labels)
    C = ids.size
    X = es.embeddings
    mu = cluster_means(es)
    counts = np.bincount(inv, minlength=C).astype(float)

    diff = X - mu[inv]
    dist = np.linalg.norm(diff, axis=1)
    h = np.maximum(dist - margins.delta_v, 0.0)
    coef = np.where((h > 0) & (dist > 0), 2.0 * h / np.where(dist > 0, dist, 1.0), 0.0)
    coef = coef / (C * counts[inv])
    g_direct = coef[:, None] * diff
    # each member also moves its mean: subtract the cluster average of g_direct
    g_sum = np.zeros((C, X.shape[1]))
    np.add.at(g_sum, inv, g_direct)
    grad = g_direct - (g_sum / counts[:, None])[inv]

    if C > 1:
        delta = mu[:, None, :] - mu[None, :, :]
        D = np.linalg.norm(delta, axis=2)
        hd = np.maximum(margins.delta_d - D, 0.0)
        active = (hd > 0) & (D > 0)
        np.fill_diagonal(active, False)
        w = np.where(active, -4.0 * hd / np.where(D > 0, D, 1.0), 0.0) / (C * (C - 1))
        g_mu = np.einsum("ab,abk->ak", w, delta)
        grad = grad + (g_mu / counts[:, None])[inv]
    return grad


@dataclass
class TrainResult:
    embeddings: EmbeddingSet
    loss_trace: list = field(default_factory=list)


def train_free_embeddings(labels, dim: int = EMBED_DIM, margins: ClusterMargins = ClusterMargins(),
                          steps: int = 5000, step_size: float = 10.0, seed: int = 0,
                          tol: float = 0.0) -> TrainResult:
    """Optimize one free embedding per pixel by gradient descent on the loss.

    Starts from a seeded standard normal scaled by 0.1.  Stops early once the
    loss drops to ``tol`` or below (``tol=0`` runs until the loss is exactly 0
    or ``steps`` is exhausted).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    labels = np.asarray(labels).astype(int)
    rng = np.random.default_rng(seed)
    es = EmbeddingSet(0.1 * rng.standard_normal((labels.size, dim)), labels)
    trace = []
    for _ in range(steps):
        L = discriminative_loss(es, margins)[0]
        trace.append(L)
        if L <= tol:
            break
        es.embeddings = es.embeddings - step_size * discriminative_loss_grad(es, margins)
    else:
        trace.append(discriminative_loss(es, margins)[0])
    return TrainResult(es, trace)


def place_centers(C: int, dim: int, separation: float, rng) -> np.ndarray:
    """``C`` centers with every pairwise distance at least ``separation``.

    Uses scaled axis vectors (pairwise distance exactly ``separation``) when
    ``C <= dim``, otherwise a seeded lattice-free rejection sampler.
    """
    offset = rng.standard_normal(dim)
    if C <= dim:
        return offset + separation / np.sqrt(2.0) * np.eye(dim)[:C]
    box = separation * max(2.0, C ** (1.0 / dim) * 2.0)
    centers = []
    for _ in range(100000):
        cand = rng.uniform(-box, box, dim)
        if all(np.linalg.norm(cand - c) >= separation for c in centers):
            centers.append(cand)
            if len(centers) == C:
                return offset + np.array(centers)
    raise RuntimeError("could not place centers; increase dim")


def sample_ball(rng, n: int, dim: int, radius: float) -> np.ndarray:
    """``n`` points uniform in the ``dim``-ball of the given radius."""
    if radius == 0 or n == 0:
        return np.zeros((n, dim))
    v = rng.standard_normal((n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.uniform(size=n) ** (1.0 / dim)
    return v * r[:, None]


# -- file formats ----------------------------------------------------------------
#
# Text: header "x,y,e1,...,eN[,label]", one pixel per row.
# Binary: magic b"LEMB", then little-endian uint32 version, dim, count,
# has_labels; count*(2+dim) float32 values (x, y, e1..eN per pixel); then
# count int32 labels when has_labels.

MAGIC = b"LEMB"
VERSION = 1


def write_embeddings_csv(es: EmbeddingSet, path, labels=None):
    labels = es.labels if labels is None else np.asarray(labels)
    pix = es.pixels if es.pixels is not None else np.zeros((es.n_pixels, 2))
    cols = ["x", "y"] + [f"e{k + 1}" for k in range(es.dim)]
    if labels is not None:
        cols.append("label")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(es.n_pixels):
            vals = [repr(float(v)) for v in pix[i]] + [repr(float(v)) for v in es.embeddings[i]]
            if labels is not None:
                vals.append(str(int(labels[i])))
            fh.write(",".join(vals) + "\n")


def read_embeddings_csv(path) -> EmbeddingSet:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["x", "y"]:
            raise ParseError("header must start with x,y", 1)
        has_label = header[-1] == "label"
        dim = len(header) - 2 - int(has_label)
        if header[2:2 + dim] != [f"e{k + 1}" for k in range(dim)]:
            raise ParseError("embedding columns must be e1..eN", 1)
        rows = []
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(parts)}", lineno)
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    labels = data[:, -1].astype(int) if has_label else None
    return EmbeddingSet(data[:, 2:2 + dim].reshape(-1, dim), labels, data[:, :2])


def write_embeddings_bin(es: EmbeddingSet, path, labels=None):
    labels = es.labels if labels is None else np.asarray(labels)
    pix = es.pixels if es.pixels is not None else np.zeros((es.n_pixels, 2))
    body = np.hstack([pix, es.embeddings]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", VERSION, es.dim, es.n_pixels, int(labels is not None)))
        fh.write(body.tobytes())
        if labels is not None:
            fh.write(np.asarray(labels, dtype="<i4").tobytes())


def read_embeddings_bin(path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ParseError("bad magic")
    if len(raw) < 20:
        raise ParseError("truncated header")
    version, dim, count, has_labels = struct.unpack("<IIII", raw[4:20])
    if version != VERSION:
        raise ParseError(f"unsupported version {version}")
    nbody = count * (2 + dim) * 4
    need = 20 + nbody + (count * 4 if has_labels else 0)
    if len(raw) != need:
        raise ParseError(f"expected {need} bytes, got {len(raw)}")
    body = np.frombuffer(raw, dtype="<f4", count=count * (2 + dim), offset=20)
    body = body.reshape(count, 2 + dim).astype(float)
    labels = None
    if has_labels:
        labels = np.frombuffer(raw, dtype="<i4", count=count, offset=20 + nbody).astype(int)
    return EmbeddingSet(body[:, 2:].reshape(count, dim), labels, body[:, :2])


def read_embeddings(path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_embeddings_bin(path) if head == MAGIC else read_embeddings_csv(path)


def write_embeddings(es: EmbeddingSet, path, labels=None):
    if str(path).endswith((".bin", ".emb")):
        write_embeddings_bin(es, path, labels)
    else:
        write_embeddings_csv(es, path, labels)
