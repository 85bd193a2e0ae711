"""First-stage dense retrieval: k-means coarse quantizer plus flat posting lists.

Search ranks centroids by similarity to the query, exhaustively scores the
documents in the top nprobe lists, and returns the top K under a fully
deterministic tie rule (descending score, then ascending internal id).
Probing all lists degenerates to exact search, which is the oracle the
tests lean on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingMatrix

IVF_MAGIC = b"CRIV1"

METRICS = ("dot", "cosine")


@dataclass
class Centroids:
    """k x D coarse quantizer codebook."""

    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ValueError("centroids must be a non-empty 2-d array")
        if not np.isfinite(self.vectors).all():
            raise ValueError("centroids contain non-finite values")

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class Ranking:
    """Scored documents ordered by (score desc, internal id asc); ranks are 1-based."""

    ids: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def entries(self) -> list[tuple[int, float, int]]:
        return [(int(i), float(s), r + 1) for r, (i, s) in enumerate(zip(self.ids, self.scores))]


def _sq_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, points (n,D) x centers (k,D) -> (n,k)."""
    p2 = np.einsum("ij,ij->i", points, points)
    c2 = np.einsum("ij,ij->i", centers, centers)
    d = p2[:, None] - 2.0 * points @ centers.T + c2[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def _kmeanspp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ initialization: probability proportional to squared distance."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = points[first]
    closest = np.einsum("ij,ij->i", points - centers[0], points - centers[0])
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # All remaining mass at distance zero: spread over arbitrary points.
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers[c] = points[idx]
        diff = points - centers[c]
        np.minimum(closest, np.einsum("ij,ij->i", diff, diff), out=closest)
    return centers


def train_kmeans(vectors: EmbeddingMatrix, nlist: int, max_iters: int = 25,
                 seed: int = 0) -> Centroids:
    """Lloyd's algorithm with k-means++ seeding under Euclidean distance.

    Empty clusters are reseeded to the point currently farthest from its
    centroid. Stops after max_iters or when the assignment is stable.
    """
    points = vectors.rows.astype(np.float64)
    n = points.shape[0]
    if not (1 <= nlist <= n):
        raise ValueError(f"nlist must be in [1, {n}], got {nlist}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_seed(points, nlist, rng)
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        d = _sq_distances(points, centers)
        new_assign = np.argmin(d, axis=1)
        dist_to_own = d[np.arange(n), new_assign]
        counts = np.bincount(new_assign, minlength=nlist)
        for empty in np.flatnonzero(counts == 0):
            far = int(np.argmax(dist_to_own))
            centers[empty] = points[far]
            counts[new_assign[far]] -= 1
            new_assign[far] = empty
            counts[empty] = 1
            dist_to_own[far] = 0.0
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(nlist):
            members = points[assign == c]
            if members.shape[0]:
                centers[c] = members.mean(axis=0)
    return Centroids(centers)


class IvfIndex:
    """Coarse quantizer plus per-cluster flat lists of (internal id, vector).

    Lists are stored concatenated (CSR-style) in list order; each list is
    sorted by internal id. The scoring metric (dot or cosine) is fixed at
    build time; cluster assignment is always Euclidean.
    """

    def __init__(self, centroids: Centroids, offsets: np.ndarray, ids: np.ndarray,
                 vectors: np.ndarray, metric: str):
        if metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        self.centroids = centroids
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.ids = np.asarray(ids, dtype=np.int64)
        self.vectors = np.asarray(vectors, dtype=np.float32)
        self.metric = metric
        self.norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)

    @property
    def nlist(self) -> int:
        return self.centroids.k

    @property
    def n_docs(self) -> int:
        return self.ids.shape[0]

    def list_ids(self, c: int) -> np.ndarray:
        return self.ids[self.offsets[c]:self.offsets[c + 1]]


def default_nlist(n_docs: int) -> int:
    """Desk-scale default: round(sqrt(N)), at least 1."""
    return max(1, int(round(np.sqrt(n_docs))))


def build_ivf(vectors: EmbeddingMatrix, centroids: Centroids, metric: str = "dot") -> IvfIndex:
    """Assign every vector to its nearest centroid (Euclidean) and build lists."""
    if vectors.dim != centroids.dim:
        raise ValueError(f"dimension mismatch: vectors {vectors.dim}, centroids {centroids.dim}")
    points = vectors.rows.astype(np.float64)
    assign = np.argmin(_sq_distances(points, centroids.vectors), axis=1)
    order = np.lexsort((np.arange(points.shape[0]), assign))
    sorted_assign = assign[order]
    counts = np.bincount(sorted_assign, minlength=centroids.k)
    offsets = np.zeros(centroids.k + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return IvfIndex(centroids, offsets, order.astype(np.int64),
                    vectors.rows[order], metric)


def _metric_scores(q: np.ndarray, matrix: np.ndarray, norms: np.ndarray, metric: str) -> np.ndarray:
    """Similarity of q against rows of matrix; zero-norm rows score 0 under cosine."""
    scores = matrix @ q
    if metric == "cosine":
        qn = np.linalg.norm(q)
        if qn == 0.0:
            return np.zeros(matrix.shape[0], dtype=np.float64)
        denom = norms * qn
        out = np.zeros(matrix.shape[0], dtype=np.float64)
        nz = denom > 0.0
        out[nz] = scores[nz] / denom[nz]
        return out
    return scores.astype(np.float64, copy=False)


def _top_k(ids: np.ndarray, scores: np.ndarray, k: int) -> Ranking:
    order = np.lexsort((ids, -scores))[:k]
    return Ranking(ids[order], scores[order])


def search(index: IvfIndex, q: np.ndarray, k: int, nprobe: int) -> Ranking:
    """Probe the nprobe closest lists under the index metric; exact within them."""
    if not (1 <= nprobe <= index.nlist):
        raise ValueError(f"nprobe must be in [1, {index.nlist}], got {nprobe}")
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(q, dtype=np.float64)
    if q.shape[0] != index.centroids.dim:
        raise ValueError(f"dimension mismatch: query {q.shape[0]}, index {index.centroids.dim}")
    cent = index.centroids.vectors
    cent_norms = np.linalg.norm(cent, axis=1)
    cent_scores = _metric_scores(q, cent, cent_norms, index.metric)
    probe = np.lexsort((np.arange(index.nlist), -cent_scores))[:nprobe]
    spans = [(int(index.offsets[c]), int(index.offsets[c + 1])) for c in probe]
    cand_ids = np.concatenate([index.ids[a:b] for a, b in spans])
    if cand_ids.shape[0] == 0:
        return Ranking(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))
    cand_vecs = np.concatenate([index.vectors[a:b] for a, b in spans])
    cand_norms = np.concatenate([index.norms[a:b] for a, b in spans])
    scores = _metric_scores(q, cand_vecs, cand_norms, index.metric)
    return _top_k(cand_ids, scores, k)


def exhaustive_search(vectors: EmbeddingMatrix, q: np.ndarray, k: int,
                      metric: str = "dot") -> Ranking:
    """Exact top-k over the whole collection, same tie rule as search()."""
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    q = np.asarray(q, dtype=np.float64)
    if q.shape[0] != vectors.dim:
        raise ValueError(f"dimension mismatch: query {q.shape[0]}, matrix {vectors.dim}")
    scores = _metric_scores(q, vectors.rows, vectors.norms, metric)
    return _top_k(np.arange(vectors.n_rows, dtype=np.int64), scores, k)


def save_ivf(index: IvfIndex, path) -> None:
    with open(path, "wb") as f:
        f.write(IVF_MAGIC)
        f.write(struct.pack("<BIIQ", METRICS.index(index.metric), index.nlist,
                            index.centroids.dim, index.n_docs))
        f.write(index.centroids.vectors.astype("<f8").tobytes())
        f.write(index.offsets.astype("<i8").tobytes())
        f.write(index.ids.astype("<i8").tobytes())
        f.write(index.vectors.astype("<f4").tobytes())


def load_ivf(path) -> IvfIndex:
    with open(path, "rb") as f:
        data = f.read()
    if data[:5] != IVF_MAGIC:
        raise ValueError(f"{path}: bad magic, not a CRIV1 index")
    off = 5
    metric_code, nlist, dim, n_docs = struct.unpack_from("<BIIQ", data, off)
    off += struct.calcsize("<BIIQ")
    cent = np.frombuffer(data, dtype="<f8", count=nlist * dim, offset=off).reshape(nlist, dim).copy()
    off += 8 * nlist * dim
    offsets = np.frombuffer(data, dtype="<i8", count=nlist + 1, offset=off).copy()
    off += 8 * (nlist + 1)
    ids = np.frombuffer(data, dtype="<i8", count=n_docs, offset=off).copy()
    off += 8 * n_docs
    vecs = np.frombuffer(data, dtype="<f4", count=n_docs * dim, offset=off).reshape(n_docs, dim).copy()
    return IvfIndex(Centroids(cent), offsets, ids, vecs, METRICS[metric_code])
