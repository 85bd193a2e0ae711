"""Dense vector storage and the deterministic toy encoder.

Embeddings are produced offline by an external encoder and loaded from the
CREM1 binary format (f32 rows). The toy encoder is a seeded random
projection used for synthetic datasets and tests: good enough to carry a
"semantic" signal, with no neural runtime involved.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import tokenize

EMBEDDING_MAGIC = b"CREM1"


@dataclass
class EmbeddingMatrix:
    """Row-per-document matrix (f32 storage); norms cached in f64."""

    rows: np.ndarray
    norms: np.ndarray = field(default=None)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float32)
        if self.rows.ndim != 2:
            raise ValueError("embedding matrix must be 2-dimensional")
        if not np.isfinite(self.rows).all():
            raise ValueError("embedding matrix contains non-finite values")
        if self.norms is None:
            self.norms = np.linalg.norm(self.rows.astype(np.float64), axis=1)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.rows[i]


def save_embeddings(matrix: EmbeddingMatrix | np.ndarray, path) -> None:
    rows = matrix.rows if isinstance(matrix, EmbeddingMatrix) else np.asarray(matrix, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(EMBEDDING_MAGIC)
        f.write(struct.pack("<II", rows.shape[0], rows.shape[1]))
        f.write(rows.astype("<f4").tobytes())


def load_embeddings(path, expected_rows: int | None = None) -> EmbeddingMatrix:
    """Load a CREM1 file; row count is checked against the collection size."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:5] != EMBEDDING_MAGIC:
        raise ValueError(f"{path}: bad magic, not a CREM1 embedding file")
    n_rows, dim = struct.unpack_from("<II", data, 5)
    payload = np.frombuffer(data, dtype="<f4", offset=13)
    if payload.shape[0] != n_rows * dim:
        raise ValueError(f"{path}: payload holds {payload.shape[0]} floats, header says {n_rows}x{dim}")
    if expected_rows is not None and n_rows != expected_rows:
        raise ValueError(f"{path}: expected {expected_rows} rows, file has {n_rows}")
    rows = payload.reshape(n_rows, dim).copy()
    if not np.isfinite(rows).all():
        raise ValueError(f"{path}: embedding file contains non-finite values")
    return EmbeddingMatrix(rows)


_token_vector_cache: dict[tuple[int, int, str], np.ndarray] = {}


def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    """Fixed pseudo-random unit vector for (token, dim, seed), stable across runs."""
    key = (seed, dim, token)
    vec = _token_vector_cache.get(key)
    if vec is None:
        digest = hashlib.blake2b(f"{seed}\x00{token}".encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        vec = rng.standard_normal(dim)
        vec /= np.linalg.norm(vec)
        _token_vector_cache[key] = vec
    return vec


def toy_encode(text: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic bag-of-tokens random projection, L2-normalized.

    Each token maps to a fixed hashed unit vector; the output is the
    normalized sum over the token sequence. Empty input encodes to the
    zero vector.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    tokens = tokenize(text)
    out = np.zeros(dim, dtype=np.float64)
    for tok in tokens:
        out += _token_vector(tok, dim, seed)
    norm = np.linalg.norm(out)
    if norm > 0:
        out /= norm
    return out


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in f64; 0.0 whenever either vector has zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u.dot(v) / (nu * nv))
