"""Per-(query, candidate) feature extraction and the blended feature layout.

The blended vector concatenates, in this fixed order: the dense query
vector (D values), the dense document vector (D), their elementwise delta
q - d (D), the cosine similarity between the two, the candidate's rank
under cosine ordering, and the lexical feature catalog (L values). Total
length is 3D + 2 + L.

The lexical catalog covers term-level statistics aggregated over query
terms, whole-match scores (BM25, Dirichlet language model), and positional
proximity. Aggregation is over unique query terms; query length counts
tokens with duplicates.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .corpus import InvertedIndex, tokenize
from .embeddings import EmbeddingMatrix
from .ivf import Ranking

BM25_K1 = 0.9
BM25_B = 0.4
LM_MU = 1000.0

PAIR_WINDOW = 8

FAMILIES = ("dense_query", "dense_doc", "dense_delta", "cosine", "rank", "lexical")

_STATS = ("tf", "tf_norm", "idf", "tfidf", "bm25", "lm_dir")
_AGGS = ("sum", "min", "max", "mean")

DEFAULT_LEXICAL_NAMES = (
    [f"lex_{s}_{a}" for s in _STATS for a in _AGGS]
    + [
        "lex_bm25_total",
        "lex_lm_dir_total",
        "lex_query_len",
        "lex_doc_len",
        "lex_matched",
        "lex_matched_ratio",
        "lex_doc_unique_terms",
        "lex_tfidf_cosine",
        "lex_min_window",
        "lex_mean_min_pair_dist",
        "lex_ordered_bigrams",
        "lex_pairs_within_8",
        "lex_pad_0",
        "lex_pad_1",
        "lex_pad_2",
        "lex_pad_3",
    ]
)

LEXICAL_COUNT = len(DEFAULT_LEXICAL_NAMES)


@dataclass(frozen=True)
class FeatureRegistry:
    """Immutable layout map: feature id equals position in the blended vector."""

    dim: int
    lexical_names: tuple[str, ...]

    @property
    def lexical_count(self) -> int:
        return len(self.lexical_names)

    @property
    def total(self) -> int:
        return 3 * self.dim + 2 + self.lexical_count

    @property
    def cosine_id(self) -> int:
        return 3 * self.dim

    @property
    def rank_id(self) -> int:
        return 3 * self.dim + 1

    def name(self, feature_id: int) -> str:
        d = self.dim
        if feature_id < d:
            return f"dense_query_{feature_id}"
        if feature_id < 2 * d:
            return f"dense_doc_{feature_id - d}"
        if feature_id < 3 * d:
            return f"dense_delta_{feature_id - 2 * d}"
        if feature_id == 3 * d:
            return "cosine"
        if feature_id == 3 * d + 1:
            return "rank"
        return self.lexical_names[feature_id - 3 * d - 2]

    def family(self, feature_id: int) -> str:
        d = self.dim
        if feature_id < d:
            return "dense_query"
        if feature_id < 2 * d:
            return "dense_doc"
        if feature_id < 3 * d:
            return "dense_delta"
        if feature_id == 3 * d:
            return "cosine"
        if feature_id == 3 * d + 1:
            return "rank"
        return "lexical"

    @property
    def registry_hash(self) -> str:
        payload = f"{self.dim}|" + "|".join(self.lexical_names)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def to_json(self) -> str:
        entries = [
            {"id": i, "name": self.name(i), "family": self.family(i)}
            for i in range(self.total)
        ]
        return json.dumps({"dim": self.dim, "hash": self.registry_hash,
                           "entries": entries}, indent=1)


def build_registry(dim: int, lexical_count: int | None = None) -> FeatureRegistry:
    """Registry for dimension D; lexical_count overrides the catalog size
    with generically named slots (used to reason about other layouts)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if lexical_count is None or lexical_count == LEXICAL_COUNT:
        names = tuple(DEFAULT_LEXICAL_NAMES)
    else:
        names = tuple(f"lex_{i:03d}" for i in range(lexical_count))
    return FeatureRegistry(dim, names)


@dataclass
class BlendedVector:
    """One feature vector bound to its registry by hash."""

    values: np.ndarray
    registry_hash: str


@dataclass
class FeatureMask:
    """Feature subset for a model variant: full, lexical (plus rank), or dense."""

    variant: str
    included: np.ndarray
    registry_hash: str


def make_mask(registry: FeatureRegistry, variant: str) -> FeatureMask:
    d = registry.dim
    if variant == "full":
        ids = np.arange(registry.total)
    elif variant == "lexical":
        ids = np.concatenate(([registry.rank_id],
                              np.arange(3 * d + 2, registry.total)))
    elif variant == "dense":
        ids = np.arange(3 * d + 2)
    else:
        raise ValueError(f"unknown mask variant {variant!r}")
    return FeatureMask(variant, np.sort(ids).astype(np.int64), registry.registry_hash)


def apply_mask(vec: BlendedVector, mask: FeatureMask) -> np.ndarray:
    if vec.registry_hash != mask.registry_hash:
        raise ValueError("registry hash mismatch between vector and mask")
    return vec.values[mask.included]


def blend(q_vec, d_vec, cos: float, rank: int, lexical,
          registry: FeatureRegistry) -> BlendedVector:
    """Assemble one blended vector in registry order (delta is q - d)."""
    q = np.asarray(q_vec, dtype=np.float64)
    d = np.asarray(d_vec, dtype=np.float64)
    lex = np.asarray(lexical, dtype=np.float64)
    if q.shape != (registry.dim,) or d.shape != (registry.dim,):
        raise ValueError(f"dense vectors must have dimension {registry.dim}")
    if lex.shape != (registry.lexical_count,):
        raise ValueError(f"lexical block must have length {registry.lexical_count}")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    values = np.empty(registry.total, dtype=np.float64)
    dd = registry.dim
    values[:dd] = q
    values[dd:2 * dd] = d
    values[2 * dd:3 * dd] = q - d
    values[3 * dd] = cos
    values[3 * dd + 1] = float(rank)
    values[3 * dd + 2:] = lex
    return BlendedVector(values, registry.registry_hash)


class _QueryContext:
    """Per-query precomputation shared across candidate documents."""

    def __init__(self, index: InvertedIndex, query_tokens: list[str]):
        self.tokens = list(query_tokens)
        self.terms = sorted(set(self.tokens))
        self.postings = [index.posting(t) for t in self.terms]
        self.idf = [index.idf(t) for t in self.terms]
        self.cf = [index.cf.get(t, 0) for t in self.terms]
        qtf = {}
        for t in self.tokens:
            qtf[t] = qtf.get(t, 0) + 1
        self.query_weights = [qtf[t] * index.idf(t) for t in self.terms]
        self.query_norm = math.sqrt(sum(w * w for w in self.query_weights))
        self.bigrams = list(zip(self.tokens, self.tokens[1:]))


def _min_cover_window(position_lists: list[np.ndarray]) -> int:
    """Length of the shortest document span containing every term at least once."""
    merged = []
    for label, plist in enumerate(position_lists):
        merged.extend((int(p), label) for p in plist)
    merged.sort()
    need = len(position_lists)
    counts = [0] * need
    covered = 0
    best = -1
    left = 0
    for right in range(len(merged)):
        lab = merged[right][1]
        counts[lab] += 1
        if counts[lab] == 1:
            covered += 1
        while covered == need:
            span = merged[right][0] - merged[left][0] + 1
            if best < 0 or span < best:
                best = span
            lab_l = merged[left][1]
            counts[lab_l] -= 1
            if counts[lab_l] == 0:
                covered -= 1
            left += 1
    return best


def _min_pair_distance(a: np.ndarray, b: np.ndarray) -> int:
    """Minimum |pa - pb| over occurrence pairs of two sorted position arrays."""
    i = j = 0
    best = None
    while i < len(a) and j < len(b):
        d = abs(int(a[i]) - int(b[j]))
        if best is None or d < best:
            best = d
        if a[i] < b[j]:
            i += 1
        else:
            j += 1
    return best


def extract_lexical(index: InvertedIndex, query_tokens: list[str],
                    internal_id: int) -> np.ndarray:
    """Compute the lexical catalog for one (query, document) pair."""
    ctx = _QueryContext(index, query_tokens)
    return _lexical_features(index, ctx, internal_id)


def _lexical_features(index: InvertedIndex, ctx: _QueryContext,
                      internal_id: int) -> np.ndarray:
    """Reference per-document implementation; the batch path must agree
    with it bitwise (tested)."""
    out = np.zeros(LEXICAL_COUNT, dtype=np.float64)
    dl = int(index.doc_len[internal_id])
    avgdl = index.avg_doc_len
    total_tokens = index.total_tokens
    norm_len = 1.0 - BM25_B + BM25_B * (dl / avgdl) if avgdl > 0 else 1.0

    n_terms = len(ctx.terms)
    tfs, tf_norms, idfs, tfidfs, bm25s, lms = [], [], [], [], [], []
    matched_positions = []
    tfidf_dot = 0.0
    for t_i in range(n_terms):
        posting = ctx.postings[t_i]
        tf = 0
        positions = None
        if posting is not None:
            ids, pfs, pos = posting
            k = int(np.searchsorted(ids, internal_id))
            if k < ids.shape[0] and ids[k] == internal_id:
                tf = int(pfs[k])
                positions = pos[k]
        idf = ctx.idf[t_i]
        cf = ctx.cf[t_i]
        tf_f = float(tf)
        tfs.append(tf_f)
        tf_norms.append(tf_f / dl if dl else 0.0)
        idfs.append(idf)
        tfidfs.append(tf_f * idf)
        bm25s.append(idf * tf_f / (tf_f + BM25_K1 * norm_len) if tf else 0.0)
        lms.append(float(np.log((tf_f + LM_MU * cf / total_tokens) / (dl + LM_MU)))
                   if cf > 0 else 0.0)
        if tf:
            matched_positions.append((t_i, positions))
            tfidf_dot += ctx.query_weights[t_i] * (tf_f * idf)

    k = 0
    for stat in (tfs, tf_norms, idfs, tfidfs, bm25s, lms):
        if n_terms:
            total = 0.0
            for v in stat:
                total += v
            out[k] = total
            out[k + 1] = min(stat)
            out[k + 2] = max(stat)
            out[k + 3] = total / n_terms
        k += 4

    matched = len(matched_positions)
    out[24] = out[16]
    out[25] = out[20]
    out[26] = float(len(ctx.tokens))
    out[27] = float(dl)
    out[28] = float(matched)
    out[29] = matched / n_terms if n_terms else 0.0
    out[30] = float(index.unique_terms[internal_id])
    doc_norm = float(index.tfidf_norm[internal_id])
    if ctx.query_norm > 0 and doc_norm > 0:
        out[31] = tfidf_dot / (ctx.query_norm * doc_norm)

    out[32], out[33], out[35] = _proximity_triple(
        [p for _, p in matched_positions], dl)
    out[34] = _bigram_hits(index, ctx, internal_id)
    return out


def _proximity_triple(plists: list[np.ndarray], dl: int):
    """(min cover window, mean min pair distance, pairs within the window)."""
    matched = len(plists)
    if matched < 2:
        return float(dl + 1), float(dl), 0.0
    window = float(_min_cover_window(plists))
    dists = []
    within = 0
    for a in range(matched):
        for b in range(a + 1, matched):
            d = _min_pair_distance(plists[a], plists[b])
            dists.append(d)
            if d <= PAIR_WINDOW:
                within += 1
    return window, sum(dists) / len(dists), float(within)


def _bigram_hits(index: InvertedIndex, ctx: _QueryContext, internal_id: int) -> float:
    hits = 0
    for a_tok, b_tok in ctx.bigrams:
        pa = index.positions(a_tok, internal_id)
        pb = index.positions(b_tok, internal_id)
        if len(pa) and len(pb):
            hits += int(np.intersect1d(pa + 1, pb).shape[0])
    return float(hits)


def _lexical_features_batch(index: InvertedIndex, ctx: _QueryContext,
                            doc_ids: np.ndarray) -> np.ndarray:
    """Vectorized catalog for many documents of one query.

    Term statistics and whole-match scores are computed as (terms x docs)
    arrays with the same elementwise operations as the reference path
    (term-order accumulation keeps the sums bitwise identical); only the
    positional features fall back to the per-document helpers, and only
    for documents with at least two matched terms or a matched bigram.
    """
    n = doc_ids.shape[0]
    out = np.zeros((n, LEXICAL_COUNT), dtype=np.float64)
    n_terms = len(ctx.terms)
    dl = index.doc_len[doc_ids].astype(np.float64)
    avgdl = index.avg_doc_len
    norm_len = (1.0 - BM25_B + BM25_B * (dl / avgdl)) if avgdl > 0 \
        else np.ones(n)
    dl_safe = np.where(dl > 0, dl, 1.0)

    tf = np.zeros((max(n_terms, 1), n), dtype=np.float64)
    match_pos = np.full((max(n_terms, 1), n), -1, dtype=np.int64)
    for t_i in range(n_terms):
        posting = ctx.postings[t_i]
        if posting is None:
            continue
        ids, pfs, _ = posting
        k = np.searchsorted(ids, doc_ids)
        k_safe = np.minimum(k, ids.shape[0] - 1)
        hit = ids[k_safe] == doc_ids
        tf[t_i, hit] = pfs[k_safe[hit]]
        match_pos[t_i, hit] = k_safe[hit]

    if n_terms:
        idf = np.array(ctx.idf)[:, None]
        cf = np.array(ctx.cf, dtype=np.float64)[:, None]
        tf_norm = np.where(dl[None, :] > 0, tf / dl_safe[None, :], 0.0)
        tfidf = tf * idf
        bm25 = np.where(tf > 0, idf * tf / (tf + BM25_K1 * norm_len[None, :]), 0.0)
        with np.errstate(divide="ignore"):
            # cf == 0 lanes produce log(0) and are discarded by the where.
            lm = np.where(cf > 0,
                          np.log((tf + LM_MU * cf / index.total_tokens)
                                 / (dl[None, :] + LM_MU)),
                          0.0)
        idf_rows = np.broadcast_to(idf, tf.shape)
        for k, stat in enumerate((tf, tf_norm, idf_rows, tfidf, bm25, lm)):
            total = stat[0].copy()
            for row in stat[1:]:
                total += row
            out[:, 4 * k] = total
            out[:, 4 * k + 1] = stat.min(axis=0)
            out[:, 4 * k + 2] = stat.max(axis=0)
            out[:, 4 * k + 3] = total / n_terms
        qw = np.array(ctx.query_weights)
        dot = qw[0] * tfidf[0]
        for t_i in range(1, n_terms):
            dot = dot + qw[t_i] * tfidf[t_i]
        matched = (tf > 0).sum(axis=0).astype(np.float64)
    else:
        dot = np.zeros(n)
        matched = np.zeros(n)

    out[:, 24] = out[:, 16]
    out[:, 25] = out[:, 20]
    out[:, 26] = float(len(ctx.tokens))
    out[:, 27] = dl
    out[:, 28] = matched
    out[:, 29] = matched / n_terms if n_terms else 0.0
    out[:, 30] = index.unique_terms[doc_ids]
    doc_norm = index.tfidf_norm[doc_ids]
    denom_ok = (ctx.query_norm > 0) & (doc_norm > 0)
    out[denom_ok, 31] = dot[denom_ok] / (ctx.query_norm * doc_norm[denom_ok])

    out[:, 32] = dl + 1.0
    out[:, 33] = dl
    for r in np.flatnonzero(matched >= 2):
        plists = [ctx.postings[t_i][2][match_pos[t_i, r]]
                  for t_i in range(n_terms) if match_pos[t_i, r] >= 0]
        out[r, 32], out[r, 33], out[r, 35] = _proximity_triple(plists, int(dl[r]))
    if ctx.bigrams:
        term_pos = {t: i for i, t in enumerate(ctx.terms)}
        maybe = np.zeros(n, dtype=bool)
        for a_tok, b_tok in ctx.bigrams:
            ia, ib = term_pos[a_tok], term_pos[b_tok]
            maybe |= (match_pos[ia] >= 0) & (match_pos[ib] >= 0)
        for r in np.flatnonzero(maybe):
            out[r, 34] = _bigram_hits(index, ctx, int(doc_ids[r]))
    return out


class FeatureExtractor:
    """Bundles the lexical index, embeddings, and registry for extraction."""

    def __init__(self, index: InvertedIndex, embeddings: EmbeddingMatrix,
                 registry: FeatureRegistry | None = None):
        self.index = index
        self.embeddings = embeddings
        self.registry = registry or build_registry(embeddings.dim)
        if self.registry.dim != embeddings.dim:
            raise ValueError("registry dimension does not match embeddings")
        if self.registry.lexical_count != LEXICAL_COUNT:
            raise ValueError("registry lexical block does not match the catalog")

    def tokenize_query(self, text: str) -> list[str]:
        return tokenize(text, stem=self.index.stemmed)

    def cosine_ranks(self, q_vec: np.ndarray, doc_ids: np.ndarray):
        """Cosines against q and 1-based ranks under (cosine desc, id asc)."""
        q = np.asarray(q_vec, dtype=np.float64)
        rows = self.embeddings.rows[doc_ids]
        norms = self.embeddings.norms[doc_ids]
        qn = np.linalg.norm(q)
        cos = np.zeros(len(doc_ids), dtype=np.float64)
        if qn > 0:
            nz = norms > 0
            cos[nz] = (rows[nz] @ q) / (norms[nz] * qn)
        order = np.lexsort((doc_ids, -cos))
        ranks = np.empty(len(doc_ids), dtype=np.int64)
        ranks[order] = np.arange(1, len(doc_ids) + 1)
        return cos, ranks

    def feature_matrix(self, query_tokens: list[str], q_vec: np.ndarray,
                       doc_ids: np.ndarray, needed: np.ndarray | None = None) -> np.ndarray:
        """Blended vectors for candidates as a matrix.

        Cosine ranks are computed over the whole candidate list; rows are
        materialized only for `needed` positions (default: all).
        """
        doc_ids = np.asarray(doc_ids, dtype=np.int64)
        cos, ranks = self.cosine_ranks(q_vec, doc_ids)
        if needed is None:
            needed = np.arange(len(doc_ids))
        ctx = _QueryContext(self.index, query_tokens)
        d = self.registry.dim
        q = np.asarray(q_vec, dtype=np.float64)
        out = np.empty((len(needed), self.registry.total), dtype=np.float64)
        sel = doc_ids[needed]
        rows = self.embeddings.rows[sel].astype(np.float64)
        out[:, :d] = q
        out[:, d:2 * d] = rows
        out[:, 2 * d:3 * d] = q - rows
        out[:, 3 * d] = cos[needed]
        out[:, 3 * d + 1] = ranks[needed].astype(np.float64)
        out[:, 3 * d + 2:] = _lexical_features_batch(self.index, ctx, sel)
        return out

    def candidate_features(self, query_tokens: list[str], q_vec: np.ndarray,
                           ranking: Ranking) -> list[BlendedVector]:
        """One blended vector per candidate, in first-stage order."""
        matrix = self.feature_matrix(query_tokens, q_vec, ranking.ids)
        h = self.registry.registry_hash
        return [BlendedVector(matrix[i], h) for i in range(matrix.shape[0])]


def write_features_tsv(matrix: np.ndarray, registry: FeatureRegistry, path,
                       row_ids=None) -> None:
    """Dump a feature matrix with named columns (debugging aid)."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if matrix.shape[1] != registry.total:
        raise ValueError(f"matrix width {matrix.shape[1]} does not match "
                         f"registry total {registry.total}")
    names = [registry.name(i) for i in range(registry.total)]
    with open(path, "w", encoding="utf-8") as f:
        f.write("row\t" + "\t".join(names) + "\n")
        for r in range(matrix.shape[0]):
            rid = row_ids[r] if row_ids is not None else r
            f.write(str(rid) + "\t"
                    + "\t".join(repr(float(v)) for v in matrix[r]) + "\n")
