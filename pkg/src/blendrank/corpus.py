"""Collection ingestion, tokenization, and the positional inverted index.

The inverted index is the statistics substrate for all lexical features:
per-term postings with positions, document lengths, and collection-level
counts (df, cf, total tokens).
"""

from __future__ import annotations

import io
import re
import struct
from dataclasses import dataclass, field

import numpy as np

INDEX_MAGIC = b"CRIX1"

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

_VOWELS = set("aeiou")


def _porter_stem(word: str) -> str:
    """Light Porter-style suffix stripping (plurals, -ed/-ing, common derivations)."""
    if len(word) < 3:
        return word
    if word.endswith("sses"):
        word = word[:-2]
    elif word.endswith("ies"):
        word = word[:-2]
    elif word.endswith("ss"):
        pass
    elif word.endswith("s"):
        word = word[:-1]
    if word.endswith("eed"):
        if len(word) > 4:
            word = word[:-1]
    elif word.endswith("ed"):
        stem = word[:-2]
        if any(c in _VOWELS for c in stem):
            word = stem
    elif word.endswith("ing"):
        stem = word[:-3]
        if any(c in _VOWELS for c in stem):
            word = stem
    for suffix, repl in (
        ("ational", "ate"), ("tional", "tion"), ("ization", "ize"),
        ("ation", "ate"), ("iveness", "ive"), ("fulness", "ful"),
        ("ousness", "ous"), ("alize", "al"), ("ical", "ic"),
        ("ful", ""), ("ness", ""),
    ):
        if word.endswith(suffix) and len(word) > len(suffix) + 2:
            word = word[: -len(suffix)] + repl
            break
    return word


def tokenize(text: str, stem: bool = False) -> list[str]:
    """Lowercase and split on non-alphanumeric runs; empty input gives [].

    No stopword removal. Stemming is off by default and applied per token
    when enabled.
    """
    tokens = _TOKEN_RE.findall(text.lower())
    if stem:
        tokens = [_porter_stem(t) for t in tokens]
    return tokens


@dataclass
class Corpus:
    """Ordered document collection with dense internal ids (0..N-1 in file order)."""

    doc_ids: list[str]
    texts: list[str]
    id_to_internal: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self.id_to_internal:
            self.id_to_internal = {d: i for i, d in enumerate(self.doc_ids)}

    def __len__(self) -> int:
        return len(self.doc_ids)


@dataclass
class QuerySet:
    """Ordered query collection keyed by query id."""

    query_ids: list[str]
    texts: list[str]

    def __len__(self) -> int:
        return len(self.query_ids)

    def subset(self, indices) -> "QuerySet":
        return QuerySet([self.query_ids[i] for i in indices],
                        [self.texts[i] for i in indices])


class Qrels:
    """Graded relevance judgments; an absent (query, doc) pair has grade 0."""

    def __init__(self, judgments: dict[tuple[str, str], int] | None = None):
        self.judgments = judgments or {}
        self._by_query: dict[str, dict[str, int]] = {}
        for (qid, did), grade in self.judgments.items():
            self._by_query.setdefault(qid, {})[did] = grade

    def get(self, query_id: str, doc_id: str) -> int:
        return self.judgments.get((query_id, doc_id), 0)

    def for_query(self, query_id: str) -> dict[str, int]:
        return self._by_query.get(query_id, {})

    def __len__(self) -> int:
        return len(self.judgments)


def load_collection(path) -> Corpus:
    """Read a TSV collection: one "doc_id<TAB>text" line per document."""
    doc_ids: list[str] = []
    texts: list[str] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}: malformed line {lineno}: expected doc_id<TAB>text")
            doc_id, text = line.split("\t", 1)
            if doc_id in seen:
                raise ValueError(f"{path}: duplicate doc_id {doc_id!r} at line {lineno}")
            seen.add(doc_id)
            doc_ids.append(doc_id)
            texts.append(text)
    if not doc_ids:
        raise ValueError(f"{path}: empty collection")
    return Corpus(doc_ids, texts)


def load_queries(path) -> QuerySet:
    """Read a TSV query file: one "query_id<TAB>text" line per query."""
    query_ids: list[str] = []
    texts: list[str] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}: malformed line {lineno}: expected query_id<TAB>text")
            qid, text = line.split("\t", 1)
            if qid in seen:
                raise ValueError(f"{path}: duplicate query_id {qid!r} at line {lineno}")
            seen.add(qid)
            query_ids.append(qid)
            texts.append(text)
    if not query_ids:
        raise ValueError(f"{path}: empty query file")
    return QuerySet(query_ids, texts)


def load_qrels(path) -> Qrels:
    """Read TREC qrels: whitespace-separated "query_id 0 doc_id grade" lines.

    Unknown query/doc ids are kept; downstream consumers filter them.
    """
    judgments: dict[tuple[str, str], int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(f"{path}: malformed qrels line {lineno}: expected 4 fields")
            qid, _, did, grade_s = parts
            try:
                grade = int(grade_s)
            except ValueError:
                raise ValueError(f"{path}: non-integer grade at line {lineno}: {grade_s!r}") from None
            if grade < 0:
                raise ValueError(f"{path}: negative grade at line {lineno}: {grade}")
            judgments[(qid, did)] = grade
    return Qrels(judgments)


class InvertedIndex:
    """Positional inverted index with collection statistics.

    postings maps term -> (ids, tfs, positions) where ids is a sorted int64
    array of internal document ids, tfs the matching term frequencies, and
    positions a list of sorted int32 position arrays, one per posting.
    """

    def __init__(self, postings: dict[str, tuple[np.ndarray, np.ndarray, list[np.ndarray]]],
                 doc_len: np.ndarray, stemmed: bool = False):
        self.postings = postings
        self.doc_len = np.asarray(doc_len, dtype=np.int64)
        self.stemmed = stemmed
        self.n_docs = int(self.doc_len.shape[0])
        self.total_tokens = int(self.doc_len.sum())
        self.avg_doc_len = self.total_tokens / self.n_docs if self.n_docs else 0.0
        self.df = {t: int(p[0].shape[0]) for t, p in postings.items()}
        self.cf = {t: int(p[1].sum()) for t, p in postings.items()}
        # Derived per-document statistics used by the lexical features.
        self.unique_terms = np.zeros(self.n_docs, dtype=np.int64)
        sq_norm = np.zeros(self.n_docs, dtype=np.float64)
        for term, (ids, tfs, _) in postings.items():
            self.unique_terms[ids] += 1
            idf = self.idf(term)
            w = tfs.astype(np.float64) * idf
            sq_norm[ids] += w * w
        self.tfidf_norm = np.sqrt(sq_norm)

    def idf(self, term: str) -> float:
        """ln((N - df + 0.5) / (df + 0.5) + 1); defined (and large) for unseen terms."""
        df = self.df.get(term, 0)
        return float(np.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0))

    def posting(self, term: str):
        return self.postings.get(term)

    def tf(self, term: str, internal_id: int) -> int:
        p = self.postings.get(term)
        if p is None:
            return 0
        ids, tfs, _ = p
        k = int(np.searchsorted(ids, internal_id))
        if k < ids.shape[0] and ids[k] == internal_id:
            return int(tfs[k])
        return 0

    def positions(self, term: str, internal_id: int) -> np.ndarray:
        p = self.postings.get(term)
        if p is None:
            return np.empty(0, dtype=np.int32)
        ids, _, pos = p
        k = int(np.searchsorted(ids, internal_id))
        if k < ids.shape[0] and ids[k] == internal_id:
            return pos[k]
        return np.empty(0, dtype=np.int32)


def build_inverted_index(corpus: Corpus, stem: bool = False) -> InvertedIndex:
    """Tokenize every document and build the positional index."""
    if len(corpus) == 0:
        raise ValueError("cannot index an empty corpus")
    acc: dict[str, list[tuple[int, list[int]]]] = {}
    doc_len = np.zeros(len(corpus), dtype=np.int64)
    for internal_id, text in enumerate(corpus.texts):
        tokens = tokenize(text, stem=stem)
        doc_len[internal_id] = len(tokens)
        by_term: dict[str, list[int]] = {}
        for pos, tok in enumerate(tokens):
            by_term.setdefault(tok, []).append(pos)
        for term, positions in by_term.items():
            acc.setdefault(term, []).append((internal_id, positions))
    postings = {}
    for term, entries in acc.items():
        ids = np.array([e[0] for e in entries], dtype=np.int64)
        tfs = np.array([len(e[1]) for e in entries], dtype=np.int64)
        pos = [np.array(e[1], dtype=np.int32) for e in entries]
        postings[term] = (ids, tfs, pos)
    return InvertedIndex(postings, doc_len, stemmed=stem)


def save_inverted_index(index: InvertedIndex, path) -> None:
    """Serialize to the versioned CRIX1 binary format (terms in sorted order)."""
    buf = io.BytesIO()
    buf.write(INDEX_MAGIC)
    buf.write(struct.pack("<BIQ", 1 if index.stemmed else 0, index.n_docs, index.total_tokens))
    buf.write(index.doc_len.astype("<i8").tobytes())
    terms = sorted(index.postings)
    buf.write(struct.pack("<I", len(terms)))
    for term in terms:
        raw = term.encode("utf-8")
        ids, tfs, pos = index.postings[term]
        buf.write(struct.pack("<HI", len(raw), ids.shape[0]))
        buf.write(raw)
        buf.write(ids.astype("<i8").tobytes())
        buf.write(tfs.astype("<i8").tobytes())
        for p in pos:
            buf.write(p.astype("<i4").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_inverted_index(path) -> InvertedIndex:
    with open(path, "rb") as f:
        data = f.read()
    if data[:5] != INDEX_MAGIC:
        raise ValueError(f"{path}: bad magic, not a CRIX1 index")
    off = 5
    stemmed, n_docs, _total = struct.unpack_from("<BIQ", data, off)
    off += struct.calcsize("<BIQ")
    doc_len = np.frombuffer(data, dtype="<i8", count=n_docs, offset=off).copy()
    off += 8 * n_docs
    (n_terms,) = struct.unpack_from("<I", data, off)
    off += 4
    postings = {}
    for _ in range(n_terms):
        term_len, df = struct.unpack_from("<HI", data, off)
        off += struct.calcsize("<HI")
        term = data[off:off + term_len].decode("utf-8")
        off += term_len
        ids = np.frombuffer(data, dtype="<i8", count=df, offset=off).copy()
        off += 8 * df
        tfs = np.frombuffer(data, dtype="<i8", count=df, offset=off).copy()
        off += 8 * df
        pos = []
        for tf in tfs:
            p = np.frombuffer(data, dtype="<i4", count=int(tf), offset=off).copy()
            off += 4 * int(tf)
            pos.append(p)
        postings[term] = (ids, tfs, pos)
    return InvertedIndex(postings, doc_len, stemmed=bool(stemmed))
