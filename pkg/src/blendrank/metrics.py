"""Ranking metrics, TREC run file I/O, and paired significance testing.

nDCG uses exponential gain (2^grade - 1) and a log2(1 + rank) discount by
default; a linear-gain variant is available. The Student-t CDF needed for
the paired t-test is implemented here via the regularized incomplete beta
continued fraction, so there is no external stats dependency.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .corpus import Qrels


def _gain(grade: float, exponential: bool) -> float:
    return (2.0 ** grade - 1.0) if exponential else float(grade)


def dcg_at_k(grades, k: int, exponential: bool = True) -> float:
    """Discounted cumulative gain of a ranked grade list, truncated at k."""
    total = 0.0
    for r, g in enumerate(grades[:k], start=1):
        total += _gain(g, exponential) / math.log2(1.0 + r)
    return total


def ndcg_at_k(ranked_grades, all_grades, k: int, exponential: bool = True) -> float:
    """DCG of the ranking over the ideal DCG of all judged grades; 0 when
    the query has no relevant document."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ideal = dcg_at_k(sorted(all_grades, reverse=True), k, exponential)
    if ideal == 0.0:
        return 0.0
    return dcg_at_k(ranked_grades, k, exponential) / ideal


def mrr_at_k(ranked_grades, k: int, threshold: int = 1) -> float:
    """Reciprocal rank of the first document with grade >= threshold in the
    top k; 0 if none."""
    for r, g in enumerate(ranked_grades[:k], start=1):
        if g >= threshold:
            return 1.0 / r
    return 0.0


def recall_at_k(ranked_doc_ids, relevant: set, k: int) -> float:
    """Fraction of the relevant set retrieved in the top k; 0 for queries
    with an empty relevant set."""
    if not relevant:
        return 0.0
    hits = sum(1 for d in ranked_doc_ids[:k] if d in relevant)
    return hits / len(relevant)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b) to better than 1e-10 absolute error."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, dof: int) -> float:
    """Two-sided tail probability of Student's t with `dof` degrees of freedom."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if math.isinf(t):
        return 0.0
    x = dof / (dof + t * t)
    return regularized_incomplete_beta(x, dof / 2.0, 0.5)


@dataclass
class TTestResult:
    t: float
    p: float


def paired_t_test(a, b) -> TTestResult:
    """Two-sided paired t-test on matched per-query values.

    Uses the sample standard deviation of the differences. Zero-variance
    differences degenerate to p = 1 when the mean difference is 0 and
    p = 0 otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    n = a.shape[0]
    if n < 2:
        raise ValueError("need at least 2 paired observations")
    d = a - b
    mean = float(d.mean())
    var = float(d.var(ddof=1))
    if var == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0)
        return TTestResult(math.copysign(math.inf, mean), 0.0)
    t = mean / math.sqrt(var / n)
    return TTestResult(t, student_t_two_sided_p(t, n - 1))


def bonferroni(p_values, m: int) -> list[float]:
    """Family-wise correction: each p is multiplied by m and clamped at 1."""
    p_values = list(p_values)
    if m < len(p_values):
        raise ValueError("m must be at least the number of comparisons")
    return [min(1.0, m * p) for p in p_values]


@dataclass
class DiffBuckets:
    """Per-query metric differences a - b, bucketed."""

    n_queries: int
    degraded: int
    unchanged: int
    improved: int
    improved_at_least: int
    threshold: float

    def pct(self, count: int) -> float:
        return 100.0 * count / self.n_queries if self.n_queries else 0.0

    @property
    def non_degrading_pct(self) -> float:
        return self.pct(self.unchanged + self.improved)


def per_query_diff(a: dict[str, float], b: dict[str, float],
                   threshold: float = 0.03) -> DiffBuckets:
    """Bucket per-query diffs into degraded (< 0), unchanged (= 0),
    improved (> 0), and improved by at least `threshold`."""
    if set(a) != set(b):
        raise ValueError("query sets differ between the two reports")
    degraded = unchanged = improved = improved_at_least = 0
    for qid, va in a.items():
        diff = va - b[qid]
        if diff < 0:
            degraded += 1
        elif diff == 0:
            unchanged += 1
        else:
            improved += 1
            if diff >= threshold:
                improved_at_least += 1
    return DiffBuckets(len(a), degraded, unchanged, improved,
                       improved_at_least, threshold)


class RunList:
    """Per-query ranked (doc_id, score) lists plus a run tag."""

    def __init__(self, tag: str = "run"):
        self.tag = tag
        self.entries: dict[str, list[tuple[str, float]]] = {}

    def add(self, query_id: str, ranked: list[tuple[str, float]]) -> None:
        self.entries[query_id] = list(ranked)

    def query_ids(self) -> list[str]:
        return list(self.entries)

    def doc_ids(self, query_id: str) -> list[str]:
        return [d for d, _ in self.entries[query_id]]

    def __eq__(self, other) -> bool:
        return (isinstance(other, RunList) and self.tag == other.tag
                and self.entries == other.entries)


def write_run(run: RunList, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid, ranked in run.entries.items():
            for rank, (did, score) in enumerate(ranked, start=1):
                f.write(f"{qid} Q0 {did} {rank} {float(score)!r} {run.tag}\n")


def load_run(path) -> RunList:
    run = None
    per_query_rank: dict[str, int] = {}
    per_query_score: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValueError(f"{path}: malformed run line {lineno}: expected 6 fields")
            qid, _, did, rank_s, score_s, tag = parts
            try:
                rank = int(rank_s)
                score = float(score_s)
            except ValueError:
                raise ValueError(f"{path}: bad rank/score at line {lineno}") from None
            if run is None:
                run = RunList(tag)
            expected = per_query_rank.get(qid, 0) + 1
            if rank != expected:
                raise ValueError(f"{path}: rank gap for query {qid} at line {lineno}: "
                                 f"expected {expected}, got {rank}")
            if qid in per_query_score and score > per_query_score[qid]:
                warnings.warn(f"{path}: non-monotone scores for query {qid} "
                              f"at line {lineno}")
            per_query_rank[qid] = rank
            per_query_score[qid] = score
            run.entries.setdefault(qid, []).append((did, score))
    return run if run is not None else RunList()


@dataclass
class MetricReport:
    """Per-query metric values and their means."""

    per_query: dict[str, dict[str, float]]
    means: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.means:
            self.means = {
                m: float(np.mean(list(vals.values()))) if vals else 0.0
                for m, vals in self.per_query.items()
            }

    def to_csv(self, path) -> None:
        metrics = list(self.per_query)
        qids = list(next(iter(self.per_query.values()), {}))
        with open(path, "w", encoding="utf-8") as f:
            f.write("query_id," + ",".join(metrics) + "\n")
            for qid in qids:
                row = ",".join(repr(self.per_query[m][qid]) for m in metrics)
                f.write(f"{qid},{row}\n")
            f.write("MEAN," + ",".join(repr(self.means[m]) for m in metrics) + "\n")

    def format_table(self) -> str:
        lines = ["metric            mean", "-" * 26]
        for m, v in self.means.items():
            lines.append(f"{m:<16}{v:>10.4f}")
        return "\n".join(lines)


def evaluate_run(run: RunList, qrels: Qrels, ndcg_k: int = 10, mrr_k: int = 10,
                 recall_k: int = 1000, rel_threshold: int = 1,
                 exponential: bool = True) -> MetricReport:
    """Score a run against judgments with the standard metric trio."""
    ndcg_name = f"ndcg@{ndcg_k}"
    mrr_name = f"mrr@{mrr_k}"
    recall_name = f"recall@{recall_k}"
    per_query = {ndcg_name: {}, mrr_name: {}, recall_name: {}}
    unjudged = []
    for qid in run.query_ids():
        judged = qrels.for_query(qid)
        ranked_docs = run.doc_ids(qid)
        ranked_grades = [judged.get(d, 0) for d in ranked_docs]
        all_grades = list(judged.values())
        relevant = {d for d, g in judged.items() if g >= rel_threshold}
        if not relevant:
            unjudged.append(qid)
        per_query[ndcg_name][qid] = ndcg_at_k(ranked_grades, all_grades, ndcg_k,
                                              exponential)
        per_query[mrr_name][qid] = mrr_at_k(ranked_grades, mrr_k, rel_threshold)
        per_query[recall_name][qid] = recall_at_k(ranked_docs, relevant, recall_k)
    return MetricReport(per_query, metadata={
        "cutoffs": {"ndcg": ndcg_k, "mrr": mrr_k, "recall": recall_k},
        "rel_threshold": rel_threshold,
        "queries_without_relevants": unjudged,
    })
