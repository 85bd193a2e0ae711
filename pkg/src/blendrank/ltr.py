"""LambdaMART: lambda gradients from swap-deltas of truncated nDCG, boosted
regression trees with exact split search, and early stopping on a
validation set.

Trees are grown best-first to a leaf budget. Split search is exact (every
boundary between distinct sorted feature values is a candidate, with the
midpoint as threshold); this keeps the brute-force oracle in the tests
exact rather than approximate. The per-feature sort order is computed once
per training run and maintained through splits by stable partition.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .corpus import Corpus, Qrels, QuerySet, tokenize
from .features import FeatureExtractor, FeatureMask
from .ivf import Ranking

EPS = 1e-9
LEAF_CLAMP = 100.0

MODEL_FORMAT = "blendrank-model"
MODEL_VERSION = 1


@dataclass
class TrainParams:
    """Boosting hyperparameters.

    learning_rate is restricted to [0.01, 0.2]. min_sum_hessian_leaf and
    min_data_leaf have production tuning ranges of [10, 150] and
    [100, 5000]; smaller values are accepted so that small datasets can be
    trained at all.
    """

    learning_rate: float = 0.1
    num_leaves: int = 64
    min_sum_hessian_leaf: float = 10.0
    min_data_leaf: int = 100
    patience: int = 30
    max_trees: int = 500
    truncation: int = 10
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (0.01 <= self.learning_rate <= 0.2):
            raise ValueError("learning_rate must be in [0.01, 0.2]")
        if self.num_leaves < 1:
            raise ValueError("num_leaves must be >= 1")
        if self.min_sum_hessian_leaf < 0:
            raise ValueError("min_sum_hessian_leaf must be >= 0")
        if self.min_data_leaf < 1:
            raise ValueError("min_data_leaf must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_trees < 0:
            raise ValueError("max_trees must be >= 0")
        if self.truncation < 1:
            raise ValueError("truncation must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


@dataclass
class LtrGroup:
    """All candidates of one query: features, integer labels, document ids."""

    query_id: str
    features: np.ndarray
    labels: np.ndarray
    doc_ids: np.ndarray


class LtrDataset:
    """Per-query groups with a common feature width."""

    def __init__(self, groups: list[LtrGroup]):
        if not groups:
            raise ValueError("dataset must contain at least one group")
        width = groups[0].features.shape[1]
        for g in groups:
            if g.features.shape[0] == 0:
                raise ValueError(f"group {g.query_id} is empty")
            if g.features.shape[1] != width:
                raise ValueError("inconsistent feature width across groups")
            if (g.labels < 0).any():
                raise ValueError("labels must be non-negative")
        self.groups = groups
        self.feature_count = width

    def __len__(self) -> int:
        return len(self.groups)

    def stacked(self):
        """(X, labels, doc_ids, group boundary offsets)."""
        X = np.vstack([g.features for g in self.groups])
        labels = np.concatenate([g.labels for g in self.groups])
        doc_ids = np.concatenate([g.doc_ids for g in self.groups])
        sizes = [g.features.shape[0] for g in self.groups]
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        return X, labels, doc_ids, offsets


def build_training_set(queries: QuerySet, qrels: Qrels,
                       rankings: dict[str, Ranking], corpus: Corpus,
                       extractor: FeatureExtractor,
                       query_vectors: dict[str, np.ndarray],
                       n_neg: int = 30, seed: int = 0) -> LtrDataset:
    """Positives are all judged-relevant documents (retrieved or not);
    negatives are sampled uniformly without replacement from the first-stage
    candidates, labeled 0. Queries without a relevant document are dropped.

    Features are computed over the merged candidate list (first-stage
    ranking plus any missing relevant documents) so that the rank feature
    matches what the extractor produces at query time.
    """
    if n_neg < 0:
        raise ValueError("n_neg must be >= 0")
    rng = np.random.default_rng(seed)
    groups: list[LtrGroup] = []
    for qid, text in zip(queries.query_ids, queries.texts):
        ranking = rankings.get(qid)
        if ranking is None:
            continue
        relevant = {}
        for did, grade in qrels.for_query(qid).items():
            internal = corpus.id_to_internal.get(did)
            if internal is not None and grade > 0:
                relevant[internal] = grade
        if not relevant:
            continue
        cand = ranking.ids
        missing = sorted(set(relevant) - set(cand.tolist()))
        merged = np.concatenate([cand, np.array(missing, dtype=np.int64)]) if missing else cand
        pool = np.array([i for i in cand.tolist() if i not in relevant], dtype=np.int64)
        take = min(n_neg, pool.shape[0])
        negatives = pool[rng.choice(pool.shape[0], size=take, replace=False)] if take else pool[:0]
        rel_ids = sorted(relevant)
        group_ids = np.concatenate([np.array(rel_ids, dtype=np.int64), negatives])
        labels = np.concatenate([
            np.array([relevant[i] for i in rel_ids], dtype=np.int64),
            np.zeros(take, dtype=np.int64),
        ])
        pos_of = {int(d): p for p, d in enumerate(merged)}
        needed = np.array([pos_of[int(d)] for d in group_ids], dtype=np.int64)
        tokens = extractor.tokenize_query(text)
        feats = extractor.feature_matrix(tokens, query_vectors[qid], merged, needed)
        groups.append(LtrGroup(qid, feats, labels, group_ids))
    return LtrDataset(groups)


def _gains(labels: np.ndarray) -> np.ndarray:
    return np.power(2.0, labels.astype(np.float64)) - 1.0


def ideal_dcg(labels, truncation: int) -> float:
    g = np.sort(_gains(np.asarray(labels)))[::-1][:truncation]
    ranks = np.arange(1, g.shape[0] + 1, dtype=np.float64)
    return float(np.sum(g / np.log2(1.0 + ranks)))


def _ranks_from_scores(scores: np.ndarray, tie_ids: np.ndarray | None = None) -> np.ndarray:
    """1-based ranks under (score desc, tie id asc); index order breaks
    remaining ties."""
    n = scores.shape[0]
    if tie_ids is None:
        tie_ids = np.arange(n)
    order = np.lexsort((np.arange(n), tie_ids, -scores))
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(1, n + 1)
    return ranks


def ndcg_from_scores(scores: np.ndarray, labels: np.ndarray, k: int,
                     tie_ids: np.ndarray | None = None) -> float:
    """Truncated nDCG of the ordering induced by scores; 0 when no document
    has a positive gain."""
    idcg = ideal_dcg(labels, k)
    if idcg == 0.0:
        return 0.0
    ranks = _ranks_from_scores(np.asarray(scores, dtype=np.float64), tie_ids)
    within = ranks <= k
    g = _gains(np.asarray(labels))[within]
    r = ranks[within].astype(np.float64)
    return float(np.sum(g / np.log2(1.0 + r)) / idcg)


def delta_ndcg(labels, current_ranks, i: int, j: int, truncation: int = 10) -> float:
    """|nDCG@truncation change| if the documents at positions i and j swap ranks."""
    if i == j:
        raise ValueError("i and j must differ")
    idcg = ideal_dcg(labels, truncation)
    if idcg == 0.0:
        return 0.0
    labels = np.asarray(labels)
    ranks = np.asarray(current_ranks)
    gi, gj = _gains(labels[[i, j]])
    di = 1.0 / math.log2(1.0 + ranks[i]) if ranks[i] <= truncation else 0.0
    dj = 1.0 / math.log2(1.0 + ranks[j]) if ranks[j] <= truncation else 0.0
    return abs((gi - gj) * (di - dj)) / idcg


def compute_lambdas(scores: np.ndarray, labels: np.ndarray, sigma: float = 1.0,
                    truncation: int = 10, tie_ids: np.ndarray | None = None):
    """Pairwise lambda gradients and hessians for one query group.

    For every pair with label_i > label_j:
        rho      = 1 / (1 + exp(sigma * (s_i - s_j)))
        lambda_i += sigma * |dNDCG| * rho        (and lambda_j loses the same)
        hess_i,j += sigma^2 * |dNDCG| * rho * (1 - rho)

    Accumulation runs in tie-id order, so the result is bitwise equivariant
    under permutations of the group's documents.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    n = scores.shape[0]
    idcg = ideal_dcg(labels, truncation)
    if idcg == 0.0 or n < 2:
        return np.zeros(n), np.zeros(n)
    if tie_ids is None:
        tie_ids = np.arange(n)
    canon = np.argsort(np.asarray(tie_ids), kind="stable")
    scores_c = scores[canon]
    labels_c = labels[canon]
    ranks = _ranks_from_scores(scores_c, np.asarray(tie_ids)[canon])
    g = _gains(labels_c)
    disc = np.where(ranks <= truncation, 1.0 / np.log2(1.0 + ranks), 0.0)
    delta = np.abs(g[:, None] - g[None, :]) * np.abs(disc[:, None] - disc[None, :]) / idcg
    better = labels_c[:, None] > labels_c[None, :]
    with np.errstate(over="ignore"):
        rho = 1.0 / (1.0 + np.exp(sigma * (scores_c[:, None] - scores_c[None, :])))
    lam_pair = np.where(better, sigma * delta * rho, 0.0)
    hes_pair = np.where(better, sigma * sigma * delta * rho * (1.0 - rho), 0.0)
    lam_c = lam_pair.sum(axis=1) - lam_pair.sum(axis=0)
    hes_c = hes_pair.sum(axis=1) + hes_pair.sum(axis=0)
    lambdas = np.empty(n)
    hessians = np.empty(n)
    lambdas[canon] = lam_c
    hessians[canon] = hes_c
    return lambdas, hessians


@dataclass
class RegressionTree:
    """Binary tree in flat arrays; feature -1 marks a leaf. The predicate
    value <= threshold descends left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict_one(self, x) -> float:
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if x[self.feature[i]] <= self.threshold[i] else self.right[i]
        return float(self.value[i])

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                break
            rows = np.flatnonzero(active)
            vals = X[rows, feat[rows]]
            go_left = vals <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])
        return self.value[node]


class _PendingNode:
    __slots__ = ("sorted_idx", "best_gain", "best_feature", "best_threshold",
                 "best_pos", "sum_lambda", "sum_hessian", "serial")

    def __init__(self, sorted_idx, serial):
        self.sorted_idx = sorted_idx
        self.serial = serial
        self.best_gain = -np.inf


class _TreeBuilder:
    """Grows one regression tree per call over a fixed feature matrix.

    The global per-feature sort order is computed once; children inherit
    the parent's order by stable partition, so split search never re-sorts.
    Tied feature values are ordered by row_keys so that per-node sums run
    in a canonical order regardless of how the caller ordered the rows.
    """

    def __init__(self, X: np.ndarray, params: TrainParams,
                 row_keys: np.ndarray | None = None):
        self.X = np.asarray(X, dtype=np.float64)
        self.n, self.n_features = self.X.shape
        self.params = params
        if row_keys is None:
            self.presort = np.argsort(self.X, axis=0, kind="stable").T.copy()
        else:
            self.presort = np.empty((self.n_features, self.n), dtype=np.int64)
            for f in range(self.n_features):
                self.presort[f] = np.lexsort((row_keys, self.X[:, f]))
        self._col = np.arange(self.n_features)[:, None]
        self._membership = np.zeros(self.n, dtype=bool)

    def _leaf_value(self, sum_lambda: float, sum_hessian: float) -> float:
        w = sum_lambda / (sum_hessian + EPS)
        return float(np.clip(w, -LEAF_CLAMP, LEAF_CLAMP))

    def _find_best_split(self, node: _PendingNode, lambdas, hessians):
        idx = node.sorted_idx
        m = idx.shape[1]
        node.sum_lambda = float(lambdas[idx[0]].sum())
        node.sum_hessian = float(hessians[idx[0]].sum())
        if m < 2 or m < 2 * self.params.min_data_leaf:
            return
        vals = self.X[idx, self._col]
        lam = np.cumsum(lambdas[idx], axis=1)[:, :-1]
        hes = np.cumsum(hessians[idx], axis=1)[:, :-1]
        tot_l, tot_h = node.sum_lambda, node.sum_hessian
        lam_r = tot_l - lam
        hes_r = tot_h - hes
        parent_term = tot_l * tot_l / (tot_h + EPS)
        gains = lam * lam / (hes + EPS) + lam_r * lam_r / (hes_r + EPS) - parent_term
        n_left = np.arange(1, m)
        ok = (vals[:, 1:] != vals[:, :-1])
        ok &= (n_left >= self.params.min_data_leaf) & (m - n_left >= self.params.min_data_leaf)
        ok &= (hes >= self.params.min_sum_hessian_leaf) & (hes_r >= self.params.min_sum_hessian_leaf)
        gains = np.where(ok, gains, -np.inf)
        best_pos = np.argmax(gains, axis=1)
        best_per_feature = gains[np.arange(self.n_features), best_pos]
        f = int(np.argmax(best_per_feature))
        g = float(best_per_feature[f])
        if g <= 0.0 or not np.isfinite(g):
            return
        pos = int(best_pos[f])
        node.best_gain = g
        node.best_feature = f
        node.best_threshold = (vals[f, pos] + vals[f, pos + 1]) / 2.0
        node.best_pos = pos

    def _split(self, node: _PendingNode, serial_l: int, serial_r: int):
        f, pos = node.best_feature, node.best_pos
        left_rows = node.sorted_idx[f, :pos + 1]
        self._membership[left_rows] = True
        goes_left = self._membership[node.sorted_idx]
        n_left = pos + 1
        left_idx = node.sorted_idx[goes_left].reshape(self.n_features, n_left)
        right_idx = node.sorted_idx[~goes_left].reshape(
            self.n_features, node.sorted_idx.shape[1] - n_left)
        self._membership[left_rows] = False
        return _PendingNode(left_idx, serial_l), _PendingNode(right_idx, serial_r)

    def fit(self, lambdas: np.ndarray, hessians: np.ndarray) -> RegressionTree:
        feature, threshold, left, right, value, gain = [], [], [], [], [], []

        def new_node():
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            gain.append(0.0)
            return len(feature) - 1

        serial = 0
        root = _PendingNode(self.presort.copy(), serial)
        self._find_best_split(root, lambdas, hessians)
        root_slot = new_node()
        slots = {root.serial: root_slot}
        heap = []
        if np.isfinite(root.best_gain):
            heapq.heappush(heap, (-root.best_gain, root.serial, root))
        else:
            value[root_slot] = self._leaf_value(root.sum_lambda, root.sum_hessian)
        n_leaves = 1
        while heap and n_leaves < self.params.num_leaves:
            _, _, node = heapq.heappop(heap)
            slot = slots.pop(node.serial)
            serial += 1
            l_node = serial
            serial += 1
            r_node = serial
            child_l, child_r = self._split(node, l_node, r_node)
            feature[slot] = node.best_feature
            threshold[slot] = float(node.best_threshold)
            gain[slot] = float(node.best_gain)
            slot_l = new_node()
            slot_r = new_node()
            left[slot] = slot_l
            right[slot] = slot_r
            n_leaves += 1
            for child, child_slot in ((child_l, slot_l), (child_r, slot_r)):
                self._find_best_split(child, lambdas, hessians)
                slots[child.serial] = child_slot
                if np.isfinite(child.best_gain):
                    heapq.heappush(heap, (-child.best_gain, child.serial, child))
                else:
                    value[child_slot] = self._leaf_value(child.sum_lambda, child.sum_hessian)
        # Anything still splittable but over the leaf budget becomes a leaf.
        for _, _, node in heap:
            slot = slots[node.serial]
            value[slot] = self._leaf_value(node.sum_lambda, node.sum_hessian)
        return RegressionTree(
            np.array(feature, dtype=np.int64),
            np.array(threshold, dtype=np.float64),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(value, dtype=np.float64),
            np.array(gain, dtype=np.float64),
        )


def fit_tree(X: np.ndarray, lambdas: np.ndarray, hessians: np.ndarray,
             params: TrainParams) -> RegressionTree:
    """Grow a single tree (standalone entry point; training reuses a builder)."""
    return _TreeBuilder(np.asarray(X, dtype=np.float64), params).fit(
        np.asarray(lambdas, dtype=np.float64), np.asarray(hessians, dtype=np.float64))


@dataclass
class Ensemble:
    """Boosted forest; the model score is sum(learning_rate * tree(x)) in
    tree order."""

    trees: list[RegressionTree]
    learning_rate: float
    feature_count: int
    mask_variant: str = "full"
    registry_hash: str = ""
    mask_included: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def score_one(self, x) -> float:
        s = 0.0
        for t in self.trees:
            s += self.learning_rate * t.predict_one(x)
        return s

    def score_batch(self, X: np.ndarray) -> np.ndarray:
        scores = np.zeros(X.shape[0], dtype=np.float64)
        for t in self.trees:
            scores += self.learning_rate * t.predict_batch(X)
        return scores


def _mean_valid_ndcg(scores: np.ndarray, labels: np.ndarray, doc_ids: np.ndarray,
                     offsets: np.ndarray, k: int) -> float:
    vals = []
    for g in range(offsets.shape[0] - 1):
        a, b = offsets[g], offsets[g + 1]
        vals.append(ndcg_from_scores(scores[a:b], labels[a:b], k, doc_ids[a:b]))
    return float(np.mean(vals))


def train(train_ds: LtrDataset, valid_ds: LtrDataset, params: TrainParams,
          mask: FeatureMask | None = None) -> Ensemble:
    """Boosting loop with early stopping.

    After each tree the mean nDCG@truncation on the validation set is
    evaluated; training stops when it fails to improve for `patience`
    consecutive trees (or at max_trees), and the ensemble is truncated at
    the best validation iteration.
    """
    if train_ds.feature_count != valid_ds.feature_count:
        raise ValueError("train and valid datasets have different feature widths")
    X, labels, doc_ids, offsets = train_ds.stacked()
    Xv, labels_v, doc_ids_v, offsets_v = valid_ds.stacked()
    group_of = np.repeat(np.arange(offsets.shape[0] - 1), np.diff(offsets))
    row_keys = np.empty(X.shape[0], dtype=np.int64)
    row_keys[np.lexsort((doc_ids, group_of))] = np.arange(X.shape[0])
    builder = _TreeBuilder(X, params, row_keys)
    lr = params.learning_rate
    scores = np.zeros(X.shape[0])
    scores_v = np.zeros(Xv.shape[0])
    trees: list[RegressionTree] = []
    valid_log: list[float] = []
    best_metric = -np.inf
    best_iter = 0
    bad_rounds = 0
    n_groups = offsets.shape[0] - 1
    lambdas = np.empty(X.shape[0])
    hessians = np.empty(X.shape[0])
    for _ in range(params.max_trees):
        for g in range(n_groups):
            a, b = offsets[g], offsets[g + 1]
            lambdas[a:b], hessians[a:b] = compute_lambdas(
                scores[a:b], labels[a:b], params.sigma, params.truncation, doc_ids[a:b])
        tree = builder.fit(lambdas, hessians)
        trees.append(tree)
        scores += lr * tree.predict_batch(X)
        scores_v += lr * tree.predict_batch(Xv)
        metric = _mean_valid_ndcg(scores_v, labels_v, doc_ids_v, offsets_v,
                                  params.truncation)
        valid_log.append(metric)
        if metric > best_metric:
            best_metric = metric
            best_iter = len(trees)
            bad_rounds = 0
        else:
            bad_rounds += 1
            if bad_rounds >= params.patience:
                break
    trees = trees[:best_iter]
    metadata = {
        "params": asdict(params),
        "valid_log": valid_log,
        "best_iteration": best_iter,
        "best_valid_metric": best_metric if best_iter else 0.0,
    }
    return Ensemble(trees, lr, train_ds.feature_count,
                    mask.variant if mask else "full",
                    mask.registry_hash if mask else "",
                    mask.included.copy() if mask else None,
                    metadata)


def random_search_tune(train_ds: LtrDataset, valid_ds: LtrDataset, n_trials: int,
                       seed: int, base: TrainParams | None = None,
                       lr_range=(0.01, 0.2), hessian_range=(10.0, 150.0),
                       min_data_range=(100, 5000)) -> TrainParams:
    """Uniform random search over learning rate, hessian floor, and leaf
    size; returns the configuration with the best validation nDCG."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    base = base or TrainParams()
    rng = np.random.default_rng(seed)
    best_params = None
    best_metric = -np.inf
    for _ in range(n_trials):
        cand = replace(
            base,
            learning_rate=float(rng.uniform(*lr_range)),
            min_sum_hessian_leaf=float(rng.uniform(*hessian_range)),
            min_data_leaf=int(rng.integers(min_data_range[0], min_data_range[1] + 1)),
        )
        ensemble = train(train_ds, valid_ds, cand)
        metric = ensemble.metadata["best_valid_metric"]
        if metric > best_metric:
            best_metric = metric
            best_params = cand
    return best_params


def feature_gains(ensemble: Ensemble) -> dict[int, float]:
    """Total realized split gain per feature id, summed over all trees."""
    gains: dict[int, float] = {}
    for tree in ensemble.trees:
        for i in range(tree.n_nodes):
            f = int(tree.feature[i])
            if f >= 0:
                gains[f] = gains.get(f, 0.0) + float(tree.gain[i])
    return gains


def _tree_to_dict(t: RegressionTree) -> dict:
    return {
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "value": t.value.tolist(),
        "gain": t.gain.tolist(),
    }


def _tree_from_dict(d: dict) -> RegressionTree:
    return RegressionTree(
        np.array(d["feature"], dtype=np.int64),
        np.array(d["threshold"], dtype=np.float64),
        np.array(d["left"], dtype=np.int64),
        np.array(d["right"], dtype=np.int64),
        np.array(d["value"], dtype=np.float64),
        np.array(d["gain"], dtype=np.float64),
    )


def save_model(ensemble: Ensemble, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "learning_rate": ensemble.learning_rate,
        "feature_count": ensemble.feature_count,
        "mask_variant": ensemble.mask_variant,
        "registry_hash": ensemble.registry_hash,
        "mask_included": (ensemble.mask_included.tolist()
                          if ensemble.mask_included is not None else None),
        "metadata": ensemble.metadata,
        "trees": [_tree_to_dict(t) for t in ensemble.trees],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_model(path) -> Ensemble:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    included = doc.get("mask_included")
    return Ensemble(
        [_tree_from_dict(d) for d in doc["trees"]],
        doc["learning_rate"],
        doc["feature_count"],
        doc.get("mask_variant", "full"),
        doc.get("registry_hash", ""),
        np.array(included, dtype=np.int64) if included is not None else None,
        doc.get("metadata", {}),
    )


def write_train_log(ensemble: Ensemble, path) -> None:
    """Training log as CSV: iteration, validation nDCG."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("iteration,valid_ndcg\n")
        for i, v in enumerate(ensemble.metadata.get("valid_log", []), start=1):
            f.write(f"{i},{v!r}\n")


def save_dataset(dataset: LtrDataset, path, registry_dim: int | None = None) -> None:
    """Persist a dataset (stacked npz); features are stored unmasked."""
    X, labels, doc_ids, offsets = dataset.stacked()
    query_ids = np.array([g.query_id for g in dataset.groups])
    np.savez(path, features=X, labels=labels, doc_ids=doc_ids, offsets=offsets,
             query_ids=query_ids,
             registry_dim=np.int64(registry_dim if registry_dim is not None else -1))


def load_dataset(path) -> tuple[LtrDataset, int | None]:
    """Load a dataset written by save_dataset; returns (dataset, registry_dim)."""
    with np.load(path, allow_pickle=False) as z:
        X = z["features"]
        labels = z["labels"]
        doc_ids = z["doc_ids"]
        offsets = z["offsets"]
        query_ids = z["query_ids"]
        registry_dim = int(z["registry_dim"])
    groups = []
    for g in range(offsets.shape[0] - 1):
        a, b = offsets[g], offsets[g + 1]
        groups.append(LtrGroup(str(query_ids[g]), X[a:b], labels[a:b], doc_ids[a:b]))
    return LtrDataset(groups), (registry_dim if registry_dim >= 0 else None)
