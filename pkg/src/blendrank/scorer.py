"""Fast flat ensemble scoring via per-feature condition lists and leaf
bitvectors.

Each internal node of every tree becomes one condition (feature, threshold,
tree id, false-mask). Conditions are grouped per feature and sorted by
threshold; evaluating a document scans each list only while the feature
value exceeds the threshold, ANDing the false-mask into the tree's
bitvector. A node's false-mask zeroes exactly the leaves of its left
subtree, which are unreachable when value <= threshold is false. After all
features are processed, the lowest set bit of each tree's bitvector is the
exit leaf found by root-to-leaf traversal.

The contract is exact equality with naive traversal, bit for bit: identical
leaf selection and identical summation order (learning_rate * weight added
tree by tree).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ltr import Ensemble, RegressionTree

MAX_LEAVES = 64
_FULL = (1 << 64) - 1


@dataclass
class _FeatureConditions:
    thresholds: np.ndarray
    tree_ids: np.ndarray
    masks: np.ndarray


class CompiledEnsemble:
    """Condition-ordered form of an Ensemble; immutable and reentrant."""

    def __init__(self, conditions: dict[int, _FeatureConditions],
                 leaf_weights: np.ndarray, default_bits: np.ndarray,
                 learning_rate: float, feature_count: int, n_trees: int):
        self.conditions = conditions
        self.leaf_weights = leaf_weights
        self.default_bits = default_bits
        self.learning_rate = learning_rate
        self.feature_count = feature_count
        self.n_trees = n_trees


def _tree_conditions(tree: RegressionTree, tree_id: int):
    """Number leaves left to right; yield (feature, threshold, false_mask)
    per internal node, plus the leaf weight array."""
    n_leaves = tree.n_leaves
    if n_leaves > MAX_LEAVES:
        raise ValueError(f"tree {tree_id} has {n_leaves} leaves; limit is {MAX_LEAVES}")
    weights = np.zeros(MAX_LEAVES, dtype=np.float64)
    conds = []
    counter = [0]

    def walk(i: int) -> tuple[int, int]:
        if tree.feature[i] < 0:
            leaf = counter[0]
            counter[0] += 1
            weights[leaf] = tree.value[i]
            return leaf, leaf
        lo_l, hi_l = walk(int(tree.left[i]))
        lo_r, hi_r = walk(int(tree.right[i]))
        left_bits = ((1 << (hi_l - lo_l + 1)) - 1) << lo_l
        conds.append((int(tree.feature[i]), float(tree.threshold[i]),
                      (_FULL ^ left_bits)))
        return lo_l, hi_r

    walk(0)
    default = (1 << n_leaves) - 1
    return conds, weights, default


def compile_ensemble(ensemble: Ensemble) -> CompiledEnsemble:
    """Flatten every tree into per-feature condition lists."""
    per_feature: dict[int, list[tuple[float, int, int]]] = {}
    n_trees = ensemble.n_trees
    leaf_weights = np.zeros((max(n_trees, 1), MAX_LEAVES), dtype=np.float64)
    default_bits = np.zeros(n_trees, dtype=np.uint64)
    for t_id, tree in enumerate(ensemble.trees):
        conds, weights, default = _tree_conditions(tree, t_id)
        leaf_weights[t_id] = weights
        default_bits[t_id] = np.uint64(default)
        for f, thr, mask in conds:
            per_feature.setdefault(f, []).append((thr, t_id, mask))
    conditions = {}
    for f, items in per_feature.items():
        items.sort()
        conditions[f] = _FeatureConditions(
            np.array([it[0] for it in items], dtype=np.float64),
            np.array([it[1] for it in items], dtype=np.int64),
            np.array([it[2] for it in items], dtype=np.uint64),
        )
    return CompiledEnsemble(conditions, leaf_weights, default_bits,
                            ensemble.learning_rate, ensemble.feature_count, n_trees)


def score_one(compiled: CompiledEnsemble, features) -> float:
    """Score one vector; the scan over each condition list stops at the
    first threshold >= value (value == threshold keeps the condition true)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != compiled.feature_count:
        raise ValueError(f"expected {compiled.feature_count} features, got {x.shape}")
    if compiled.n_trees == 0:
        return 0.0
    bits = compiled.default_bits.copy()
    for f, fc in compiled.conditions.items():
        c = int(np.searchsorted(fc.thresholds, x[f], side="left"))
        if c:
            np.bitwise_and.at(bits, fc.tree_ids[:c], fc.masks[:c])
    lr = compiled.learning_rate
    s = 0.0
    for t in range(compiled.n_trees):
        v = int(bits[t])
        leaf = (v & -v).bit_length() - 1
        s += lr * compiled.leaf_weights[t, leaf]
    return s


def score_batch(compiled: CompiledEnsemble, matrix) -> np.ndarray:
    """Elementwise score_one over rows, vectorized across documents."""
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != compiled.feature_count:
        raise ValueError(f"expected 2-d input with {compiled.feature_count} columns")
    n = X.shape[0]
    if compiled.n_trees == 0 or n == 0:
        return np.zeros(n, dtype=np.float64)
    bits = np.tile(compiled.default_bits, (n, 1))
    for f, fc in compiled.conditions.items():
        vals = X[:, f]
        order = np.argsort(vals, kind="stable")
        sorted_vals = vals[order]
        starts = np.searchsorted(sorted_vals, fc.thresholds, side="right")
        for j in range(fc.thresholds.shape[0]):
            rows = order[starts[j]:]
            if rows.shape[0]:
                np.bitwise_and.at(bits[:, fc.tree_ids[j]], rows, fc.masks[j])
    scores = np.zeros(n, dtype=np.float64)
    one = np.uint64(1)
    lr = compiled.learning_rate
    for t in range(compiled.n_trees):
        col = bits[:, t]
        lsb = col & (~col + one)
        leaves = np.bitwise_count(lsb - one)
        scores += lr * compiled.leaf_weights[t, leaves]
    return scores
