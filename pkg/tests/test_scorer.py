"""Compiled bitvector scorer tests: exact equivalence with naive traversal."""

import numpy as np
import pytest

from blendrank.ltr import Ensemble, RegressionTree
from blendrank.scorer import compile_ensemble, score_batch, score_one


def leaf_tree(weight: float) -> RegressionTree:
    return RegressionTree(
        np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
        np.array([weight]), np.array([0.0]))


def stump(feature: int, threshold: float, w_left: float, w_right: float) -> RegressionTree:
    return RegressionTree(
        np.array([feature, -1, -1]), np.array([threshold, 0.0, 0.0]),
        np.array([1, -1, -1]), np.array([2, -1, -1]),
        np.array([0.0, w_left, w_right]), np.array([1.0, 0.0, 0.0]))


def random_tree(rng, n_features: int, n_leaves: int) -> RegressionTree:
    """Grow a random binary tree by splitting random leaves until the budget."""
    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    value = [float(rng.normal())]
    gain = [0.0]
    leaves = [0]
    while len(leaves) < n_leaves:
        pick = leaves.pop(int(rng.integers(len(leaves))))
        feature[pick] = int(rng.integers(n_features))
        threshold[pick] = float(np.round(rng.normal(), 2))
        for side in (left, right):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(float(rng.normal()))
            gain.append(0.0)
            side[pick] = len(feature) - 1
            leaves.append(len(feature) - 1)
    return RegressionTree(np.array(feature), np.array(threshold), np.array(left),
                          np.array(right), np.array(value), np.array(gain))


def random_ensemble(seed: int, n_trees: int, n_features: int, max_leaves: int) -> Ensemble:
    rng = np.random.default_rng(seed)
    trees = [random_tree(rng, n_features, int(rng.integers(2, max_leaves + 1)))
             for _ in range(n_trees)]
    return Ensemble(trees, 0.1, n_features)


class TestCompile:
    def test_single_leaf_tree(self):
        ens = Ensemble([leaf_tree(2.5)], 0.5, 3)
        comp = compile_ensemble(ens)
        assert comp.conditions == {}
        assert score_one(comp, np.zeros(3)) == 0.5 * 2.5

    def test_single_split_masks(self):
        ens = Ensemble([stump(0, 1.0, -1.0, 3.0)], 1.0, 1)
        comp = compile_ensemble(ens)
        assert score_one(comp, np.array([0.5])) == -1.0   # x <= t, left kept
        assert score_one(comp, np.array([2.0])) == 3.0    # x > t, left masked

    def test_value_equal_threshold_is_true_branch(self):
        ens = Ensemble([stump(0, 1.0, -1.0, 3.0)], 1.0, 1)
        comp = compile_ensemble(ens)
        assert score_one(comp, np.array([1.0])) == -1.0

    def test_too_many_leaves_rejected(self):
        tree = random_tree(np.random.default_rng(0), 4, 65)
        with pytest.raises(ValueError, match="65 leaves"):
            compile_ensemble(Ensemble([tree], 0.1, 4))

    def test_64_leaves_accepted(self):
        tree = random_tree(np.random.default_rng(1), 4, 64)
        comp = compile_ensemble(Ensemble([tree], 0.1, 4))
        x = np.random.default_rng(2).normal(size=4)
        assert np.isfinite(score_one(comp, x))


class TestEquivalence:
    def test_exit_leaf_decode_matches_traversal(self):
        # compile/decode round trip on 1,000 random inputs, naive traversal
        # as the oracle, exact equality required.
        ens = random_ensemble(3, n_trees=20, n_features=6, max_leaves=16)
        comp = compile_ensemble(ens)
        rng = np.random.default_rng(4)
        X = np.round(rng.normal(size=(1000, 6)), 2)
        naive = ens.score_batch(X)
        fast = score_batch(comp, X)
        assert np.array_equal(naive, fast)

    def test_score_one_equals_naive_exactly(self):
        ens = random_ensemble(5, n_trees=10, n_features=4, max_leaves=8)
        comp = compile_ensemble(ens)
        rng = np.random.default_rng(6)
        for _ in range(200):
            x = np.round(rng.normal(size=4), 1)  # provoke threshold hits
            assert score_one(comp, x) == ens.score_one(x)

    def test_batch_equals_mapped_score_one(self):
        ens = random_ensemble(7, n_trees=15, n_features=5, max_leaves=12)
        comp = compile_ensemble(ens)
        X = np.random.default_rng(8).normal(size=(300, 5))
        batch = score_batch(comp, X)
        ones = np.array([score_one(comp, x) for x in X])
        assert np.array_equal(batch, ones)

    def test_permuting_rows_permutes_scores(self):
        ens = random_ensemble(9, n_trees=8, n_features=3, max_leaves=6)
        comp = compile_ensemble(ens)
        X = np.random.default_rng(10).normal(size=(50, 3))
        p = np.random.default_rng(11).permutation(50)
        np.testing.assert_array_equal(score_batch(comp, X)[p], score_batch(comp, X[p]))

    def test_empty_ensemble_scores_zero(self):
        comp = compile_ensemble(Ensemble([], 0.1, 4))
        assert score_one(comp, np.zeros(4)) == 0.0
        assert np.all(score_batch(comp, np.zeros((5, 4))) == 0.0)

    def test_batch_of_one_equals_score_one(self):
        ens = random_ensemble(12, 5, 4, 8)
        comp = compile_ensemble(ens)
        x = np.random.default_rng(13).normal(size=4)
        assert score_batch(comp, x[None, :])[0] == score_one(comp, x)


class TestValidation:
    def test_feature_length_mismatch(self):
        comp = compile_ensemble(random_ensemble(14, 3, 4, 4))
        with pytest.raises(ValueError):
            score_one(comp, np.zeros(5))
        with pytest.raises(ValueError):
            score_batch(comp, np.zeros((2, 3)))

    def test_ragged_input_rejected(self):
        comp = compile_ensemble(random_ensemble(15, 3, 4, 4))
        with pytest.raises(ValueError):
            score_batch(comp, np.zeros(4))  # 1-d is not a batch

    def test_bitvector_never_empty(self):
        ens = random_ensemble(16, 10, 5, 32)
        comp = compile_ensemble(ens)
        X = np.random.default_rng(17).normal(size=(100, 5))
        bits = np.tile(comp.default_bits, (100, 1))
        for f, fc in comp.conditions.items():
            vals = X[:, f]
            for j in range(fc.thresholds.shape[0]):
                rows = np.flatnonzero(vals > fc.thresholds[j])
                np.bitwise_and.at(bits[:, fc.tree_ids[j]], rows, fc.masks[j])
        assert np.all(bits != 0)
