"""LambdaMART tests: swap-delta, lambda, and split-search oracles, training
set construction, early stopping, and reproducibility."""

import math
from dataclasses import replace

import numpy as np
import pytest

from blendrank.corpus import Corpus, Qrels, QuerySet, build_inverted_index
from blendrank.embeddings import EmbeddingMatrix
from blendrank.features import FeatureExtractor
from blendrank.ivf import Ranking
from blendrank.ltr import (Ensemble, LtrDataset, LtrGroup, TrainParams,
                           build_training_set, compute_lambdas, delta_ndcg,
                           feature_gains, fit_tree, ideal_dcg, load_model,
                           ndcg_from_scores, random_search_tune, save_model,
                           train, write_train_log, EPS, LEAF_CLAMP)


# ----------------------------------------------------------------------------
# Brute-force oracles
# ----------------------------------------------------------------------------

def brute_ndcg(order_labels, all_labels, k):
    """Plain-python nDCG with exponential gain and log2 discount."""
    def dcg(labels):
        return sum((2 ** l - 1) / math.log2(1 + r)
                   for r, l in enumerate(labels[:k], start=1))
    ideal = dcg(sorted(all_labels, reverse=True))
    return dcg(order_labels) / ideal if ideal > 0 else 0.0


def brute_delta_by_swap(labels, ranks, i, j, truncation):
    """Recompute nDCG before and after explicitly swapping two documents."""
    order = [None] * len(labels)
    for pos, r in enumerate(ranks):
        order[r - 1] = labels[pos]
    before = brute_ndcg(order, labels, truncation)
    ri, rj = ranks[i], ranks[j]
    order[ri - 1], order[rj - 1] = labels[j], labels[i]
    after = brute_ndcg(order, labels, truncation)
    return abs(after - before)


def brute_lambdas(scores, labels, sigma, truncation, tie_ids):
    """Direct pair loop using explicit-swap deltas."""
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], tie_ids[i], i))
    ranks = [0] * n
    for pos, i in enumerate(order, start=1):
        ranks[i] = pos
    lam = np.zeros(n)
    hes = np.zeros(n)
    for i in range(n):
        for j in range(n):
            if labels[i] > labels[j]:
                delta = brute_delta_by_swap(labels, ranks, i, j, truncation)
                rho = 1.0 / (1.0 + math.exp(sigma * (scores[i] - scores[j])))
                lam[i] += sigma * delta * rho
                lam[j] -= sigma * delta * rho
                hes[i] += sigma ** 2 * delta * rho * (1 - rho)
                hes[j] += sigma ** 2 * delta * rho * (1 - rho)
    return lam, hes


def brute_best_split(X, lambdas, hessians, min_data, min_hessian):
    """Enumerate every (feature, boundary) candidate and apply the tie rule."""
    n, f_count = X.shape
    best = None  # (gain, feature, threshold)
    tot_l, tot_h = lambdas.sum(), hessians.sum()
    parent = tot_l ** 2 / (tot_h + EPS)
    for f in range(f_count):
        vals = sorted(set(X[:, f]))
        for lo, hi in zip(vals, vals[1:]):
            thr = (lo + hi) / 2.0
            left = X[:, f] <= thr
            nl = int(left.sum())
            if nl < min_data or n - nl < min_data:
                continue
            hl, hr = hessians[left].sum(), hessians[~left].sum()
            if hl < min_hessian or hr < min_hessian:
                continue
            ll, lr = lambdas[left].sum(), lambdas[~left].sum()
            gain = ll ** 2 / (hl + EPS) + lr ** 2 / (hr + EPS) - parent
            if gain <= 0:
                continue
            if best is None or gain > best[0] + 1e-12:
                best = (gain, f, thr)
    return best


# ----------------------------------------------------------------------------
# delta_ndcg
# ----------------------------------------------------------------------------

class TestDeltaNdcg:
    def test_equal_labels_zero(self):
        assert delta_ndcg([1, 1, 0], [1, 2, 3], 0, 1) == 0.0

    def test_both_below_truncation_zero(self):
        labels = [2, 0, 1, 0, 1]
        ranks = [1, 2, 4, 5, 3]
        assert delta_ndcg(labels, ranks, 1, 3, truncation=2) == 0.0

    def test_worked_value(self):
        # |(3 - 0) * (1/log2(2) - 1/log2(3))| / 3 = 0.369070...
        got = delta_ndcg([2, 0], [1, 2], 0, 1, truncation=10)
        assert abs(got - 0.369070) < 1e-6

    def test_symmetric_in_i_j(self):
        labels = [2, 1, 0, 1]
        ranks = [2, 1, 4, 3]
        assert delta_ndcg(labels, ranks, 0, 2) == delta_ndcg(labels, ranks, 2, 0)

    def test_matches_brute_force_swap(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            n = int(rng.integers(2, 12))
            labels = rng.integers(0, 4, n).tolist()
            ranks = (rng.permutation(n) + 1).tolist()
            i, j = rng.choice(n, size=2, replace=False)
            got = delta_ndcg(labels, ranks, int(i), int(j), truncation=10)
            want = brute_delta_by_swap(labels, ranks, int(i), int(j), 10)
            assert abs(got - want) < 1e-9

    def test_zero_ideal_gives_zero(self):
        assert delta_ndcg([0, 0], [1, 2], 0, 1) == 0.0


# ----------------------------------------------------------------------------
# compute_lambdas
# ----------------------------------------------------------------------------

class TestComputeLambdas:
    def test_all_labels_equal(self):
        lam, hes = compute_lambdas(np.array([1.0, 2.0]), np.array([1, 1]))
        assert np.all(lam == 0) and np.all(hes == 0)

    def test_two_docs_equal_scores_rho_half(self):
        scores = np.array([0.0, 0.0])
        labels = np.array([1, 0])
        lam, hes = compute_lambdas(scores, labels, sigma=1.0, truncation=10)
        delta = delta_ndcg(labels, [1, 2], 0, 1, 10)
        assert abs(lam[0] - 0.5 * delta) < 1e-12
        assert abs(lam[0] + lam[1]) < 1e-15

    def test_lambda_sum_zero(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            n = int(rng.integers(2, 15))
            lam, _ = compute_lambdas(rng.normal(size=n), rng.integers(0, 3, n))
            assert abs(lam.sum()) < 1e-8

    def test_matches_brute_force(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            n = int(rng.integers(2, 12))
            scores = rng.normal(size=n)
            labels = rng.integers(0, 4, n)
            tie_ids = rng.permutation(n)
            lam, hes = compute_lambdas(scores, labels, 1.0, 10, tie_ids)
            blam, bhes = brute_lambdas(scores, labels, 1.0, 10, tie_ids)
            np.testing.assert_allclose(lam, blam, atol=1e-9)
            np.testing.assert_allclose(hes, bhes, atol=1e-9)


# ----------------------------------------------------------------------------
# fit_tree
# ----------------------------------------------------------------------------

def leaf_params(**kw):
    defaults = dict(learning_rate=0.1, num_leaves=4, min_sum_hessian_leaf=0.0,
                    min_data_leaf=1, patience=1, max_trees=1)
    defaults.update(kw)
    return TrainParams(**defaults)


class TestFitTree:
    def test_constant_lambdas_zero_hessians_single_clamped_leaf(self):
        X = np.linspace(0, 1, 8).reshape(-1, 1)
        lam = np.full(8, 2.0)
        hes = np.zeros(8)
        tree = fit_tree(X, lam, hes, leaf_params())
        assert tree.n_leaves == 1
        assert tree.value[0] == LEAF_CLAMP

    def test_perfect_1d_separation_matches_brute_force(self):
        rng = np.random.default_rng(3)
        left = rng.uniform(0.0, 0.4, 10)
        right = rng.uniform(0.6, 1.0, 10)
        X = np.concatenate([left, right]).reshape(-1, 1)
        lam = np.concatenate([np.full(10, -1.0), np.full(10, 1.0)])
        hes = np.full(20, 0.5)
        tree = fit_tree(X, lam, hes, leaf_params(num_leaves=2))
        want = brute_best_split(X, lam, hes, 1, 0.0)
        assert tree.feature[0] == want[1]
        assert abs(tree.threshold[0] - want[2]) < 1e-12
        assert abs(tree.gain[0] - want[0]) < 1e-9
        assert left.max() < tree.threshold[0] < right.min()

    def test_split_matches_brute_force_random(self):
        rng = np.random.default_rng(41)
        for trial in range(30):
            n = int(rng.integers(4, 30))
            f = int(rng.integers(1, 5))
            X = np.round(rng.normal(size=(n, f)), 2)  # force ties
            lam = rng.normal(size=n)
            hes = rng.uniform(0.1, 1.0, size=n)
            min_data = int(rng.integers(1, 3))
            tree = fit_tree(X, lam, hes, leaf_params(num_leaves=2, min_data_leaf=min_data))
            want = brute_best_split(X, lam, hes, min_data, 0.0)
            if want is None:
                assert tree.n_leaves == 1
            else:
                assert tree.feature[0] == want[1], f"trial {trial}"
                assert abs(tree.threshold[0] - want[2]) < 1e-12
                assert abs(tree.gain[0] - want[0]) < 1e-9

    def test_min_data_leaf_blocks_split(self):
        X = np.linspace(0, 1, 10).reshape(-1, 1)
        lam = np.where(X[:, 0] > 0.5, 1.0, -1.0)
        hes = np.full(10, 0.5)
        tree = fit_tree(X, lam, hes, leaf_params(min_data_leaf=6))
        assert tree.n_leaves == 1

    def test_leaf_budget_respected(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(200, 3))
        lam = rng.normal(size=200)
        hes = rng.uniform(0.1, 1.0, 200)
        for budget in (1, 2, 5, 16):
            tree = fit_tree(X, lam, hes, leaf_params(num_leaves=budget))
            assert 1 <= tree.n_leaves <= budget

    def test_leaf_value_is_newton_step(self):
        X = np.array([[0.0], [1.0]])
        lam = np.array([3.0, 3.0])
        hes = np.array([2.0, 2.0])
        tree = fit_tree(X, lam, hes, leaf_params(min_data_leaf=2))
        assert tree.n_leaves == 1
        assert abs(tree.value[0] - 6.0 / (4.0 + EPS)) < 1e-12

    def test_predict_batch_equals_predict_one(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(150, 4))
        lam = rng.normal(size=150)
        hes = rng.uniform(0.1, 1.0, 150)
        tree = fit_tree(X, lam, hes, leaf_params(num_leaves=10))
        Xq = rng.normal(size=(80, 4))
        batch = tree.predict_batch(Xq)
        ones = np.array([tree.predict_one(x) for x in Xq])
        np.testing.assert_array_equal(batch, ones)


# ----------------------------------------------------------------------------
# Training set construction
# ----------------------------------------------------------------------------

def tiny_world(n_docs=50, seed=0):
    rng = np.random.default_rng(seed)
    vocab = [f"w{i}" for i in range(10)]
    texts = [" ".join(rng.choice(vocab, size=8)) for _ in range(n_docs)]
    corpus = Corpus([f"d{i}" for i in range(n_docs)], texts)
    index = build_inverted_index(corpus)
    emb = EmbeddingMatrix(rng.normal(size=(n_docs, 4)).astype(np.float32))
    return corpus, FeatureExtractor(index, emb)


class TestBuildTrainingSet:
    def ranking(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        return Ranking(ids, np.linspace(1.0, 0.5, len(ids)))

    def test_one_relevant_plus_30_negatives(self):
        corpus, ex = tiny_world()
        queries = QuerySet(["q1"], ["w1 w2"])
        qrels = Qrels({("q1", "d0"): 1})
        rankings = {"q1": self.ranking(range(40))}
        ds = build_training_set(queries, qrels, rankings, corpus, ex,
                                {"q1": np.ones(4)}, n_neg=30, seed=0)
        assert len(ds.groups) == 1
        assert ds.groups[0].features.shape[0] == 31
        assert sorted(ds.groups[0].labels.tolist(), reverse=True)[0] == 1

    def test_query_without_relevants_dropped(self):
        corpus, ex = tiny_world()
        queries = QuerySet(["q1", "q2"], ["w1", "w2"])
        qrels = Qrels({("q1", "d0"): 1})
        rankings = {"q1": self.ranking(range(35)), "q2": self.ranking(range(35))}
        ds = build_training_set(queries, qrels, rankings, corpus, ex,
                                {"q1": np.ones(4), "q2": np.ones(4)}, 30, 0)
        assert [g.query_id for g in ds.groups] == ["q1"]

    def test_small_pool_clamps(self):
        corpus, ex = tiny_world()
        queries = QuerySet(["q1"], ["w1"])
        qrels = Qrels({("q1", "d1"): 2})
        rankings = {"q1": self.ranking(range(10))}
        ds = build_training_set(queries, qrels, rankings, corpus, ex,
                                {"q1": np.ones(4)}, n_neg=30, seed=0)
        # 1 relevant + the 9 other retrieved docs
        assert ds.groups[0].features.shape[0] == 10

    def test_unretrieved_relevant_still_included(self):
        corpus, ex = tiny_world()
        queries = QuerySet(["q1"], ["w1"])
        qrels = Qrels({("q1", "d45"): 1})
        rankings = {"q1": self.ranking(range(10))}  # d45 not retrieved
        ds = build_training_set(queries, qrels, rankings, corpus, ex,
                                {"q1": np.ones(4)}, n_neg=5, seed=0)
        assert 45 in ds.groups[0].doc_ids.tolist()

    def test_deterministic_sampling(self):
        corpus, ex = tiny_world()
        queries = QuerySet(["q1"], ["w1 w3"])
        qrels = Qrels({("q1", "d3"): 1})
        rankings = {"q1": self.ranking(range(50))}
        a = build_training_set(queries, qrels, rankings, corpus, ex,
                               {"q1": np.ones(4)}, 10, seed=4)
        b = build_training_set(queries, qrels, rankings, corpus, ex,
                               {"q1": np.ones(4)}, 10, seed=4)
        assert a.groups[0].doc_ids.tolist() == b.groups[0].doc_ids.tolist()

    def test_unknown_qrels_doc_ids_ignored(self):
        corpus, ex = tiny_world()
        queries = QuerySet(["q1"], ["w1"])
        qrels = Qrels({("q1", "d3"): 1, ("q1", "ghost"): 2})
        rankings = {"q1": self.ranking(range(20))}
        ds = build_training_set(queries, qrels, rankings, corpus, ex,
                                {"q1": np.ones(4)}, 5, 0)
        assert all(d < 50 for d in ds.groups[0].doc_ids)


# ----------------------------------------------------------------------------
# train / early stopping / reproducibility
# ----------------------------------------------------------------------------

def synthetic_dataset(seed, n_groups=12, group_size=16, n_features=5):
    """Relevance = (x0 > 0.5) so training has signal to find."""
    rng = np.random.default_rng(seed)
    groups = []
    for g in range(n_groups):
        X = rng.random((group_size, n_features))
        y = (X[:, 0] > 0.5).astype(np.int64)
        groups.append(LtrGroup(f"q{g}", X, y, np.arange(group_size, dtype=np.int64)))
    return LtrDataset(groups)


def train_params(**kw):
    defaults = dict(learning_rate=0.1, num_leaves=8, min_sum_hessian_leaf=0.0,
                    min_data_leaf=1, patience=5, max_trees=20)
    defaults.update(kw)
    return TrainParams(**defaults)


class TestTrain:
    def test_zero_max_trees_empty_ensemble(self):
        ens = train(synthetic_dataset(0), synthetic_dataset(1),
                    train_params(max_trees=0))
        assert ens.n_trees == 0
        assert ens.score_one(np.zeros(5)) == 0.0
        assert np.all(ens.score_batch(np.zeros((3, 5))) == 0.0)

    def test_learns_signal(self):
        ens = train(synthetic_dataset(2), synthetic_dataset(3), train_params())
        assert ens.metadata["best_valid_metric"] > 0.8

    def test_truncates_at_best_iteration(self):
        ens = train(synthetic_dataset(4), synthetic_dataset(5), train_params())
        log = ens.metadata["valid_log"]
        best = max(range(len(log)), key=lambda i: log[i]) + 1
        assert ens.n_trees == best

    def test_early_stop_counts_flat_rounds(self):
        # The validation metric saturates at 1.0 on an easy problem; after
        # `patience` non-improving trees training must stop.
        params = train_params(patience=3, max_trees=50)
        ens = train(synthetic_dataset(6), synthetic_dataset(6), params)
        log = ens.metadata["valid_log"]
        assert len(log) == ens.metadata["best_iteration"] + params.patience
        assert len(log) < params.max_trees

    def test_bit_reproducible(self, tmp_path):
        a = train(synthetic_dataset(7), synthetic_dataset(8), train_params())
        b = train(synthetic_dataset(7), synthetic_dataset(8), train_params())
        pa, pb = tmp_path / "a.json", tmp_path / "b.json"
        save_model(a, pa)
        save_model(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_group_permutation_leaves_model_unchanged(self, tmp_path):
        ds = synthetic_dataset(9)
        rng = np.random.default_rng(0)
        shuffled = []
        for g in ds.groups:
            p = rng.permutation(g.features.shape[0])
            shuffled.append(LtrGroup(g.query_id, g.features[p], g.labels[p],
                                     g.doc_ids[p]))
        valid = synthetic_dataset(10)
        a = train(ds, valid, train_params())
        b = train(LtrDataset(shuffled), valid, train_params())
        pa, pb = tmp_path / "a.json", tmp_path / "b.json"
        save_model(a, pa)
        save_model(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_scoring_is_additive_in_trees(self):
        # Conjunctive labels with stump trees force a multi-tree ensemble.
        def and_dataset(seed):
            rng = np.random.default_rng(seed)
            groups = []
            for g in range(12):
                X = rng.random((16, 5))
                y = ((X[:, 0] > 0.5) & (X[:, 1] > 0.5)).astype(np.int64)
                groups.append(LtrGroup(f"q{g}", X, y, np.arange(16, dtype=np.int64)))
            return LtrDataset(groups)

        ens = train(and_dataset(11), and_dataset(12), train_params(num_leaves=2))
        assert ens.n_trees >= 2
        X = np.random.default_rng(1).random((10, 5))
        partial = Ensemble(ens.trees[:-1], ens.learning_rate, ens.feature_count)
        last = ens.trees[-1]
        full = ens.score_batch(X)
        np.testing.assert_allclose(
            full, partial.score_batch(X) + ens.learning_rate * last.predict_batch(X),
            atol=1e-12)

    def test_feature_width_mismatch(self):
        with pytest.raises(ValueError, match="width"):
            train(synthetic_dataset(0, n_features=4), synthetic_dataset(1), train_params())

    def test_model_round_trip(self, tmp_path):
        ens = train(synthetic_dataset(13), synthetic_dataset(14), train_params())
        path = tmp_path / "model.json"
        save_model(ens, path)
        loaded = load_model(path)
        X = np.random.default_rng(2).random((20, 5))
        np.testing.assert_array_equal(ens.score_batch(X), loaded.score_batch(X))
        assert loaded.metadata["best_iteration"] == ens.metadata["best_iteration"]

    def test_train_log_csv(self, tmp_path):
        ens = train(synthetic_dataset(15), synthetic_dataset(16), train_params())
        path = tmp_path / "log.csv"
        write_train_log(ens, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "iteration,valid_ndcg"
        assert len(lines) == len(ens.metadata["valid_log"]) + 1


class TestNdcgFromScores:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(19)
        for _ in range(100):
            n = int(rng.integers(1, 15))
            scores = rng.normal(size=n)
            labels = rng.integers(0, 3, n)
            order = np.lexsort((np.arange(n), np.arange(n), -scores))
            got = ndcg_from_scores(scores, labels, 10)
            want = brute_ndcg(labels[order].tolist(), labels.tolist(), 10)
            assert abs(got - want) < 1e-12

    def test_ideal_dcg_zero_for_all_zero_labels(self):
        assert ideal_dcg([0, 0, 0], 10) == 0.0
        assert ndcg_from_scores(np.array([1.0, 2.0]), np.array([0, 0]), 10) == 0.0


class TestRandomSearch:
    def test_single_trial_returns_that_config(self):
        base = train_params(max_trees=3)
        got = random_search_tune(synthetic_dataset(20), synthetic_dataset(21),
                                 1, seed=5, base=base,
                                 min_data_range=(1, 4))
        assert isinstance(got, TrainParams)
        assert 0.01 <= got.learning_rate <= 0.2

    def test_deterministic(self):
        base = train_params(max_trees=3)
        kw = dict(base=base, min_data_range=(1, 4))
        a = random_search_tune(synthetic_dataset(22), synthetic_dataset(23), 4, 9, **kw)
        b = random_search_tune(synthetic_dataset(22), synthetic_dataset(23), 4, 9, **kw)
        assert a == b

    def test_winner_is_argmax(self):
        base = train_params(max_trees=3)
        tr, va = synthetic_dataset(24), synthetic_dataset(25)
        rng = np.random.default_rng(13)
        trials = []
        for _ in range(4):
            cand = replace(base,
                           learning_rate=float(rng.uniform(0.01, 0.2)),
                           min_sum_hessian_leaf=float(rng.uniform(10.0, 150.0)),
                           min_data_leaf=int(rng.integers(1, 5)))
            trials.append((cand, train(tr, va, cand).metadata["best_valid_metric"]))
        got = random_search_tune(tr, va, 4, seed=13, base=base, min_data_range=(1, 4))
        best_by_hand = max(trials, key=lambda t: t[1])[0]
        assert got == best_by_hand


class TestFeatureGains:
    def test_empty_ensemble(self):
        assert feature_gains(Ensemble([], 0.1, 4)) == {}

    def test_single_split_tree(self):
        X = np.concatenate([np.zeros(5), np.ones(5)]).reshape(-1, 1)
        lam = np.concatenate([np.full(5, -1.0), np.full(5, 1.0)])
        hes = np.full(10, 0.5)
        tree = fit_tree(X, lam, hes, leaf_params(num_leaves=2))
        ens = Ensemble([tree], 0.1, 1)
        gains = feature_gains(ens)
        assert list(gains) == [0]
        assert abs(gains[0] - tree.gain[0]) < 1e-12

    def test_total_gain_partition(self):
        ens = train(synthetic_dataset(26), synthetic_dataset(27), train_params())
        total = sum(feature_gains(ens).values())
        by_node = sum(float(t.gain[i]) for t in ens.trees
                      for i in range(t.n_nodes) if t.feature[i] >= 0)
        assert abs(total - by_node) < 1e-9


class TestTrainParamsValidation:
    def test_learning_rate_range(self):
        with pytest.raises(ValueError):
            TrainParams(learning_rate=0.3)
        with pytest.raises(ValueError):
            TrainParams(learning_rate=0.001)

    def test_patience_positive(self):
        with pytest.raises(ValueError):
            TrainParams(patience=0)

    def test_defaults_match_production_setup(self):
        p = TrainParams()
        assert p.num_leaves == 64
        assert p.patience == 30
        assert p.truncation == 10
