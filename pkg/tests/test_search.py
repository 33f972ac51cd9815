import numpy as np
import pytest

from nann import (
    GraphIndex,
    SearchParams,
    brute_force,
    c_hipanns,
    create_model,
    euclidean_scorer,
    greedy_search,
    model_scorer,
)
from nann.errors import InvalidArgumentError


def clustered(n, d, seed, n_clusters=8):
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=4.0, size=(n_clusters, d))
    return centers[rng.integers(0, n_clusters, size=n)] + rng.normal(size=(n, d))


def counting(score_fn):
    calls = {"ids": 0}

    def wrapped(ids):
        calls["ids"] += len(ids)
        return score_fn(ids)

    return wrapped, calls


def line_index(n=10):
    """Hand-wired path graph over 1-D points 0..n-1 (single layer)."""
    vectors = np.array([[float(i)] for i in range(n)])
    index = GraphIndex(dim=1, m=2, ef_construction=4, max_layers=1, seed=0)
    index._reserve(n)
    index._n = n
    for i in range(n):
        index._vectors[i] = vectors[i]
        index._ids[i] = i
        index._levels[i] = 0
        index._slot_of[i] = i
    index._entry_slot = 0
    index._top_level = 0
    nbrs, cnts = index._nbrs[0], index._cnts[0]
    for i in range(n - 1):
        nbrs[i, cnts[i]] = i + 1
        cnts[i] += 1
        nbrs[i + 1, cnts[i + 1]] = i
        cnts[i + 1] += 1
    index.validate()
    return index, vectors


class TestBruteForce:
    def test_full_sort_when_k_equals_n(self):
        vectors = clustered(50, 4, seed=0)
        fn = euclidean_scorer(vectors[7], vectors)
        result = brute_force(fn, np.arange(50), 50)
        scores = [s for _, s in result.items]
        assert scores == sorted(scores, reverse=True)
        assert result.items[0][0] == 7
        assert result.stats.nodes_visited == 50

    def test_one_dimensional_line(self):
        vectors = np.array([[float(i)] for i in range(10)])
        fn = euclidean_scorer(np.array([2.2]), vectors)
        result = brute_force(fn, np.arange(10), 2)
        assert result.item_ids() == [2, 3]

    def test_equal_scores_lower_id_first(self):
        vectors = np.array([[1.0], [-1.0], [3.0]])  # items 0 and 1 equidistant from 0
        fn = euclidean_scorer(np.array([0.0]), vectors)
        result = brute_force(fn, np.arange(3), 2)
        assert result.item_ids() == [0, 1]

    def test_k_too_large(self):
        with pytest.raises(InvalidArgumentError):
            brute_force(lambda ids: np.zeros(len(ids)), np.arange(3), 4)


class TestGreedySearch:
    def test_single_node(self):
        index = GraphIndex.build(np.array([[0.0, 0.0]]))
        fn, calls = counting(euclidean_scorer(np.array([1.0, 1.0]), np.zeros((1, 2))))
        result = greedy_search(index, fn, SearchParams(k=1))
        assert result.item_ids() == [0]
        assert calls["ids"] == 1

    def test_exhaustive_ef_matches_brute_force(self):
        for seed in range(4):
            vectors = clustered(200, 6, seed=seed)
            # diversity-heuristic selection keeps clustered data connected
            index = GraphIndex.build(
                vectors, m=8, ef_construction=32, seed=seed, select_heuristic=True
            )
            assert index.base_layer_components() == 1
            rng = np.random.default_rng(seed + 100)
            for _ in range(5):
                q = rng.normal(scale=4.0, size=6)
                fn = euclidean_scorer(q, vectors)
                exact = brute_force(fn, np.arange(200), 10)
                got = greedy_search(index, fn, SearchParams(k=10, ef=200))
                assert got.items == exact.items

    def test_exhaustive_ef_matches_brute_force_learned_metric(self):
        vectors = clustered(150, 8, seed=9)
        index = GraphIndex.build(
            vectors, m=8, ef_construction=32, seed=9, select_heuristic=True
        )
        assert index.base_layer_components() == 1
        model = create_model(d_x=8, d_h=6, z_dim=2, hidden=(16,), seed=4)
        item_emb = model.item_embeddings(vectors.astype(np.float32))
        rng = np.random.default_rng(5)
        h_u = model.user_embedding(rng.normal(size=8).astype(np.float32))
        fn = model_scorer(model, h_u, item_emb)
        exact = brute_force(fn, np.arange(150), 10)
        got = greedy_search(index, fn, SearchParams(k=10, ef=150))
        assert got.items == exact.items

    def test_quality_monotone_in_ef(self):
        vectors = clustered(400, 8, seed=11)
        index = GraphIndex.build(vectors, m=8, ef_construction=32, seed=11)
        rng = np.random.default_rng(12)
        for _ in range(5):
            q = rng.normal(scale=4.0, size=8)
            fn = euclidean_scorer(q, vectors)
            runs = {
                ef: greedy_search(index, fn, SearchParams(k=8, ef=ef)) for ef in (8, 16, 32)
            }
            for lo, hi in ((8, 16), (16, 32)):
                lo_scores = [s for _, s in runs[lo].items]
                hi_scores = [s for _, s in runs[hi].items]
                for a, b in zip(lo_scores, hi_scores):
                    assert b >= a - 1e-12

    def test_empty_index_rejected(self):
        index = GraphIndex(dim=2)
        with pytest.raises(InvalidArgumentError):
            greedy_search(index, lambda ids: np.zeros(len(ids)), SearchParams(k=1))


class TestCHipanns:
    def test_path_graph_matches_greedy_with_equivalent_budget(self):
        index, vectors = line_index(10)
        fn = euclidean_scorer(np.array([8.7]), vectors)
        greedy = greedy_search(index, fn, SearchParams(k=2, ef=2))
        chip = c_hipanns(index, fn, SearchParams(k=2, k_parallel=1, hops=9, ef=2))
        assert chip.items == greedy.items
        assert chip.item_ids() == [9, 8]

    def test_complete_base_layer_equals_brute_force(self):
        n = 40
        vectors = clustered(n, 5, seed=13)
        index = GraphIndex.build(vectors, m=n, ef_construction=n, seed=13)
        # with m = n every node links to every other at the base layer
        assert all(len(index.neighbors(0, i)) == n - 1 for i in range(n))
        fn = euclidean_scorer(vectors[0] + 0.3, vectors)
        exact = brute_force(fn, np.arange(n), n)
        got = c_hipanns(index, fn, SearchParams(k=n, k_parallel=n, hops=1))
        assert got.items == exact.items

    def test_never_scores_an_item_twice(self):
        vectors = clustered(300, 6, seed=14)
        index = GraphIndex.build(vectors, m=8, ef_construction=32, seed=14)
        fn, calls = counting(euclidean_scorer(vectors[5] + 0.1, vectors))
        result = c_hipanns(index, fn, SearchParams(k=10, k_parallel=4, hops=3))
        assert calls["ids"] == result.stats.metric_evaluations
        assert result.stats.nodes_visited == result.stats.metric_evaluations

    def test_visited_grows_with_k_parallel(self):
        wins = 0
        for seed in range(20):
            vectors = clustered(300, 6, seed=seed + 50)
            index = GraphIndex.build(vectors, m=8, ef_construction=32, seed=seed)
            q = np.zeros(6)
            fn = euclidean_scorer(q, vectors)
            v1 = c_hipanns(index, fn, SearchParams(k=8, k_parallel=1, hops=3)).stats
            v4 = c_hipanns(index, fn, SearchParams(k=8, k_parallel=4, hops=3)).stats
            if v4.nodes_visited >= v1.nodes_visited:
                wins += 1
        assert wins == 20

    def test_recall_monotone_in_hops_and_parallel_in_expectation(self):
        recalls = {(1, 1): [], (1, 3): [], (4, 3): []}
        for seed in range(20):
            vectors = clustered(400, 6, seed=seed + 80)
            index = GraphIndex.build(vectors, m=8, ef_construction=32, seed=seed)
            rng = np.random.default_rng(seed)
            q = vectors[rng.integers(0, 400)] + 0.2
            fn = euclidean_scorer(q, vectors)
            gt = set(brute_force(fn, np.arange(400), 10).item_ids())
            for kp, hops in recalls:
                got = c_hipanns(index, fn, SearchParams(k=10, k_parallel=kp, hops=hops, ef=10))
                recalls[(kp, hops)].append(len(set(got.item_ids()) & gt) / 10)
        assert np.mean(recalls[(1, 3)]) >= np.mean(recalls[(1, 1)])
        assert np.mean(recalls[(4, 3)]) >= np.mean(recalls[(1, 3)])

    def test_desk_scale_recall_floor_smoke(self):
        vectors = clustered(500, 8, seed=21, n_clusters=10)
        index = GraphIndex.build(vectors, m=16, ef_construction=64, seed=21)
        rng = np.random.default_rng(22)
        recs = []
        for _ in range(20):
            q = vectors[rng.integers(0, 500)] + 0.1 * rng.normal(size=8)
            fn = euclidean_scorer(q, vectors)
            gt = set(brute_force(fn, np.arange(500), 10).item_ids())
            got = c_hipanns(index, fn, SearchParams(k=10, k_parallel=8, hops=3, ef=20))
            recs.append(len(set(got.item_ids()) & gt) / 10)
        assert np.mean(recs) >= 0.9

    def test_deterministic_mode_reproducible(self):
        vectors = clustered(250, 6, seed=23)
        index = GraphIndex.build(vectors, m=8, ef_construction=32, seed=23)
        fn = euclidean_scorer(vectors[17] + 0.05, vectors)
        runs = [
            c_hipanns(
                index,
                fn,
                SearchParams(k=10, k_parallel=4, hops=3, deterministic=True, n_threads=t),
            )
            for t in (None, 1, 8)
        ]
        assert runs[0].items == runs[1].items == runs[2].items

    def test_parallel_mode_satisfies_pool_contract(self):
        vectors = clustered(250, 6, seed=24)
        index = GraphIndex.build(vectors, m=8, ef_construction=32, seed=24)
        base = euclidean_scorer(vectors[11] + 0.05, vectors)
        result = c_hipanns(
            index,
            base,
            SearchParams(k=10, k_parallel=4, hops=3, deterministic=False, n_threads=4),
        )
        scores = [s for _, s in result.items]
        assert scores == sorted(scores, reverse=True)
        # every reported score must be the true score of that item
        for item, score in result.items:
            assert base(np.array([item]))[0] == pytest.approx(score, abs=0)

    def test_result_strictly_descending_with_id_ties(self):
        vectors = clustered(100, 4, seed=25)
        index = GraphIndex.build(vectors, m=6, ef_construction=24, seed=25)
        fn = euclidean_scorer(vectors[0], vectors)
        result = c_hipanns(index, fn, SearchParams(k=10, k_parallel=2, hops=3))
        keys = [(-s, i) for i, s in result.items]
        assert keys == sorted(keys)

    def test_k_parallel_must_not_exceed_k(self):
        with pytest.raises(InvalidArgumentError):
            SearchParams(k=4, k_parallel=8)
