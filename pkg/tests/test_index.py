import numpy as np
import pytest

from nann import GraphIndex, PendingItem, UpdatePolicy, flush_pending
from nann.errors import FileFormatError, InvalidArgumentError


def clustered(n, d, seed, n_clusters=8, spread=4.0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=spread, size=(n_clusters, d))
    assign = rng.integers(0, n_clusters, size=n)
    return centers[assign] + rng.normal(size=(n, d))


def structure(index: GraphIndex):
    """Canonical structural fingerprint for equality comparison."""
    ids = sorted(int(i) for i in index.item_ids())
    layers = []
    for l in range(index.n_layers):
        adj = {}
        for i in ids:
            if index.level_of(i) >= l:
                adj[i] = index.neighbors(l, i)
        layers.append(adj)
    return {
        "ids": ids,
        "levels": {i: index.level_of(i) for i in ids},
        "entry": index.entry_point,
        "layers": layers,
    }


class TestBuild:
    def test_single_item(self):
        index = GraphIndex.build(np.array([[1.0, 2.0]]))
        assert len(index) == 1
        assert index.entry_point == 0
        assert index.neighbors(0, 0) == []
        index.validate()

    def test_two_items_symmetric_edge(self):
        index = GraphIndex.build(np.array([[0.0, 0.0], [1.0, 1.0]]), m=2, seed=0)
        for l in range(index.n_layers):
            present = [i for i in (0, 1) if index.level_of(i) >= l]
            if len(present) == 2:
                assert index.neighbors(l, 0) == [1]
                assert index.neighbors(l, 1) == [0]
        index.validate()

    def test_duplicate_ids_rejected(self):
        with pytest.raises(InvalidArgumentError):
            GraphIndex.build(np.zeros((2, 3)), ids=np.array([5, 5]))

    def test_level_population_close_to_geometric(self):
        vectors = clustered(1000, 8, seed=1)
        index = GraphIndex.build(vectors, m=8, ef_construction=32, level_prob=1 / 17, seed=2)
        counts = index.layer_node_counts()
        assert counts[0] == 1000
        p = 1 / 17
        expected = 1000 * p
        sigma = np.sqrt(1000 * p * (1 - p))
        assert abs(counts[1] - expected) <= 3 * sigma if len(counts) > 1 else True
        index.validate()

    def test_invariants_after_build(self):
        for seed in range(3):
            index = GraphIndex.build(clustered(300, 6, seed), m=6, ef_construction=24, seed=seed)
            index.validate()

    def test_base_layer_connected_or_logged(self, capsys):
        # connectivity is expected but not guaranteed; log violations
        index = GraphIndex.build(clustered(400, 8, seed=3), m=8, ef_construction=32, seed=3)
        components = index.base_layer_components()
        if components != 1:
            print(f"note: base layer has {components} components")
        assert components >= 1


class TestInsert:
    def test_insert_into_empty(self):
        index = GraphIndex(dim=3)
        index.insert(42, np.ones(3))
        assert index.entry_point == 42
        assert len(index) == 1

    def test_duplicate_insert_rejected(self):
        index = GraphIndex(dim=2)
        index.insert(1, np.zeros(2))
        with pytest.raises(InvalidArgumentError):
            index.insert(1, np.ones(2))

    def test_dim_mismatch(self):
        index = GraphIndex(dim=2)
        with pytest.raises(InvalidArgumentError):
            index.insert(1, np.zeros(3))

    def test_build_equals_iterated_insert(self):
        vectors = clustered(120, 5, seed=4)
        built = GraphIndex.build(vectors, m=5, ef_construction=16, seed=9)
        manual = GraphIndex(dim=5, m=5, ef_construction=16, seed=9)
        for i, v in enumerate(vectors):
            manual.insert(i, v)
        assert structure(built) == structure(manual)

    def test_invariants_after_random_inserts(self):
        rng = np.random.default_rng(5)
        index = GraphIndex(dim=4, m=4, ef_construction=12, seed=1)
        for i in range(100):
            index.insert(i, rng.normal(size=4))
        index.validate()

    def test_search_still_finds_old_items_after_inserts(self):
        from nann import SearchParams, euclidean_scorer, greedy_search

        vectors = clustered(80, 4, seed=6)
        index = GraphIndex.build(vectors, m=6, ef_construction=24, seed=0)
        rng = np.random.default_rng(7)
        extra = rng.normal(scale=10.0, size=(20, 4))
        for j, v in enumerate(extra):
            index.insert(80 + j, v)
        index.validate()
        # a query at an original point must find it
        result = greedy_search(
            index,
            euclidean_scorer(vectors[3], np.concatenate([vectors, extra])),
            SearchParams(k=1, ef=40),
        )
        assert result.items[0][0] == 3


class TestPersistence:
    def test_round_trip(self, tmp_path):
        vectors = clustered(150, 6, seed=8)
        index = GraphIndex.build(vectors, m=6, ef_construction=16, seed=3)
        path = str(tmp_path / "index.bin")
        index.save(path)
        loaded = GraphIndex.load(path)
        assert structure(loaded) == structure(index)
        assert loaded.layer_node_counts() == index.layer_node_counts()
        loaded.validate()

    def test_truncated_file(self, tmp_path):
        index = GraphIndex.build(clustered(40, 4, seed=9), m=4, seed=0)
        path = tmp_path / "index.bin"
        index.save(str(path))
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(FileFormatError):
            GraphIndex.load(str(path))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"garbage-not-an-index")
        with pytest.raises(FileFormatError):
            GraphIndex.load(str(path))

    def test_insert_after_reload_matches_uninterrupted_build(self, tmp_path):
        vectors = clustered(60, 4, seed=10)
        full = GraphIndex.build(vectors, m=4, ef_construction=16, seed=7)
        partial = GraphIndex.build(vectors[:40], m=4, ef_construction=16, seed=7)
        path = str(tmp_path / "partial.bin")
        partial.save(path)
        resumed = GraphIndex.load(path)
        for i in range(40, 60):
            resumed.insert(i, vectors[i])
        assert structure(resumed) == structure(full)


class TestFlushPending:
    def _index(self):
        return GraphIndex.build(clustered(20, 3, seed=11), m=4, seed=0)

    def test_empty_buffer(self):
        index = self._index()
        n_before = len(index)
        policy = UpdatePolicy()
        admitted = flush_pending(index, policy, [], [])
        assert admitted == []
        assert len(index) == n_before

    def test_click_triggered_bypass(self):
        index = self._index()
        rng = np.random.default_rng(12)
        pending = [
            PendingItem(100 + i, rng.normal(size=3), click_triggered=True) for i in range(5)
        ]
        policy = UpdatePolicy(threshold_percentile=100.0)
        admitted = flush_pending(index, policy, pending, [])
        assert sorted(admitted) == [100, 101, 102, 103, 104]
        assert policy.pending == []
        index.validate()

    def test_50th_percentile_admits_top_half(self):
        index = self._index()
        rng = np.random.default_rng(13)
        pending = [PendingItem(200 + i, rng.normal(size=3)) for i in range(10)]
        # activity: item 200+i has one event of age i -> decayed score 0.9^i,
        # strictly decreasing with i, so the top half is 200..204
        activity = [(200 + i, float(i)) for i in range(10)]
        policy = UpdatePolicy(decay=0.9, threshold_percentile=50.0)
        admitted = flush_pending(index, policy, pending, activity)
        assert sorted(admitted) == [200, 201, 202, 203, 204]
        assert sorted(p.item_id for p in policy.pending) == [205, 206, 207, 208, 209]

    def test_percentile_rank_matches_sort_oracle(self):
        index = self._index()
        rng = np.random.default_rng(14)
        pending = [PendingItem(300 + i, rng.normal(size=3)) for i in range(12)]
        activity = []
        for i in range(12):
            for _ in range(int(rng.integers(0, 4))):
                activity.append((300 + i, float(rng.integers(0, 5))))
        q = 75.0
        policy = UpdatePolicy(decay=0.8, threshold_percentile=q)
        scores = {300 + i: 0.0 for i in range(12)}
        for item, age in activity:
            scores[item] += 0.8**age
        expected_k = int(np.floor(12 * (100 - q) / 100))
        expected = [
            i for i, _ in sorted(scores.items(), key=lambda e: (-e[1], e[0]))[:expected_k]
        ]
        admitted = flush_pending(index, policy, pending, activity)
        assert sorted(admitted) == sorted(expected)

    def test_ties_broken_by_id(self):
        index = self._index()
        rng = np.random.default_rng(15)
        pending = [PendingItem(400 + i, rng.normal(size=3)) for i in range(4)]
        activity = [(400 + i, 0.0) for i in range(4)]  # all scores equal
        policy = UpdatePolicy(threshold_percentile=50.0)
        admitted = flush_pending(index, policy, pending, activity)
        assert sorted(admitted) == [400, 401]  # lower ids win the tie

    def test_batch_flush_size_caps_admissions(self):
        index = self._index()
        rng = np.random.default_rng(16)
        pending = [PendingItem(500 + i, rng.normal(size=3)) for i in range(8)]
        activity = [(500 + i, float(i)) for i in range(8)]
        policy = UpdatePolicy(threshold_percentile=1e-9 + 0.0001, batch_flush_size=3)
        admitted = flush_pending(index, policy, pending, activity)
        assert len(admitted) == 3
        assert len(policy.pending) == 5
