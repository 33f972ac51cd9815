"""Backend parity: the compiled and pure-Python kernels must agree exactly."""

import numpy as np
import pytest

from nann import GraphIndex
from nann.kernels import available_backends, get_backend


def random_graph(n, d, max_deg, seed):
    """Random symmetric adjacency in the fixed-width array layout."""
    rng = np.random.default_rng(seed)
    vectors = rng.normal(size=(n, d))
    nbrs = np.zeros((n, max_deg), dtype=np.int32)
    cnts = np.zeros(n, dtype=np.int32)
    edges = set()
    for _ in range(n * max_deg // 2):
        a, b = rng.integers(0, n, size=2)
        if a == b or (a, b) in edges:
            continue
        if cnts[a] >= max_deg or cnts[b] >= max_deg:
            continue
        edges.add((int(a), int(b)))
        edges.add((int(b), int(a)))
        nbrs[a, cnts[a]] = b
        cnts[a] += 1
        nbrs[b, cnts[b]] = a
        cnts[b] += 1
    return vectors, nbrs, cnts


def call_backend(name, vectors, nbrs, cnts, query, entries, ef):
    mod = get_backend(name)
    n = len(vectors)
    stamps = np.zeros(n, dtype=np.int64)
    cand_d = np.empty(n + 1, dtype=np.float64)
    cand_i = np.empty(n + 1, dtype=np.int64)
    ids, dists = mod.search_layer(
        vectors, nbrs, cnts, query, entries, ef, stamps, 1, cand_d, cand_i
    )
    return ids, dists, stamps


two_backends = pytest.mark.skipif(
    len(available_backends()) < 2, reason="compiled kernel not built"
)


@two_backends
class TestBackendParity:
    def test_search_layer_identical(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            n = int(rng.integers(5, 200))
            vectors, nbrs, cnts = random_graph(n, 6, 8, seed=trial)
            query = rng.normal(size=6)
            entries = np.unique(rng.integers(0, n, size=int(rng.integers(1, 4))))
            ef = int(rng.integers(1, 20))
            ic, dc, sc = call_backend("compiled", vectors, nbrs, cnts, query, entries, ef)
            ip, dp, sp = call_backend("python", vectors, nbrs, cnts, query, entries, ef)
            np.testing.assert_array_equal(ic, ip)
            # distances may differ in the last ulp (summation order), never more
            np.testing.assert_allclose(dc, dp, rtol=1e-12, atol=0)
            np.testing.assert_array_equal(sc != 0, sp != 0)  # same visited set

    def test_index_build_matches(self):
        rng = np.random.default_rng(1)
        vectors = rng.normal(size=(250, 5))
        a = GraphIndex.build(vectors, m=5, ef_construction=16, seed=3, kernel_backend="compiled")
        b = GraphIndex.build(vectors, m=5, ef_construction=16, seed=3, kernel_backend="python")
        assert a.layer_node_counts() == b.layer_node_counts()
        for l in range(a.n_layers):
            for i in range(250):
                if a.level_of(i) >= l:
                    assert a.neighbors(l, i) == b.neighbors(l, i)


class TestKernelSemantics:
    @pytest.mark.parametrize("name", available_backends())
    def test_exhaustive_ef_returns_reachable_sorted(self, name):
        rng = np.random.default_rng(2)
        n = 60
        vectors, nbrs, cnts = random_graph(n, 4, 6, seed=5)
        query = rng.normal(size=4)
        entries = np.array([0], dtype=np.int64)
        ids, dists = call_backend(name, vectors, nbrs, cnts, query, entries, n)[:2]
        # oracle: BFS reachable set, distances by brute force
        reach = {0}
        frontier = [0]
        while frontier:
            nxt = []
            for s in frontier:
                for t in nbrs[s, : cnts[s]]:
                    if int(t) not in reach:
                        reach.add(int(t))
                        nxt.append(int(t))
            frontier = nxt
        d2 = ((vectors[sorted(reach)] - query) ** 2).sum(axis=1)
        expected = sorted(zip(d2, sorted(reach)))
        assert [i for _, i in expected] == list(ids)
        np.testing.assert_allclose([d for d, _ in expected], dists, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("name", available_backends())
    def test_ef_one_is_greedy_minimum(self, name):
        vectors = np.array([[float(i), 0.0] for i in range(10)])
        nbrs = np.zeros((10, 2), dtype=np.int32)
        cnts = np.zeros(10, dtype=np.int32)
        for i in range(9):  # path graph 0-1-...-9
            nbrs[i, cnts[i]] = i + 1
            cnts[i] += 1
            nbrs[i + 1, cnts[i + 1]] = i
            cnts[i + 1] += 1
        query = np.array([7.2, 0.0])
        ids, dists = call_backend(name, vectors, nbrs, cnts, query, np.array([0]), 1)[:2]
        assert list(ids) == [7]
