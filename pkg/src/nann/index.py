"""Multi-layer navigable small-world index over item embeddings.

Construction distance is Euclidean on the item vectors (the learned
user-conditioned metric cannot define an item-item graph).  ``build`` is
literally iterated ``insert``, so offline construction and stream updates
share one code path.  Layer membership is nested: a node with level L
appears on layers 0..L; level draws are geometric with parameter
``level_prob``, capped at ``max_layers - 1``.

All tie-breaking is by lower id so construction is deterministic for a
fixed seed and insertion order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import struct

import numpy as np

from . import kernels
from .errors import FileFormatError, InvalidArgumentError

INDEX_MAGIC = b"NANN-IDX"
INDEX_VERSION = 1

_HEAD_FMT = "<IIIIdBqQIIq"  # version, L, m, efc, p, heuristic, seed, ordinal, n, dim, entry


class GraphIndex:
    """L-layer navigable graph with symmetric adjacency and capped degrees."""

    def __init__(
        self,
        dim: int,
        m: int = 16,
        ef_construction: int = 64,
        level_prob: float = 1.0 / 17.0,
        max_layers: int = 4,
        seed: int = 0,
        select_heuristic: bool = False,
        kernel_backend: str | None = None,
    ):
        if dim < 1:
            raise InvalidArgumentError("dim must be >= 1")
        if m < 2:
            raise InvalidArgumentError("m must be >= 2")
        if ef_construction < 1:
            raise InvalidArgumentError("ef_construction must be >= 1")
        if not 0.0 < level_prob < 1.0:
            raise InvalidArgumentError("level_prob must be in (0, 1)")
        if max_layers < 1:
            raise InvalidArgumentError("max_layers must be >= 1")
        self.dim = dim
        self.m = m
        self.ef_construction = ef_construction
        self.level_prob = level_prob
        self.max_layers = max_layers
        self.seed = seed
        self.select_heuristic = select_heuristic
        self._kernel = (
            kernels.get_backend(kernel_backend).search_layer
            if kernel_backend
            else kernels.search_layer
        )

        self._n = 0
        self._cap = 0
        self._entry_slot = -1
        self._top_level = -1
        self._level_rng = np.random.default_rng(seed)
        self._level_draws = 0
        self._stamp = 0
        self._slot_of: dict[int, int] = {}
        self._vectors = np.empty((0, dim), dtype=np.float64)
        self._ids = np.empty(0, dtype=np.int64)
        self._levels = np.empty(0, dtype=np.int32)
        self._nbrs = [np.empty((0, self._deg_cap(l)), dtype=np.int32) for l in range(max_layers)]
        self._cnts = [np.empty(0, dtype=np.int32) for _ in range(max_layers)]
        self._stamps = np.empty(0, dtype=np.int64)
        self._cand_d = np.empty(1, dtype=np.float64)
        self._cand_i = np.empty(1, dtype=np.int64)

    def _deg_cap(self, layer: int) -> int:
        return 2 * self.m if layer == 0 else self.m

    # ------------------------------------------------------------------
    # capacity
    # ------------------------------------------------------------------

    def _reserve(self, n: int) -> None:
        if n <= self._cap:
            return
        cap = max(n, 2 * self._cap, 16)
        self._cap = cap
        grown = np.zeros((cap, self.dim), dtype=np.float64)
        grown[: self._n] = self._vectors[: self._n]
        self._vectors = grown
        for name, dtype, fill in (
            ("_ids", np.int64, 0),
            ("_levels", np.int32, 0),
            ("_stamps", np.int64, 0),
        ):
            old = getattr(self, name)
            new = np.full(cap, fill, dtype=dtype)
            new[: self._n] = old[: self._n]
            setattr(self, name, new)
        for l in range(self.max_layers):
            new = np.zeros((cap, self._deg_cap(l)), dtype=np.int32)
            new[: self._n] = self._nbrs[l][: self._n]
            self._nbrs[l] = new
            newc = np.zeros(cap, dtype=np.int32)
            newc[: self._n] = self._cnts[l][: self._n]
            self._cnts[l] = newc
        self._cand_d = np.empty(cap + 1, dtype=np.float64)
        self._cand_i = np.empty(cap + 1, dtype=np.int64)

    # ------------------------------------------------------------------
    # introspection
    # ------------------------------------------------------------------

    def __len__(self) -> int:
        return self._n

    def __contains__(self, item_id: int) -> bool:
        return item_id in self._slot_of

    @property
    def entry_point(self) -> int | None:
        return None if self._entry_slot < 0 else int(self._ids[self._entry_slot])

    @property
    def n_layers(self) -> int:
        """Populated layer count (entry point's level + 1)."""
        return self._top_level + 1

    def item_ids(self) -> np.ndarray:
        return self._ids[: self._n].copy()

    def vector(self, item_id: int) -> np.ndarray:
        return self._vectors[self._slot_of[item_id]].copy()

    def level_of(self, item_id: int) -> int:
        return int(self._levels[self._slot_of[item_id]])

    def layer_node_counts(self) -> list[int]:
        """Number of nodes present on each layer, base layer first."""
        levels = self._levels[: self._n]
        return [int((levels >= l).sum()) for l in range(self.n_layers)]

    def neighbors(self, layer: int, item_id: int) -> list[int]:
        slot = self._slot_of[item_id]
        row = self._nbrs[layer][slot, : self._cnts[layer][slot]]
        return sorted(int(self._ids[s]) for s in row)

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    @classmethod
    def build(
        cls,
        vectors: np.ndarray,
        ids: np.ndarray | None = None,
        m: int = 16,
        ef_construction: int = 64,
        level_prob: float = 1.0 / 17.0,
        max_layers: int = 4,
        seed: int = 0,
        select_heuristic: bool = False,
        kernel_backend: str | None = None,
    ) -> "GraphIndex":
        """Index a batch of vectors; defined as iterated :meth:`insert`."""
        vectors = np.ascontiguousarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise InvalidArgumentError("vectors must be a nonempty (n, d) array")
        if ids is None:
            ids = np.arange(vectors.shape[0], dtype=np.int64)
        if len(set(int(i) for i in ids)) != len(ids):
            raise InvalidArgumentError("duplicate item ids")
        index = cls(
            dim=vectors.shape[1],
            m=m,
            ef_construction=ef_construction,
            level_prob=level_prob,
            max_layers=max_layers,
            seed=seed,
            select_heuristic=select_heuristic,
            kernel_backend=kernel_backend,
        )
        index._reserve(vectors.shape[0])
        for item_id, vec in zip(ids, vectors):
            index.insert(int(item_id), vec)
        return index

    def _draw_level(self) -> int:
        """Geometric level by inversion: one uniform per insert.

        floor(log(u) / log(p)) has P(level >= l) = p**l; capping at the top
        layer makes the cap level absorb the tail.  One persistent stream
        plus a draw counter keeps build == iterated insert and lets
        :meth:`load` replay the stream position.
        """
        u = float(self._level_rng.random())
        self._level_draws += 1
        if u <= 0.0:
            return self.max_layers - 1
        level = int(np.log(u) / np.log(self.level_prob))
        return min(level, self.max_layers - 1)

    def _search(self, layer: int, query: np.ndarray, entries: np.ndarray, ef: int):
        self._stamp += 1
        return self._kernel(
            self._vectors,
            self._nbrs[layer],
            self._cnts[layer],
            query,
            entries,
            ef,
            self._stamps,
            self._stamp,
            self._cand_d,
            self._cand_i,
        )

    def _select(self, cand_ids: np.ndarray, cand_d2: np.ndarray, k: int) -> list[int]:
        """Neighbor selection from (dist2, id)-sorted candidates."""
        if not self.select_heuristic or len(cand_ids) <= k:
            return [int(s) for s in cand_ids[:k]]
        kept: list[int] = []
        for c, d2 in zip(cand_ids, cand_d2):
            if len(kept) >= k:
                break
            if kept:
                diffs = self._vectors[kept] - self._vectors[c]
                if (np.einsum("ij,ij->i", diffs, diffs) < d2).any():
                    continue  # dominated by an already-kept neighbor
            kept.append(int(c))
        return kept

    def _row_remove(self, layer: int, slot: int, target: int) -> None:
        cnt = int(self._cnts[layer][slot])
        row = self._nbrs[layer][slot]
        for j in range(cnt):
            if row[j] == target:
                row[j] = row[cnt - 1]
                self._cnts[layer][slot] = cnt - 1
                return

    def _connect(self, layer: int, new_slot: int, nb: int) -> None:
        """Symmetric edge insertion with capacity re-selection on ``nb``."""
        cap = self._deg_cap(layer)
        cnt = int(self._cnts[layer][nb])
        if cnt < cap:
            self._nbrs[layer][nb, cnt] = new_slot
            self._cnts[layer][nb] = cnt + 1
            my = int(self._cnts[layer][new_slot])
            self._nbrs[layer][new_slot, my] = nb
            self._cnts[layer][new_slot] = my + 1
            return
        # nb is full: re-select its neighbor set from old + new
        old = [int(s) for s in self._nbrs[layer][nb, :cnt]]
        cands = old + [new_slot]
        diffs = self._vectors[cands] - self._vectors[nb]
        d2s = np.einsum("ij,ij->i", diffs, diffs)
        order = sorted(range(len(cands)), key=lambda i: (d2s[i], self._ids[cands[i]]))
        kept = self._select(
            np.array([cands[i] for i in order]),
            np.array([d2s[i] for i in order]),
            cap,
        )
        kept_set = set(kept)
        for r in old:
            if r not in kept_set:
                self._row_remove(layer, r, nb)
        self._nbrs[layer][nb, : len(kept)] = kept
        self._cnts[layer][nb] = len(kept)
        if new_slot in kept_set:
            my = int(self._cnts[layer][new_slot])
            self._nbrs[layer][new_slot, my] = nb
            self._cnts[layer][new_slot] = my + 1

    def insert(self, item_id: int, vector: np.ndarray) -> None:
        """Add one item; all structural invariants hold on return."""
        if item_id in self._slot_of:
            raise InvalidArgumentError(f"item id {item_id} already present")
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise InvalidArgumentError(f"vector shape {vector.shape} != ({self.dim},)")

        level = self._draw_level()
        self._reserve(self._n + 1)
        slot = self._n
        self._n += 1
        self._vectors[slot] = vector
        self._ids[slot] = item_id
        self._levels[slot] = level
        self._slot_of[item_id] = slot
        for l in range(self.max_layers):
            self._cnts[l][slot] = 0

        if self._entry_slot < 0:
            self._entry_slot = slot
            self._top_level = level
            return

        query = self._vectors[slot]
        entries = np.array([self._entry_slot], dtype=np.int64)
        for l in range(self._top_level, level, -1):
            ids, _ = self._search(l, query, entries, 1)
            entries = ids
        for l in range(min(level, self._top_level), -1, -1):
            cand_ids, cand_d2 = self._search(l, query, entries, self.ef_construction)
            for nb in self._select(cand_ids, cand_d2, self.m):
                self._connect(l, slot, nb)
            entries = cand_ids
        if level > self._top_level:
            self._top_level = level
            self._entry_slot = slot

    # ------------------------------------------------------------------
    # invariants
    # ------------------------------------------------------------------

    def validate(self) -> None:
        """Full structural sweep; raises on any broken invariant."""
        if self._n == 0:
            return
        levels = self._levels[: self._n]
        if self._entry_slot < 0:
            raise AssertionError("nonempty index without entry point")
        if levels[self._entry_slot] != self._top_level:
            raise AssertionError("entry point is not on the top layer")
        if int(levels.max()) != self._top_level:
            raise AssertionError("top level out of sync with node levels")
        for l in range(self.n_layers):
            cap = self._deg_cap(l)
            member = levels >= l
            for slot in np.nonzero(member)[0]:
                cnt = int(self._cnts[l][slot])
                if cnt > cap:
                    raise AssertionError(f"layer {l} slot {slot}: degree {cnt} > {cap}")
                row = self._nbrs[l][slot, :cnt]
                row_list = [int(x) for x in row]
                if len(set(row_list)) != cnt:
                    raise AssertionError(f"layer {l} slot {slot}: duplicate neighbor")
                for t in row_list:
                    if t == slot:
                        raise AssertionError(f"layer {l} slot {slot}: self loop")
                    if not member[t]:
                        raise AssertionError(
                            f"layer {l} slot {slot}: neighbor {t} not on layer (nesting)"
                        )
                    back = self._nbrs[l][t, : self._cnts[l][t]]
                    if slot not in back:
                        raise AssertionError(
                            f"layer {l}: edge {slot}->{t} missing reverse edge"
                        )

    def base_layer_components(self) -> int:
        """Connected component count of layer 0 (diagnostic, not an invariant)."""
        if self._n == 0:
            return 0
        seen = np.zeros(self._n, dtype=bool)
        components = 0
        for start in range(self._n):
            if seen[start]:
                continue
            components += 1
            stack = [start]
            seen[start] = True
            while stack:
                cur = stack.pop()
                for nb in self._nbrs[0][cur, : self._cnts[0][cur]]:
                    if not seen[nb]:
                        seen[nb] = True
                        stack.append(int(nb))
        return components

    # ------------------------------------------------------------------
    # searcher-facing raw views
    # ------------------------------------------------------------------

    def graph_view(self):
        """Raw arrays for search code: (ids, levels, per-layer (nbrs, cnts), entry_slot)."""
        return (
            self._ids[: self._n],
            self._levels[: self._n],
            [(self._nbrs[l], self._cnts[l]) for l in range(self.n_layers)],
            self._entry_slot,
        )

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def save(self, path: str) -> None:
        with open(path, "wb") as f:
            f.write(INDEX_MAGIC)
            f.write(
                struct.pack(
                    _HEAD_FMT,
                    INDEX_VERSION,
                    self.max_layers,
                    self.m,
                    self.ef_construction,
                    self.level_prob,
                    1 if self.select_heuristic else 0,
                    self.seed,
                    self._level_draws,
                    self._n,
                    self.dim,
                    self._entry_slot,
                )
            )
            n = self._n
            f.write(self._ids[:n].astype("<i8").tobytes())
            f.write(self._levels[:n].astype("<i4").tobytes())
            f.write(np.ascontiguousarray(self._vectors[:n], dtype="<f8").tobytes())
            for l in range(self.max_layers):
                cnts = self._cnts[l][:n]
                indptr = np.zeros(n + 1, dtype="<u8")
                indptr[1:] = np.cumsum(cnts, dtype=np.uint64)
                f.write(indptr.tobytes())
                targets = np.concatenate(
                    [self._nbrs[l][s, : cnts[s]] for s in range(n)]
                    or [np.empty(0, dtype=np.int32)]
                )
                f.write(targets.astype("<i4").tobytes())

    @classmethod
    def load(cls, path: str) -> "GraphIndex":
        with open(path, "rb") as f:
            raw = f.read()
        if raw[: len(INDEX_MAGIC)] != INDEX_MAGIC:
            raise FileFormatError("not an index file (bad magic)", path=path)
        off = len(INDEX_MAGIC)
        head_size = struct.calcsize(_HEAD_FMT)
        if len(raw) < off + head_size:
            raise FileFormatError("truncated index header", path=path)
        (
            version,
            max_layers,
            m,
            efc,
            level_prob,
            heuristic,
            seed,
            level_draws,
            n,
            dim,
            entry_slot,
        ) = struct.unpack_from(_HEAD_FMT, raw, off)
        off += head_size
        if version != INDEX_VERSION:
            raise FileFormatError(f"unsupported index version {version}", path=path)

        def take(dtype, count):
            nonlocal off
            dt = np.dtype(dtype)
            nbytes = dt.itemsize * count
            if len(raw) < off + nbytes:
                raise FileFormatError(f"truncated block at byte {off}", path=path)
            arr = np.frombuffer(raw, dtype=dt, count=count, offset=off)
            off += nbytes
            return arr

        ids = take("<i8", n).astype(np.int64)
        levels = take("<i4", n).astype(np.int32)
        vectors = take("<f8", n * dim).astype(np.float64).reshape(n, dim)

        index = cls(
            dim=dim,
            m=m,
            ef_construction=efc,
            level_prob=level_prob,
            max_layers=max_layers,
            seed=seed,
            select_heuristic=bool(heuristic),
        )
        index._reserve(max(n, 1))
        index._n = n
        if level_draws:
            index._level_rng.random(level_draws)  # replay the stream position
        index._level_draws = level_draws
        index._entry_slot = entry_slot
        index._ids[:n] = ids
        index._levels[:n] = levels
        index._vectors[:n] = vectors
        index._slot_of = {int(ids[s]): s for s in range(n)}
        index._top_level = int(levels.max()) if n else -1
        for l in range(max_layers):
            indptr = take("<u8", n + 1)
            total = int(indptr[-1]) if n else 0
            targets = take("<i4", total)
            cap = index._deg_cap(l)
            for s in range(n):
                lo, hi = int(indptr[s]), int(indptr[s + 1])
                cnt = hi - lo
                if cnt > cap:
                    raise FileFormatError(
                        f"layer {l} slot {s}: degree {cnt} > cap {cap}", path=path
                    )
                index._cnts[l][s] = cnt
                index._nbrs[l][s, :cnt] = targets[lo:hi]
        if off != len(raw):
            raise FileFormatError(f"{len(raw) - off} trailing bytes", path=path)
        return index


# ----------------------------------------------------------------------
# stream updates
# ----------------------------------------------------------------------


@dataclass
class PendingItem:
    """An item waiting for admission into the index."""

    item_id: int
    vector: np.ndarray
    click_triggered: bool = False


@dataclass
class UpdatePolicy:
    """Admission policy for stream updates.

    Activity decays exponentially with event age; per flush, the items
    above the dynamic threshold (the configured percentile rank of all
    pending items' scores) are admitted, click-triggered items bypass the
    threshold, and everything else stays in ``pending``.
    """

    decay: float = 0.9
    threshold_percentile: float = 50.0
    batch_flush_size: int = 1024
    pending: list[PendingItem] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise InvalidArgumentError("decay must be in (0, 1]")
        if not 0.0 < self.threshold_percentile <= 100.0:
            raise InvalidArgumentError("threshold_percentile must be in (0, 100]")
        if self.batch_flush_size < 1:
            raise InvalidArgumentError("batch_flush_size must be >= 1")


def decayed_activity(
    policy: UpdatePolicy, activity_log: list[tuple[int, float]]
) -> dict[int, float]:
    """Per-item activity: sum of decay**age over the item's events."""
    scores: dict[int, float] = {}
    for item_id, age in activity_log:
        scores[item_id] = scores.get(item_id, 0.0) + policy.decay ** float(age)
    return scores


def flush_pending(
    index: GraphIndex,
    policy: UpdatePolicy,
    pending: list[PendingItem],
    activity_log: list[tuple[int, float]],
) -> list[int]:
    """Admit active pending items into the index in one batch.

    Returns the admitted ids in insertion order.  Non-admitted items are
    retained in ``policy.pending`` for the next flush.
    """
    waiting = policy.pending + list(pending)
    policy.pending = []
    if not waiting:
        return []
    scores = decayed_activity(policy, activity_log)

    clicks = [p for p in waiting if p.click_triggered]
    others = [p for p in waiting if not p.click_triggered]
    ranked = sorted(
        others, key=lambda p: (-scores.get(p.item_id, 0.0), p.item_id)
    )
    quota = int(np.floor(len(others) * (100.0 - policy.threshold_percentile) / 100.0))
    admitted = sorted(clicks, key=lambda p: p.item_id) + ranked[:quota]
    admitted = admitted[: policy.batch_flush_size]

    admitted_ids = []
    admitted_set = set()
    for p in admitted:
        index.insert(p.item_id, p.vector)
        admitted_ids.append(p.item_id)
        admitted_set.add(p.item_id)
    policy.pending = [p for p in waiting if p.item_id not in admitted_set]
    return admitted_ids
