"""Bounded score-ordered candidate pool shared by parallel searchers."""

from __future__ import annotations

import heapq
import threading

from .errors import InvalidArgumentError


class CandidatePool:
    """Keeps the K highest-scoring (item, score) entries ever pushed.

    Higher score is better; on equal scores the lower item id wins.  Push
    and read are linearizable (one internal lock), so any number of
    searcher threads may share one pool.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidArgumentError("capacity must be >= 1")
        self.capacity = capacity
        # min-heap keyed (score, -id): the root is the worst kept entry
        self._heap: list[tuple[float, int]] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, item_id: int, score: float) -> bool:
        """Offer an entry; returns True if it is kept."""
        key = (score, -item_id)
        with self._lock:
            if len(self._heap) < self.capacity:
                heapq.heappush(self._heap, key)
                return True
            if key > self._heap[0]:
                heapq.heapreplace(self._heap, key)
                return True
            return False

    def worst_score(self) -> float:
        """Score of the worst kept entry, or -inf while not yet full."""
        with self._lock:
            if len(self._heap) < self.capacity:
                return float("-inf")
            return self._heap[0][0]

    def top(self, k: int | None = None) -> list[tuple[int, float]]:
        """Best entries, descending by (score, lower id first)."""
        with self._lock:
            entries = sorted(self._heap, key=lambda e: (-e[0], -e[1]))
        if k is not None:
            entries = entries[:k]
        return [(-neg_id, score) for score, neg_id in entries]
