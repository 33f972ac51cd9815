"""Adaptive aggregation of irregular relevance-evaluation requests.

Concurrent searches submit variable-size groups of (user, item) pairs.
A single dispatcher drains them in FIFO order into fixed-capacity batches
for a pluggable evaluation engine, slicing any request that straddles a
batch boundary: the head fills the current batch, the tail waits for the
next.  A partial batch is dispatched when the flush timeout elapses or on
shutdown drain (without either rule the final fragment would wait
forever).  Scores are routed back per request, in pair order.
"""

from __future__ import annotations

import itertools
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, QueueShutdownError
from .metric import RelevanceModel, relevance_batch


@dataclass
class EvalRequest:
    """An ordered group of (user embedding, item id) pairs."""

    users: np.ndarray  # (n, d_h); a broadcast view is fine
    item_ids: np.ndarray  # (n,) int64
    request_id: int = -1

    def __len__(self) -> int:
        return len(self.item_ids)


class CompletionHandle:
    """Waitable result of one request: scores in submission order."""

    def __init__(self, n: int):
        self._event = threading.Event()
        self._scores: np.ndarray | None = None
        self._error: BaseException | None = None
        self.n = n

    def _complete(self, scores: np.ndarray) -> None:
        self._scores = scores
        self._event.set()

    def _fail(self, error: BaseException) -> None:
        self._error = error
        self._event.set()

    @property
    def done(self) -> bool:
        return self._event.is_set()

    def wait(self, timeout: float | None = None) -> np.ndarray:
        if not self._event.wait(timeout):
            raise TimeoutError("evaluation did not complete in time")
        if self._error is not None:
            raise self._error
        return self._scores


class BatchEngine:
    """Evaluation engine interface: fixed batch capacity, pure scoring."""

    batch_size: int
    invocations: int = 0
    simulated_seconds: float = 0.0

    def evaluate(self, users: np.ndarray, item_ids: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ModelBatchEngine(BatchEngine):
    """Vectorized CPU evaluator standing in for the accelerator cluster.

    ``overhead_s`` and ``per_pair_s`` model the fixed invocation cost and
    marginal pair cost; they accumulate in ``simulated_seconds`` for
    benchmarking without sleeping.
    """

    def __init__(
        self,
        model: RelevanceModel,
        item_embeddings: np.ndarray,
        batch_size: int = 256,
        overhead_s: float = 0.0,
        per_pair_s: float = 0.0,
    ):
        if batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        self.model = model
        self.item_embeddings = item_embeddings
        self.batch_size = batch_size
        self.overhead_s = overhead_s
        self.per_pair_s = per_pair_s
        self.invocations = 0
        self.simulated_seconds = 0.0

    def evaluate(self, users: np.ndarray, item_ids: np.ndarray) -> np.ndarray:
        self.invocations += 1
        self.simulated_seconds += self.overhead_s + self.per_pair_s * len(item_ids)
        return relevance_batch(
            self.model.metric, users, self.item_embeddings[item_ids]
        ).astype(np.float64)


class _Entry:
    __slots__ = ("request", "handle", "scores", "remaining", "offset", "submit_t", "failed")

    def __init__(self, request: EvalRequest):
        self.request = request
        self.handle = CompletionHandle(len(request))
        self.scores = np.empty(len(request), dtype=np.float64)
        self.remaining = len(request)
        self.offset = 0  # pairs already sliced into batches
        self.submit_t = time.perf_counter()
        self.failed = False


@dataclass
class DispatchStats:
    capacity: int
    invocations: int = 0
    total_pairs_submitted: int = 0
    total_pairs_dispatched: int = 0
    batch_sizes: list[int] = field(default_factory=list)
    timeout_flushes: int = 0
    drain_flushes: int = 0
    request_latencies_s: list[float] = field(default_factory=list)

    @property
    def mean_fill(self) -> float:
        if not self.batch_sizes:
            return 0.0
        return float(np.mean(self.batch_sizes)) / self.capacity

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "invocations": self.invocations,
            "total_pairs_submitted": self.total_pairs_submitted,
            "total_pairs_dispatched": self.total_pairs_dispatched,
            "mean_fill": self.mean_fill,
            "timeout_flushes": self.timeout_flushes,
            "drain_flushes": self.drain_flushes,
            "mean_request_latency_s": (
                float(np.mean(self.request_latencies_s))
                if self.request_latencies_s
                else 0.0
            ),
        }


class BatchQueue:
    """FIFO of evaluation requests with bounded pending backpressure."""

    def __init__(
        self,
        capacity: int,
        flush_timeout_s: float = 1e-3,
        max_pending_pairs: int | None = None,
    ):
        if capacity < 1:
            raise InvalidArgumentError("capacity must be >= 1")
        if max_pending_pairs is not None and max_pending_pairs < capacity:
            raise InvalidArgumentError("max_pending_pairs must be >= capacity")
        self.capacity = capacity
        self.flush_timeout_s = flush_timeout_s
        self.max_pending_pairs = max_pending_pairs
        self.submitted_pairs = 0
        self._entries: deque[_Entry] = deque()
        self._pending_pairs = 0
        self._lock = threading.Lock()
        self._work = threading.Condition(self._lock)
        self._space = threading.Condition(self._lock)
        self._shutdown = False
        self._ids = itertools.count()
        self.stats_ = None  # attached by the dispatcher

    def submit(self, request: EvalRequest) -> CompletionHandle:
        """Enqueue one request; blocks while the queue is over capacity."""
        if len(request) == 0:
            raise InvalidArgumentError("request must contain at least one pair")
        with self._lock:
            if self._shutdown:
                raise QueueShutdownError("queue is shut down; request rejected")
            if self.max_pending_pairs is not None:
                while self._pending_pairs >= self.max_pending_pairs:
                    self._space.wait()
                    if self._shutdown:
                        raise QueueShutdownError("queue shut down while waiting for space")
            if request.request_id < 0:
                request.request_id = next(self._ids)
            entry = _Entry(request)
            self._entries.append(entry)
            self._pending_pairs += len(request)
            self.submitted_pairs += len(request)
            self._work.notify_all()
            return entry.handle

    def shutdown(self) -> None:
        with self._lock:
            self._shutdown = True
            self._work.notify_all()
            self._space.notify_all()


def stats(queue: BatchQueue) -> DispatchStats:
    """Snapshot of the dispatch report for a queue."""
    report = queue.stats_ if queue.stats_ is not None else DispatchStats(capacity=queue.capacity)
    report.total_pairs_submitted = queue.submitted_pairs
    return report


class Dispatcher:
    """Single consumer assembling engine batches from one queue."""

    def __init__(self, queue: BatchQueue, engine: BatchEngine, pipeline: bool = False):
        if engine.batch_size != queue.capacity:
            raise InvalidArgumentError(
                f"engine batch size {engine.batch_size} != queue capacity {queue.capacity}"
            )
        self.queue = queue
        self.engine = engine
        self.pipeline = pipeline
        self.stats = DispatchStats(capacity=queue.capacity)
        queue.stats_ = self.stats
        self._thread: threading.Thread | None = None
        self._exec_slot: deque = deque(maxlen=1)
        self._exec_thread: threading.Thread | None = None
        self._exec_work = threading.Condition()
        self._exec_done = True
        self._stopped = threading.Event()

    # -- batch execution ------------------------------------------------

    def _execute(self, users, item_ids, segments, flush_kind: str) -> None:
        """Run the engine on one assembled batch and route the scores."""
        q = self.queue
        self.stats.invocations += 1
        self.stats.batch_sizes.append(len(item_ids))
        self.stats.total_pairs_dispatched += len(item_ids)
        if flush_kind == "timeout":
            self.stats.timeout_flushes += 1
        elif flush_kind == "drain":
            self.stats.drain_flushes += 1
        try:
            scores = self.engine.evaluate(users, item_ids)
            error = None
        except Exception as exc:  # engine failure affects only this batch
            scores, error = None, exc
        now = time.perf_counter()
        for entry, req_lo, batch_lo, n in segments:
            if error is not None:
                if not entry.failed:
                    entry.failed = True
                    entry.handle._fail(error)
                continue
            entry.scores[req_lo : req_lo + n] = scores[batch_lo : batch_lo + n]
            entry.remaining -= n
            if entry.remaining == 0 and not entry.failed:
                self.stats.request_latencies_s.append(now - entry.submit_t)
                entry.handle._complete(entry.scores)
        with q._lock:
            q._pending_pairs -= len(item_ids)
            q._space.notify_all()

    def _submit_exec(self, users, item_ids, segments, flush_kind: str) -> None:
        if not self.pipeline:
            self._execute(users, item_ids, segments, flush_kind)
            return
        with self._exec_work:
            while self._exec_slot:
                self._exec_work.wait()
            self._exec_slot.append((users, item_ids, segments, flush_kind))
            self._exec_work.notify_all()

    def _exec_loop(self) -> None:
        while True:
            with self._exec_work:
                while not self._exec_slot:
                    if self._stopped.is_set():
                        return
                    self._exec_work.wait(0.01)
                job = self._exec_slot.popleft()
                self._exec_work.notify_all()
            self._execute(*job)

    # -- assembly loop ----------------------------------------------------

    def _run(self) -> None:
        q = self.queue
        cap = q.capacity
        while True:
            users_parts: list[np.ndarray] = []
            ids_parts: list[np.ndarray] = []
            segments: list[tuple[_Entry, int, int, int]] = []
            fill = 0
            deadline: float | None = None
            flush_kind = "full"
            with q._lock:
                while True:
                    # take as much as fits from the FIFO head
                    while q._entries and fill < cap:
                        entry = q._entries[0]
                        room = cap - fill
                        tail = len(entry.request) - entry.offset
                        take = min(room, tail)
                        users_parts.append(
                            entry.request.users[entry.offset : entry.offset + take]
                        )
                        ids_parts.append(
                            entry.request.item_ids[entry.offset : entry.offset + take]
                        )
                        segments.append((entry, entry.offset, fill, take))
                        entry.offset += take
                        fill += take
                        if entry.offset == len(entry.request):
                            q._entries.popleft()
                    if fill == cap:
                        break
                    if q._shutdown and not q._entries:
                        flush_kind = "drain"
                        break
                    if fill == 0:
                        q._work.wait(0.05)
                        continue
                    if deadline is None:
                        deadline = time.perf_counter() + q.flush_timeout_s
                    remaining = deadline - time.perf_counter()
                    if remaining <= 0:
                        flush_kind = "timeout"
                        break
                    q._work.wait(remaining)
            if fill > 0:
                users = np.concatenate(users_parts, axis=0)
                item_ids = np.concatenate(ids_parts, axis=0)
                self._submit_exec(users, item_ids, segments, flush_kind)
            if fill == 0 and q._shutdown:
                return

    # -- lifecycle --------------------------------------------------------

    def start(self) -> "Dispatcher":
        if self.pipeline:
            self._exec_thread = threading.Thread(target=self._exec_loop, daemon=True)
            self._exec_thread.start()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def stop(self, drain: bool = True) -> None:
        """Shut the queue down; with ``drain`` waits until all work finishes."""
        self.queue.shutdown()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        self._stopped.set()
        if self._exec_thread is not None:
            with self._exec_work:
                self._exec_work.notify_all()
            self._exec_thread.join()
            self._exec_thread = None


def run_dispatcher(queue: BatchQueue, engine: BatchEngine, pipeline: bool = False) -> Dispatcher:
    """Start a dispatcher thread consuming ``queue`` into ``engine``."""
    return Dispatcher(queue, engine, pipeline=pipeline).start()


class BatchClient:
    """Adapts a queue into a search ``score_fn`` for one user embedding."""

    def __init__(self, queue: BatchQueue, user_embedding: np.ndarray):
        self.queue = queue
        self.user_embedding = np.asarray(user_embedding)

    def __call__(self, item_ids: np.ndarray) -> np.ndarray:
        item_ids = np.asarray(item_ids, dtype=np.int64)
        users = np.broadcast_to(
            self.user_embedding, (len(item_ids), len(self.user_embedding))
        )
        handle = self.queue.submit(EvalRequest(users=users, item_ids=item_ids))
        return handle.wait()
