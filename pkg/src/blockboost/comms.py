"""Simulated cluster transport: parameter-server push/pull and binomial-tree
all-reduce, with per-message byte and time accounting.

Every payload is really serialized to ``bytes`` and decoded on the receiving
side; the ledger records ``len(payload)``, never in-memory object sizes.
"""
from __future__ import annotations

import csv
import os
import queue
import struct
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor, as_completed
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NotReadyError, ProtocolError, RoutingError

PHASES = ("predict", "histogram", "split", "leaf_totals")
DIRECTIONS = ("push", "pull", "allreduce")
HEADER = struct.Struct("<IIII")
HEADER_BYTES = HEADER.size  # 16
LEDGER_COLUMNS = ("phase", "direction", "bytes", "wall_time_us", "iteration", "tree_depth_level")


def threads_from_env(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("BLOCKBOOST_THREADS", default)))
    except ValueError:
        return default


@dataclass(frozen=True)
class CommRecord:
    phase: str
    direction: str
    bytes: int
    wall_time_us: float
    iteration: int
    tree_depth_level: int
    header_bytes: int = 0


class CommLedger:
    """Append-only record of every message; safe for concurrent appends."""

    def __init__(self):
        self._records: list[CommRecord] = []
        self._lock = threading.Lock()
        self.iteration = 0
        self.level = 0

    def log(self, phase: str, direction: str, nbytes: int, wall_time_s: float = 0.0,
            header_bytes: int = 0) -> CommRecord:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        if direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {direction!r}")
        rec = CommRecord(phase, direction, int(nbytes), wall_time_s * 1e6,
                         self.iteration, self.level, header_bytes)
        with self._lock:
            self._records.append(rec)
        return rec

    @property
    def records(self) -> tuple[CommRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def total_bytes(self, phase: str | None = None, iteration: int | None = None) -> int:
        return sum(r.bytes for r in self.records
                   if (phase is None or r.phase == phase)
                   and (iteration is None or r.iteration == iteration))

    def header_bytes(self, phase: str | None = None) -> int:
        return sum(r.header_bytes for r in self.records if phase is None or r.phase == phase)

    def wall_time_us(self, phase: str | None = None, iteration: int | None = None) -> float:
        return sum(r.wall_time_us for r in self.records
                   if (phase is None or r.phase == phase)
                   and (iteration is None or r.iteration == iteration))

    def phase_totals(self) -> dict[str, dict]:
        out = {}
        for phase in PHASES:
            recs = [r for r in self.records if r.phase == phase]
            total = sum(r.bytes for r in recs)
            head = sum(r.header_bytes for r in recs)
            out[phase] = {
                "messages": len(recs),
                "bytes": total,
                "header_bytes": head,
                "payload_bytes": total - head,
                "wall_time_us": sum(r.wall_time_us for r in recs),
            }
        return out

    def to_csv(self, path, zero_times: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LEDGER_COLUMNS)
            for r in self.records:
                wt = 0 if zero_times else round(r.wall_time_us, 3)
                w.writerow([r.phase, r.direction, r.bytes, wt, r.iteration, r.tree_depth_level])


@dataclass(frozen=True)
class ClusterTopology:
    """R x C worker grid plus S servers.

    Worker ``(r, c)`` has id ``r * C + c``. Row range ``r`` is served by
    server ``r % S`` during prediction, column range ``c`` by ``c % S``
    during histogram aggregation.
    """

    rows: int
    cols: int
    servers: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.servers < 1:
            raise ConfigError("grid and server counts must be positive")

    @property
    def workers(self) -> int:
        return self.rows * self.cols

    def worker_id(self, r: int, c: int) -> int:
        return r * self.cols + c

    def worker_coords(self, wid: int) -> tuple[int, int]:
        return divmod(wid, self.cols)

    def route(self, kind: str, index: int) -> int:
        if kind == "row" and 0 <= index < self.rows:
            return index % self.servers
        if kind == "col" and 0 <= index < self.cols:
            return index % self.servers
        raise RoutingError(f"no server for {kind} range {index}")

    def row_ranges_of(self, server: int) -> list[int]:
        return [r for r in range(self.rows) if r % self.servers == server]

    def col_ranges_of(self, server: int) -> list[int]:
        return [c for c in range(self.cols) if c % self.servers == server]


@dataclass(frozen=True)
class Receipt:
    server: int
    nbytes: int


class ServerNode:
    """A server with a single-consumer inbox of serialized messages."""

    def __init__(self, server_id: int):
        self.server_id = server_id
        self.inbox: queue.Queue = queue.Queue()

    def drain(self, ordered: bool = False) -> list[tuple[tuple[str, int], int, bytes]]:
        """Pop everything queued, optionally sorted by sender id."""
        items = []
        while True:
            try:
                items.append(self.inbox.get_nowait())
            except queue.Empty:
                break
        if ordered:
            items.sort(key=lambda it: it[1])
        return items


class StepTimer:
    """Per-node wall time of one parallel step; the slowest node sets its length."""

    def __init__(self):
        self.per_node: dict = defaultdict(float)

    @contextmanager
    def node(self, node_id):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.per_node[node_id] += time.perf_counter() - t0

    @property
    def seconds(self) -> float:
        return max(self.per_node.values(), default=0.0)


@dataclass
class Cluster:
    """One process standing in for workers, servers and the links between them."""

    topology: ClusterTopology
    ledger: CommLedger = field(default_factory=CommLedger)
    deterministic: bool = False
    threads: int = 1

    def __post_init__(self):
        self.servers = [ServerNode(s) for s in range(self.topology.servers)]
        self.compute_s: dict[str, float] = defaultdict(float)

    @contextmanager
    def step(self, phase: str):
        timer = StepTimer()
        yield timer
        self.compute_s[phase] += timer.seconds

    def run_workers(self, fn, items):
        """Apply ``fn`` to each item as if on independent nodes.

        Results come back in item order when deterministic, otherwise in
        completion order; each result is paired with its item.
        """
        items = list(items)
        if self.threads <= 1 or len(items) <= 1:
            return [(it, fn(it)) for it in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            futures = {pool.submit(fn, it): it for it in items}
            if self.deterministic:
                return [(it, fut.result()) for fut, it in futures.items()]
            return [(futures[f], f.result()) for f in as_completed(futures)]

    def ps_push(self, msg, kind: str, index: int, phase: str, sender: int) -> Receipt:
        """Enqueue a message on the server owning ``(kind, index)``.

        ``msg`` is either already-packed bytes (so the sender can account
        packing as its own compute) or an object with ``to_bytes()``.
        """
        server = self.topology.route(kind, index)
        payload = msg if isinstance(msg, (bytes, bytearray)) else msg.to_bytes()
        t0 = time.perf_counter()
        self.servers[server].inbox.put(((kind, index), sender, bytes(payload)))
        dt = time.perf_counter() - t0
        self.ledger.log(phase, "push", len(payload), dt, header_bytes=HEADER_BYTES)
        return Receipt(server, len(payload))

    def ps_pull(self, response, phase: str) -> bytes:
        """Carry a server response back to a worker as bytes.

        Servers raise NotReadyError before producing ``response`` when their
        barrier is unmet, so a pull can only ever see complete state.
        """
        payload = response if isinstance(response, (bytes, bytearray)) else response.to_bytes()
        t0 = time.perf_counter()
        payload = bytes(payload)
        dt = time.perf_counter() - t0
        self.ledger.log(phase, "pull", len(payload), dt, header_bytes=HEADER_BYTES)
        return payload


def binomial_tree_edges(n: int) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Reduce edges (src -> dst) onto rank 0 and the mirrored broadcast edges."""
    reduce_edges = []
    distance = 1
    while distance < n:
        for rank in range(0, n, 2 * distance):
            peer = rank + distance
            if peer < n:
                reduce_edges.append((peer, rank))
        distance *= 2
    broadcast = [(dst, src) for src, dst in reversed(reduce_edges)]
    return reduce_edges, broadcast


def allreduce_dense(buffers: list[np.ndarray], ledger: CommLedger | None = None,
                    phase: str = "histogram") -> list[np.ndarray]:
    """Binomial-tree all-reduce (sum) of equally sized float64 buffers.

    Each edge carries the whole buffer as bytes. Returns one independent
    copy of the sum per participant.
    """
    if not buffers:
        return []
    shape = buffers[0].shape
    for b in buffers:
        if b.shape != shape:
            raise ProtocolError(f"buffer shape {b.shape} != {shape}")
    work = [np.array(b, dtype=np.float64, copy=True) for b in buffers]
    reduce_edges, bcast_edges = binomial_tree_edges(len(work))
    for src, dst in reduce_edges:
        t0 = time.perf_counter()
        wire = work[src].tobytes()
        work[dst] += np.frombuffer(wire, dtype=np.float64).reshape(shape)
        if ledger is not None:
            ledger.log(phase, "allreduce", len(wire), time.perf_counter() - t0)
    for src, dst in bcast_edges:
        t0 = time.perf_counter()
        wire = work[src].tobytes()
        work[dst] = np.frombuffer(wire, dtype=np.float64).reshape(shape).copy()
        if ledger is not None:
            ledger.log(phase, "allreduce", len(wire), time.perf_counter() - t0)
    return work


def log_virtual_allreduce(ledger: CommLedger, nbytes: int, n: int, phase: str,
                          wall_time_s: float = 0.0) -> int:
    """Account an all-reduce whose buffer is too large to materialize.

    Logs the same 2(n-1) full-buffer edges a real run would; the measured
    reduction time is spread evenly over them. Returns total bytes.
    """
    reduce_edges, bcast_edges = binomial_tree_edges(n)
    edges = len(reduce_edges) + len(bcast_edges)
    for _ in range(edges):
        ledger.log(phase, "allreduce", nbytes, wall_time_s / max(edges, 1))
    return nbytes * edges


__all__ = [
    "Cluster", "ClusterTopology", "CommLedger", "CommRecord", "NotReadyError",
    "allreduce_dense", "binomial_tree_edges", "log_virtual_allreduce",
]
