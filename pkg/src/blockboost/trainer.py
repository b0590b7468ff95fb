"""Boosting driver with three interchangeable histogram pipelines.

``single`` runs everything on one node (the oracle), ``row`` is the
row-distributed dense all-reduce baseline, ``block`` is the block-distributed
parameter-server pipeline. With ``deterministic=True`` gradient statistics
are snapped to a 2**-30 grid, which makes every histogram sum exact and
order-independent, so the three modes grow identical trees.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

from .blockpredict import run_block_predict
from .comms import HEADER, HEADER_BYTES, Cluster, ClusterTopology, allreduce_dense, log_virtual_allreduce
from .datamatrix import FeatureLookup, QuantizedDataset, partition
from .errors import ConfigError
from .histagg import (
    HistServerState, HistTensorMsg, LeafTotalsMsg, SplitDecision,
    SplitParams, SplitReportMsg, accumulate_dense, accumulate_local, add_zero_buckets,
    add_zero_buckets_dense, check_entry_bound, dense_buffer_bytes, find_best_split,
    find_best_split_dense, global_best_split, leaf_totals, merge_tensors,
)
from .treemodel import LEAF_CAPACITY, Ensemble, Tree, exit_leaves_topdown

MODES = ("single", "row", "block")
MARGIN_CLAMP = 36.0
SNAP_BITS = 30


@dataclass
class TrainConfig:
    rounds: int = 20
    max_depth: int = 6
    num_buckets: int = 255
    learning_rate: float = 0.3
    reg_lambda: float = 1.0
    min_gain: float = 0.0
    min_child_weight: float = 1.0
    mode: str = "block"
    rows: int = 1
    cols: int = 1
    servers: int = 1
    workers: int | None = None
    deterministic: bool = False
    seed: int = 0
    # row mode: dense buffers larger than this are accounted, not materialized
    max_dense_bytes: int = 32 * 2**20
    threads: int = 1

    def validate(self) -> "TrainConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if not 0 <= self.max_depth or 2 ** self.max_depth > LEAF_CAPACITY:
            raise ConfigError(f"max_depth must be in [0, 6], got {self.max_depth}")
        if self.num_buckets < 2:
            raise ConfigError("num_buckets must be >= 2")
        if self.reg_lambda <= 0:
            raise ConfigError("reg_lambda must be > 0")
        if self.min_gain < 0 or self.min_child_weight < 0:
            raise ConfigError("min_gain and min_child_weight must be >= 0")
        if self.rows < 1 or self.cols < 1 or self.servers < 1:
            raise ConfigError("rows, cols and servers must be >= 1")
        if self.mode == "row" and self.cols != 1:
            raise ConfigError("row mode needs cols == 1")
        if self.workers is not None and self.mode != "single" and self.rows * self.cols != self.workers:
            raise ConfigError(f"grid {self.rows}x{self.cols} != {self.workers} workers")
        return self

    @property
    def split_params(self) -> SplitParams:
        return SplitParams(self.reg_lambda, self.min_gain, self.min_child_weight)


class GradientPair(NamedTuple):
    g: np.ndarray
    h: np.ndarray


def sigmoid(margin):
    return 1.0 / (1.0 + np.exp(-np.clip(margin, -MARGIN_CLAMP, MARGIN_CLAMP)))


def logistic_gradients(labels, margins) -> GradientPair:
    p = sigmoid(np.asarray(margins, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64)
    return GradientPair(p - y, p * (1.0 - p))


def logloss(labels, margins) -> float:
    if len(labels) == 0:
        return 0.0
    m = np.clip(np.asarray(margins, dtype=np.float64), -MARGIN_CLAMP, MARGIN_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    # log(1 + e^m) - y m, computed stably
    return float(np.mean(np.logaddexp(0.0, m) - y * m))


def auc(labels, scores) -> float:
    y = np.asarray(labels)
    pos = int(y.sum())
    neg = len(y) - pos
    if pos == 0 or neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[y == 1].sum() - pos * (pos + 1) / 2) / (pos * neg))


def snap(x, bits: int = SNAP_BITS) -> np.ndarray:
    scale = float(2 ** bits)
    return np.round(np.asarray(x, dtype=np.float64) * scale) / scale


def base_score(labels) -> float:
    if len(labels) == 0:
        return 0.0
    p = min(max(float(np.mean(labels)), 1e-6), 1 - 1e-6)
    return math.log(p / (1 - p))


class _GrowNode:
    __slots__ = ("depth", "feature", "bucket", "threshold", "left", "right")

    def __init__(self, depth: int):
        self.depth = depth
        self.feature = -1
        self.bucket = -1
        self.threshold = 0.0
        self.left = None
        self.right = None


def _freeze(root: _GrowNode, weights=None) -> tuple[Tree, list[_GrowNode]]:
    leaves: list[_GrowNode] = []

    def spec(node):
        if node.left is None:
            leaves.append(node)
            return 0.0
        return (node.feature, node.threshold, spec(node.left), spec(node.right), node.bucket)

    tree = Tree.build(spec(root))
    if weights is not None:
        tree = tree.with_weights(weights)
    return tree, leaves


# --------------------------------------------------------------------------
# pipelines

class _Pipeline:
    mode = ""

    def __init__(self, q: QuantizedDataset, config: TrainConfig, cluster: Cluster):
        self.q = q
        self.config = config
        self.cluster = cluster
        self.params = config.split_params
        self.dense_equivalent_bytes = 0

    @property
    def ledger(self):
        return self.cluster.ledger

    def _note_dense_equivalent(self, num_active: int, workers: int) -> int:
        nbytes = dense_buffer_bytes(num_active, self.q.num_features, self.q.num_buckets)
        self.dense_equivalent_bytes += nbytes * 2 * (workers - 1)
        return nbytes


class SinglePipeline(_Pipeline):
    """Everything on one node: top-down traversal and whole-dataset histograms."""

    mode = "single"

    def __init__(self, q, config, cluster):
        super().__init__(q, config, cluster)
        self.lookup = FeatureLookup.of(q)
        self.block = q.whole_block()

    def assign_leaves(self, tree: Tree, tree_id: int) -> np.ndarray:
        with self.cluster.step("predict") as t, t.node(0):
            return exit_leaves_topdown(tree, self.lookup, self.q.num_rows)

    def find_splits(self, tree, exits, g, h, active, tree_id, level) -> list[SplitDecision]:
        with self.cluster.step("histogram") as t, t.node(0):
            hist = accumulate_local(self.block, exits, g, h, active)
        with self.cluster.step("split") as t, t.node(0):
            G, H = leaf_totals(exits, g, h, active)
            hist = add_zero_buckets(hist, active, G, H, self.q.zero_bucket)
            return find_best_split(hist, active, G, H, self.params)

    def final_totals(self, tree, exits, g, h, tree_id):
        return leaf_totals(exits, g, h, np.arange(tree.num_leaves))


class RowPipeline(_Pipeline):
    """Row-distributed baseline: local histograms, dense all-reduce per level."""

    mode = "row"

    def __init__(self, q, config, cluster):
        super().__init__(q, config, cluster)
        self.grid = partition(q, config.rows, 1)
        self.lookup = FeatureLookup.of(q)

    @property
    def workers(self) -> int:
        return self.config.rows

    def assign_leaves(self, tree, tree_id):
        exits = np.empty(self.q.num_rows, dtype=np.int64)
        with self.cluster.step("predict") as t:
            for w, (r0, r1) in enumerate(self.grid.row_ranges):
                with t.node(w):
                    exits[r0:r1] = exit_leaves_topdown(tree, self.lookup, 0, rows=np.arange(r0, r1))
        return exits

    def _allreduce_totals(self, exits, g, h, leaves, phase="leaf_totals"):
        bufs = []
        for r0, r1 in self.grid.row_ranges:
            G, H = leaf_totals(exits[r0:r1], g[r0:r1], h[r0:r1], leaves)
            bufs.append(np.stack([G, H], axis=-1))
        out = allreduce_dense(bufs, self.ledger, phase)[0]
        return out[:, 0], out[:, 1]

    def find_splits(self, tree, exits, g, h, active, tree_id, level):
        F, B = self.q.num_features, self.q.num_buckets
        nbytes = self._note_dense_equivalent(len(active), self.workers)
        materialize = nbytes <= self.config.max_dense_bytes
        locals_ = []
        with self.cluster.step("histogram") as t:
            for w in range(self.workers):
                r0, r1 = self.grid.row_ranges[w]
                block = self.grid.block(w, 0)
                with t.node(w):
                    if materialize:
                        locals_.append(accumulate_dense(block, exits[r0:r1], g[r0:r1], h[r0:r1],
                                                        active, F, B))
                    else:
                        locals_.append(accumulate_local(block, exits[r0:r1], g[r0:r1], h[r0:r1],
                                                        active))
        G, H = self._allreduce_totals(exits, g, h, active)
        if materialize:
            reduced = allreduce_dense(locals_, self.ledger, "histogram")[0]
        else:
            t0 = time.perf_counter()
            reduced = locals_[0]
            for other in locals_[1:]:
                reduced = merge_tensors(reduced, other)
            log_virtual_allreduce(self.ledger, nbytes, self.workers, "histogram",
                                  time.perf_counter() - t0)
        with self.cluster.step("split") as t, t.node(0):
            if materialize:
                full = add_zero_buckets_dense(reduced, G, H, self.q.zero_bucket)
                return find_best_split_dense(full, active, G, H, self.params)
            full = add_zero_buckets(reduced, active, G, H, self.q.zero_bucket)
            return find_best_split(full, active, G, H, self.params)

    def final_totals(self, tree, exits, g, h, tree_id):
        return self._allreduce_totals(exits, g, h, np.arange(tree.num_leaves))


class BlockPipeline(_Pipeline):
    """Block-distributed parameter-server pipeline."""

    mode = "block"

    def __init__(self, q, config, cluster):
        super().__init__(q, config, cluster)
        topo = cluster.topology
        self.grid = partition(q, topo.rows, topo.cols, workers=config.workers)
        self.col_servers = sorted({topo.route("col", c) for c in range(topo.cols)})
        self.server_features = {
            s: sum(self.grid.col_ranges[c][1] - self.grid.col_ranges[c][0]
                   for c in topo.col_ranges_of(s))
            for s in range(topo.servers)
        }

    def assign_leaves(self, tree, tree_id):
        return run_block_predict(self.cluster, self.grid, tree, tree_id, self.q.num_rows)

    def _push_leaf_totals(self, exits, g, h, leaves, tree_id, level):
        """Worker (r, 0) of every row range pushes its per-leaf (G, H) to each
        column-phase server; servers sum them in row-range order."""
        topo = self.cluster.topology
        with self.cluster.step("leaf_totals") as t:
            for r, (r0, r1) in enumerate(self.grid.row_ranges):
                wid = topo.worker_id(r, 0)
                with t.node(wid):
                    G, H = leaf_totals(exits[r0:r1], g[r0:r1], h[r0:r1], leaves)
                    payload = LeafTotalsMsg(wid, tree_id, level, np.asarray(leaves), G, H).to_bytes()
                for s in self.col_servers:
                    self.cluster.ps_push(payload, "col", topo.col_ranges_of(s)[0], "leaf_totals", wid)
        totals = {}
        with self.cluster.step("leaf_totals") as t:
            for s in self.col_servers:
                with t.node(("s", s)):
                    msgs = [LeafTotalsMsg.from_bytes(p) for _, _, p in
                            self.cluster.servers[s].drain(ordered=True)]
                    G = np.zeros(len(leaves))
                    H = np.zeros(len(leaves))
                    for m in msgs:
                        G += m.grad
                        H += m.hess
                    totals[s] = (G, H)
        return totals

    def find_splits(self, tree, exits, g, h, active, tree_id, level):
        topo = self.cluster.topology
        cluster = self.cluster
        B = self.q.num_buckets
        self._note_dense_equivalent(len(active), topo.workers)
        totals = self._push_leaf_totals(exits, g, h, active, tree_id, level)

        def worker_task(rc):
            r, c = rc
            wid = topo.worker_id(r, c)
            block = self.grid.block(r, c)
            r0, r1 = block.row_range
            with timer.node(("w", wid)):
                hist = accumulate_local(block, exits[r0:r1], g[r0:r1], h[r0:r1], active)
                check_entry_bound(hist, tree.num_leaves, block.num_features,
                                  self.server_features[topo.route("col", c)], B)
                payload = HistTensorMsg(wid, tree_id, level, hist).to_bytes()
            return wid, payload

        cells = [(r, c) for r in range(topo.rows) for c in range(topo.cols)]
        with cluster.step("histogram") as timer:
            results = cluster.run_workers(worker_task, cells)
        for (_r, c), (wid, payload) in results:
            cluster.ps_push(payload, "col", c, "histogram", sender=wid)

        states = {}
        with cluster.step("histogram") as timer:
            for s in self.col_servers:
                with timer.node(("s", s)):
                    owned = {c: self.grid.col_ranges[c] for c in topo.col_ranges_of(s)}
                    state = HistServerState(owned, expected=topo.rows)
                    for (_kind, c), _sender, payload in cluster.servers[s].drain(
                            ordered=cluster.deterministic):
                        state.merge(c, HistTensorMsg.from_bytes(payload))
                    states[s] = state

        reports = {}
        with cluster.step("split") as timer:
            for s in self.col_servers:
                with timer.node(("s", s)):
                    G, H = totals[s]
                    full = add_zero_buckets(states[s].complete(), active, G, H, self.q.zero_bucket)
                    local = find_best_split(full, active, G, H, self.params)
                    reports[s] = SplitReportMsg(s, tree_id, level, tuple(local)).to_bytes()
        gathered = {s: SplitReportMsg.from_bytes(cluster.ps_pull(reports[s], "split"))
                    for s in self.col_servers}
        with cluster.step("split") as timer, timer.node("driver"):
            by_leaf = {
                leaf: global_best_split([gathered[s].decisions[i] for s in self.col_servers],
                                        expected=len(self.col_servers))
                for i, leaf in enumerate(active)
            }
            decisions = [by_leaf[leaf] for leaf in active]
            broadcast = SplitReportMsg(0, tree_id, level, tuple(decisions)).to_bytes()
        for _ in range(topo.workers):
            SplitReportMsg.from_bytes(cluster.ps_pull(broadcast, "split"))
        return decisions

    def final_totals(self, tree, exits, g, h, tree_id):
        """Leaf totals go to the driver, which broadcasts the leaf weights."""
        topo = self.cluster.topology
        leaves = np.arange(tree.num_leaves)
        G = np.zeros(tree.num_leaves)
        H = np.zeros(tree.num_leaves)
        for r, (r0, r1) in enumerate(self.grid.row_ranges):
            wid = topo.worker_id(r, 0)
            Gr, Hr = leaf_totals(exits[r0:r1], g[r0:r1], h[r0:r1], leaves)
            msg = LeafTotalsMsg(wid, tree_id, 0, leaves, Gr, Hr)
            got = LeafTotalsMsg.from_bytes(self.cluster.ps_pull(msg, "leaf_totals"))
            G += got.grad
            H += got.hess
        weights = _WeightsMsg(tree_id, -G / (H + self.config.reg_lambda))
        for _ in range(topo.workers):
            self.cluster.ps_pull(weights, "split")
        return G, H


@dataclass(frozen=True)
class _WeightsMsg:
    tree_id: int
    weights: np.ndarray

    def to_bytes(self) -> bytes:
        return HEADER.pack(0, self.tree_id, 0, len(self.weights)) + self.weights.astype("<f8").tobytes()

    @staticmethod
    def wire_size(num_leaves: int) -> int:
        return HEADER_BYTES + 8 * num_leaves


PIPELINES = {"single": SinglePipeline, "row": RowPipeline, "block": BlockPipeline}


def make_pipeline(q: QuantizedDataset, config: TrainConfig, cluster: Cluster | None = None) -> _Pipeline:
    config.validate()
    if cluster is None:
        if config.mode == "single":
            topo = ClusterTopology(1, 1, 1)
        elif config.mode == "row":
            topo = ClusterTopology(config.rows, 1, 1)
        else:
            topo = ClusterTopology(config.rows, config.cols, config.servers)
        cluster = Cluster(topo, deterministic=config.deterministic, threads=config.threads)
    return PIPELINES[config.mode](q, config, cluster)


def grow_tree(config: TrainConfig, pipeline: _Pipeline, grad, hess, tree_id: int = 0
              ) -> tuple[Tree, np.ndarray]:
    """Level-wise growth to ``max_depth``; returns the weighted tree and the
    exit leaf of every training row under it."""
    q = pipeline.q
    ledger = pipeline.ledger
    root = _GrowNode(0)
    exits = None
    stale = True
    for level in range(config.max_depth):
        ledger.level = level
        tree, leaves = _freeze(root)
        exits = pipeline.assign_leaves(tree, tree_id)
        stale = False
        active = [i for i, node in enumerate(leaves) if node.depth == level]
        if not active:
            break
        decisions = pipeline.find_splits(tree, exits, grad, hess, active, tree_id, level)
        grew = False
        for d in decisions:
            if not d.is_split:
                continue
            node = leaves[d.leaf]
            node.feature, node.bucket = d.feature, d.bucket
            node.threshold = q.threshold(d.feature, d.bucket)
            node.left, node.right = _GrowNode(node.depth + 1), _GrowNode(node.depth + 1)
            grew = True
        if not grew:
            break
        stale = True
    tree, _ = _freeze(root)
    if stale or exits is None:
        ledger.level = config.max_depth
        exits = pipeline.assign_leaves(tree, tree_id)
    G, H = pipeline.final_totals(tree, exits, grad, hess, tree_id)
    return tree.with_weights(-G / (H + config.reg_lambda)), exits


@dataclass
class IterationMetrics:
    iteration: int
    logloss: float
    auc: float
    predict_bytes: int
    hist_bytes: int
    split_bytes: int
    compute_us: float
    comm_us: float


METRIC_COLUMNS = tuple(IterationMetrics.__dataclass_fields__)


@dataclass
class TrainResult:
    ensemble: Ensemble
    config: TrainConfig
    cluster: Cluster
    metrics: list = field(default_factory=list)
    margins: np.ndarray = None
    dense_equivalent_hist_bytes: int = 0

    @property
    def ledger(self):
        return self.cluster.ledger

    def compute_us(self, phase: str | None = None) -> float:
        src = self.cluster.compute_s
        return 1e6 * (src[phase] if phase else sum(src.values()))

    def comm_us(self, phase: str | None = None) -> float:
        return self.ledger.wall_time_us(phase)


def train(config: TrainConfig, dataset: QuantizedDataset, cluster: Cluster | None = None) -> TrainResult:
    config.validate()
    pipeline = make_pipeline(dataset, config, cluster)
    cluster = pipeline.cluster
    ledger = cluster.ledger
    labels = dataset.labels.astype(np.float64)
    ens = Ensemble(trees=[], learning_rate=config.learning_rate, base_score=base_score(labels))
    margins = np.full(dataset.num_rows, ens.base_score)
    result = TrainResult(ensemble=ens, config=config, cluster=cluster)

    def record(it: int, compute_before: float):
        result.metrics.append(IterationMetrics(
            iteration=it,
            logloss=logloss(labels, margins),
            auc=auc(labels, margins),
            predict_bytes=ledger.total_bytes("predict", it),
            hist_bytes=ledger.total_bytes("histogram", it),
            split_bytes=ledger.total_bytes("split", it),
            compute_us=1e6 * (sum(cluster.compute_s.values()) - compute_before),
            comm_us=ledger.wall_time_us(iteration=it),
        ))

    record(0, 0.0)
    for t in range(config.rounds):
        it = t + 1
        ledger.iteration = it
        before = sum(cluster.compute_s.values())
        g, h = logistic_gradients(labels, margins)
        if config.deterministic:
            g, h = snap(g), snap(h)
        tree, exits = grow_tree(config, pipeline, g, h, tree_id=t)
        ens.trees.append(tree)
        # reuse this round's exit table instead of re-scoring the ensemble
        margins = margins + config.learning_rate * tree.leaf_weight[exits]
        record(it, before)
    result.margins = margins
    result.dense_equivalent_hist_bytes = pipeline.dense_equivalent_bytes
    return result


def predict(ensemble: Ensemble, matrix) -> tuple[np.ndarray, np.ndarray]:
    """Margin and probability for every row of a SparseMatrix or QuantizedDataset."""
    margin = ensemble.predict_margin(FeatureLookup.of(matrix), matrix.num_rows)
    return margin, sigmoid(margin)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
