"""Block-distributed Quickscorer.

Each worker evaluates only the nodes whose feature lies in its column range,
folds the bitstrings of the false ones into one word per row, and pushes
the batch to the server owning its row range. The server ANDs the partial
words from all C column-workers and reads exit leaves off the lowest set bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .comms import HEADER, HEADER_BYTES, Cluster
from .datamatrix import BlockGrid, SparseMatrixBlock
from .errors import NotReadyError, ProtocolError, RoutingError
from .treemodel import ALL_ONES, Tree, compile_bitstrings, lowest_set_bit

MASK_BYTES = 8


@dataclass(frozen=True)
class PartialBitvectorMsg:
    worker_id: int
    tree_id: int
    row_range: tuple[int, int]
    bitvectors: np.ndarray

    def to_bytes(self) -> bytes:
        head = HEADER.pack(self.worker_id, self.tree_id, *self.row_range)
        return head + np.ascontiguousarray(self.bitvectors, dtype="<u8").tobytes()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "PartialBitvectorMsg":
        worker_id, tree_id, r0, r1 = HEADER.unpack_from(payload)
        bits = np.frombuffer(payload, dtype="<u8", offset=HEADER_BYTES).astype(np.uint64)
        if len(bits) != r1 - r0:
            raise ProtocolError(f"{len(bits)} bitvectors for rows [{r0}, {r1})")
        return cls(worker_id, tree_id, (r0, r1), bits)

    @staticmethod
    def wire_size(num_rows: int) -> int:
        return HEADER_BYTES + MASK_BYTES * num_rows


@dataclass(frozen=True)
class ExitTable:
    tree_id: int
    row_range: tuple[int, int]
    exit_leaf: np.ndarray

    def to_bytes(self) -> bytes:
        head = HEADER.pack(0, self.tree_id, *self.row_range)
        return head + self.exit_leaf.astype(np.uint8).tobytes()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "ExitTable":
        _, tree_id, r0, r1 = HEADER.unpack_from(payload)
        leaves = np.frombuffer(payload, dtype=np.uint8, offset=HEADER_BYTES).astype(np.int64)
        return cls(tree_id, (r0, r1), leaves)

    @staticmethod
    def wire_size(num_rows: int) -> int:
        return HEADER_BYTES + num_rows


def evaluable_nodes(tree: Tree, col_range) -> np.ndarray:
    c0, c1 = col_range
    return np.flatnonzero((tree.feature >= c0) & (tree.feature < c1))


def find_false_partial(tree: Tree, block: SparseMatrixBlock, masks=None) -> np.ndarray:
    """Per-row partial bitvector for the rows of ``block``.

    Only nodes testing a feature inside the block's column range are
    evaluated; absent entries read as 0.
    """
    if masks is None:
        masks = compile_bitstrings(tree)
    r0 = block.row_range[0]
    out = np.full(block.num_rows, ALL_ONES, dtype=np.uint64)
    for n in evaluable_nodes(tree, block.col_range):
        sl = block.feature_slice(int(tree.feature[n]))
        gamma = tree.threshold[n]
        local_rows = block.rows[sl] - r0
        if 0.0 <= gamma:
            false_rows = local_rows[block.values[sl] > gamma]
        else:
            # absent entries are 0 > gamma, so they are false too
            present_true = np.zeros(block.num_rows, dtype=bool)
            present_true[local_rows[block.values[sl] <= gamma]] = True
            false_rows = np.flatnonzero(~present_true)
        out[false_rows] &= masks[n]
    return out


class PredictServerState:
    """AND-accumulator for one (tree, row range) on its row-phase server."""

    def __init__(self, tree_id: int, row_range, expected: int):
        self.tree_id = tree_id
        self.row_range = tuple(row_range)
        self.expected = expected
        self.mask = np.full(row_range[1] - row_range[0], ALL_ONES, dtype=np.uint64)
        self.received: set[int] = set()

    @property
    def ready(self) -> bool:
        return len(self.received) == self.expected


def server_and_merge(state: PredictServerState, msg: PartialBitvectorMsg) -> PredictServerState:
    if tuple(msg.row_range) != state.row_range:
        raise RoutingError(f"rows {msg.row_range} sent to server holding {state.row_range}")
    if msg.tree_id != state.tree_id:
        raise ProtocolError(f"tree {msg.tree_id} pushed to state of tree {state.tree_id}")
    if msg.worker_id in state.received:
        raise ProtocolError(f"duplicate push from worker {msg.worker_id} for tree {msg.tree_id}")
    state.mask &= msg.bitvectors
    state.received.add(msg.worker_id)
    return state


def resolve_exits(state: PredictServerState, tree: Tree) -> ExitTable:
    if not state.ready:
        raise NotReadyError(
            f"rows {state.row_range}: {len(state.received)}/{state.expected} pushes received")
    leaves = lowest_set_bit(state.mask)
    if len(leaves) and leaves.max() >= tree.num_leaves:
        raise ProtocolError("merged bitvector points past the last leaf")
    return ExitTable(state.tree_id, state.row_range, leaves)


def run_block_predict(cluster: Cluster, grid: BlockGrid, tree: Tree, tree_id: int = 0,
                      num_rows: int | None = None, phase: str = "predict") -> np.ndarray:
    """Run the full push/merge/pull protocol; returns the exit leaf of every row."""
    topo = cluster.topology
    R, C = grid.shape
    if (R, C) != (topo.rows, topo.cols):
        raise ProtocolError(f"grid {R}x{C} does not match topology {topo.rows}x{topo.cols}")
    masks = compile_bitstrings(tree)
    states = {r: PredictServerState(tree_id, grid.row_ranges[r], C) for r in range(R)}

    def worker_task(rc):
        r, c = rc
        wid = topo.worker_id(r, c)
        with timer.node(("w", wid)):
            block = grid.block(r, c)
            bits = find_false_partial(tree, block, masks)
            payload = PartialBitvectorMsg(wid, tree_id, block.row_range, bits).to_bytes()
        return wid, payload

    cells = [(r, c) for r in range(R) for c in range(C)]
    with cluster.step(phase) as timer:
        results = cluster.run_workers(worker_task, cells)
    for (r, _c), (wid, payload) in results:
        cluster.ps_push(payload, "row", r, phase, sender=wid)

    with cluster.step(phase) as timer:
        replies = {}
        for server in cluster.servers:
            with timer.node(("s", server.server_id)):
                for (_kind, r), _sender, payload in server.drain(ordered=cluster.deterministic):
                    server_and_merge(states[r], PartialBitvectorMsg.from_bytes(payload))
                for r in topo.row_ranges_of(server.server_id):
                    replies[r] = resolve_exits(states[r], tree).to_bytes()

    n = num_rows if num_rows is not None else grid.row_ranges[-1][1]
    exits = np.full(n, -1, dtype=np.int64)
    for r in range(R):
        for c in range(C):
            wire = cluster.ps_pull(replies[r], phase)
            table = ExitTable.from_bytes(wire)
            exits[table.row_range[0]:table.row_range[1]] = table.exit_leaf
    return exits
