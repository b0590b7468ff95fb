"""Sparse gradient histograms: local accumulation, server merge, split finding.

A histogram is a COO tensor keyed by (leaf, feature, bucket) holding
(grad_sum, hess_sum). Workers only ship entries that some row touched. The
bucket holding the value 0 is filled in on the server as
``leaf_total - sum(present buckets)`` once per-leaf totals are known.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .comms import HEADER, HEADER_BYTES
from .datamatrix import SparseMatrixBlock
from .errors import CommunicationBoundError, NotReadyError, ProtocolError, RoutingError

ENTRY_DTYPE = np.dtype([
    ("leaf", "<u4"), ("feature", "<u4"), ("bucket", "<u4"), ("grad", "<f8"), ("hess", "<f8"),
])
ENTRY_BYTES = ENTRY_DTYPE.itemsize  # 28
DENSE_CELL_BYTES = 16
LEAF_TOTAL_DTYPE = np.dtype([("leaf", "<u4"), ("grad", "<f8"), ("hess", "<f8")])
SPLIT_RECORD = struct.Struct("<IiiId")  # leaf, feature, bucket, valid, gain
SPLIT_BYTES = SPLIT_RECORD.size  # 24


@dataclass(frozen=True, eq=False)
class SparseHistTensor:
    """Coalesced entries sorted by (leaf, feature, bucket)."""

    leaf: np.ndarray
    feature: np.ndarray
    bucket: np.ndarray
    grad: np.ndarray
    hess: np.ndarray

    @classmethod
    def empty(cls) -> "SparseHistTensor":
        z = np.empty(0, dtype=np.int64)
        return cls(z, z, z, np.empty(0), np.empty(0))

    @classmethod
    def from_entries(cls, leaf, feature, bucket, grad, hess, drop_zero: bool = True) -> "SparseHistTensor":
        """Sum duplicate keys (in input order) and sort."""
        leaf = np.asarray(leaf, dtype=np.int64)
        feature = np.asarray(feature, dtype=np.int64)
        bucket = np.asarray(bucket, dtype=np.int64)
        grad = np.asarray(grad, dtype=np.float64)
        hess = np.asarray(hess, dtype=np.float64)
        if len(leaf) == 0:
            return cls.empty()
        order = np.lexsort((bucket, feature, leaf))
        l, f, b = leaf[order], feature[order], bucket[order]
        new = np.ones(len(l), dtype=bool)
        new[1:] = (l[1:] != l[:-1]) | (f[1:] != f[:-1]) | (b[1:] != b[:-1])
        starts = np.flatnonzero(new)
        g = np.add.reduceat(grad[order], starts)
        h = np.add.reduceat(hess[order], starts)
        keep = slice(None)
        if drop_zero:
            keep = (g != 0.0) | (h != 0.0)
        return cls(l[starts][keep], f[starts][keep], b[starts][keep], g[keep], h[keep])

    @property
    def nnz(self) -> int:
        return len(self.leaf)

    def __len__(self) -> int:
        return self.nnz

    def cell(self, leaf: int, feature: int, bucket: int) -> tuple[float, float]:
        hit = (self.leaf == leaf) & (self.feature == feature) & (self.bucket == bucket)
        idx = np.flatnonzero(hit)
        return (float(self.grad[idx[0]]), float(self.hess[idx[0]])) if len(idx) else (0.0, 0.0)

    def to_dense(self, num_leaves: int, num_features: int, num_buckets: int) -> np.ndarray:
        out = np.zeros((num_leaves, num_features, num_buckets, 2))
        out[self.leaf, self.feature, self.bucket, 0] = self.grad
        out[self.leaf, self.feature, self.bucket, 1] = self.hess
        return out

    def pack(self) -> np.ndarray:
        rec = np.empty(self.nnz, dtype=ENTRY_DTYPE)
        rec["leaf"] = self.leaf
        rec["feature"] = self.feature
        rec["bucket"] = self.bucket
        rec["grad"] = self.grad
        rec["hess"] = self.hess
        return rec

    @classmethod
    def unpack(cls, rec: np.ndarray) -> "SparseHistTensor":
        return cls(rec["leaf"].astype(np.int64), rec["feature"].astype(np.int64),
                   rec["bucket"].astype(np.int64), rec["grad"].astype(np.float64),
                   rec["hess"].astype(np.float64))

    def equals(self, other: "SparseHistTensor") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("leaf", "feature", "bucket", "grad", "hess"))


@dataclass(frozen=True)
class HistTensorMsg:
    worker_id: int
    tree_id: int
    level: int
    tensor: SparseHistTensor

    def to_bytes(self) -> bytes:
        return (HEADER.pack(self.worker_id, self.tree_id, self.level, self.tensor.nnz)
                + self.tensor.pack().tobytes())

    @classmethod
    def from_bytes(cls, payload: bytes) -> "HistTensorMsg":
        wid, tid, level, count = HEADER.unpack_from(payload)
        rec = np.frombuffer(payload, dtype=ENTRY_DTYPE, offset=HEADER_BYTES)
        if len(rec) != count:
            raise ProtocolError(f"header says {count} entries, payload has {len(rec)}")
        return cls(wid, tid, level, SparseHistTensor.unpack(rec))

    @staticmethod
    def wire_size(nnz: int) -> int:
        return HEADER_BYTES + ENTRY_BYTES * nnz


@dataclass(frozen=True)
class LeafTotalsMsg:
    worker_id: int
    tree_id: int
    level: int
    leaves: np.ndarray
    grad: np.ndarray
    hess: np.ndarray

    def to_bytes(self) -> bytes:
        rec = np.empty(len(self.leaves), dtype=LEAF_TOTAL_DTYPE)
        rec["leaf"], rec["grad"], rec["hess"] = self.leaves, self.grad, self.hess
        return HEADER.pack(self.worker_id, self.tree_id, self.level, len(rec)) + rec.tobytes()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "LeafTotalsMsg":
        wid, tid, level, _ = HEADER.unpack_from(payload)
        rec = np.frombuffer(payload, dtype=LEAF_TOTAL_DTYPE, offset=HEADER_BYTES)
        return cls(wid, tid, level, rec["leaf"].astype(np.int64),
                   rec["grad"].astype(np.float64), rec["hess"].astype(np.float64))

    @staticmethod
    def wire_size(num_leaves: int) -> int:
        return HEADER_BYTES + LEAF_TOTAL_DTYPE.itemsize * num_leaves


@dataclass(frozen=True)
class SplitParams:
    reg_lambda: float = 1.0
    min_gain: float = 0.0
    min_child_weight: float = 1.0


@dataclass(frozen=True)
class SplitDecision:
    leaf: int
    feature: int = -1
    bucket: int = -1
    gain: float = 0.0
    left_weight: float = 0.0
    right_weight: float = 0.0

    @property
    def is_split(self) -> bool:
        return self.feature >= 0

    @classmethod
    def no_split(cls, leaf: int) -> "SplitDecision":
        return cls(leaf=leaf)

    def key(self):
        """Sort key: larger gain first, then lower feature, then lower bucket."""
        if not self.is_split:
            return (1, 0.0, 0, 0)
        return (0, -self.gain, self.feature, self.bucket)


@dataclass(frozen=True)
class SplitReportMsg:
    sender: int
    tree_id: int
    level: int
    decisions: tuple

    def to_bytes(self) -> bytes:
        body = b"".join(
            SPLIT_RECORD.pack(d.leaf, d.feature, d.bucket, int(d.is_split), d.gain)
            for d in self.decisions)
        return HEADER.pack(self.sender, self.tree_id, self.level, len(self.decisions)) + body

    @classmethod
    def from_bytes(cls, payload: bytes) -> "SplitReportMsg":
        sender, tid, level, count = HEADER.unpack_from(payload)
        out = []
        for i in range(count):
            leaf, feat, bucket, valid, gain = SPLIT_RECORD.unpack_from(
                payload, HEADER_BYTES + i * SPLIT_BYTES)
            out.append(SplitDecision(leaf, feat, bucket, gain) if valid else SplitDecision.no_split(leaf))
        return cls(sender, tid, level, tuple(out))

    @staticmethod
    def wire_size(num_leaves: int) -> int:
        return HEADER_BYTES + SPLIT_BYTES * num_leaves


def accumulate_local(block: SparseMatrixBlock, exits, grad, hess, active_leaves=None) -> SparseHistTensor:
    """Sum (g, h) of the block's present entries into (exit leaf, feature, bucket).

    ``exits``, ``grad`` and ``hess`` are indexed by row relative to the
    block's first row. Only leaves in ``active_leaves`` (all if None) are kept.
    """
    exits = np.asarray(exits)
    if len(exits) != block.num_rows:
        raise ProtocolError(f"{len(exits)} exit leaves for a block of {block.num_rows} rows")
    if len(exits) and exits.min() < 0:
        raise ProtocolError(f"row {block.row_range[0] + int(np.argmin(exits))} has no exit leaf")
    local = block.rows - block.row_range[0]
    leaf = exits[local]
    sel = slice(None)
    if active_leaves is not None:
        sel = np.isin(leaf, np.asarray(active_leaves))
    return SparseHistTensor.from_entries(
        leaf[sel], block.features[sel], block.buckets[sel],
        np.asarray(grad)[local][sel], np.asarray(hess)[local][sel])


def accumulate_dense(block: SparseMatrixBlock, exits, grad, hess, leaf_slots, num_features: int,
                     num_buckets: int) -> np.ndarray:
    """Dense ``(len(leaf_slots), F, B, 2)`` buffer of the block's present entries.

    ``leaf_slots`` lists the leaf ids given a slot, in slot order.
    """
    exits = np.asarray(exits)
    leaf_slots = np.asarray(leaf_slots, dtype=np.int64)
    slot_of = np.full(int(max(leaf_slots.max(initial=0), exits.max(initial=0))) + 1, -1, dtype=np.int64)
    slot_of[leaf_slots] = np.arange(len(leaf_slots))
    local = block.rows - block.row_range[0]
    slot = slot_of[exits[local]]
    sel = slot >= 0
    flat = (slot[sel] * num_features + block.features[sel]) * num_buckets + block.buckets[sel]
    size = len(leaf_slots) * num_features * num_buckets
    g = np.bincount(flat, weights=np.asarray(grad)[local][sel], minlength=size)
    h = np.bincount(flat, weights=np.asarray(hess)[local][sel], minlength=size)
    return np.stack([g, h], axis=-1).reshape(len(leaf_slots), num_features, num_buckets, 2)


def leaf_totals(exits, grad, hess, leaves) -> tuple[np.ndarray, np.ndarray]:
    """Per-leaf (G, H) for the given leaf ids."""
    leaves = np.asarray(leaves, dtype=np.int64)
    size = int(max(leaves.max(initial=-1), np.max(exits, initial=-1))) + 1
    G = np.bincount(exits, weights=grad, minlength=size)
    H = np.bincount(exits, weights=hess, minlength=size)
    return G[leaves], H[leaves]


def merge_tensors(a: SparseHistTensor, b: SparseHistTensor) -> SparseHistTensor:
    return SparseHistTensor.from_entries(
        np.concatenate([a.leaf, b.leaf]), np.concatenate([a.feature, b.feature]),
        np.concatenate([a.bucket, b.bucket]), np.concatenate([a.grad, b.grad]),
        np.concatenate([a.hess, b.hess]))


def server_merge_hist(state: SparseHistTensor, tensor: SparseHistTensor, col_range) -> SparseHistTensor:
    """Cell-wise sum of ``tensor`` into ``state``; both must lie in ``col_range``."""
    c0, c1 = col_range
    if tensor.nnz and (tensor.feature.min() < c0 or tensor.feature.max() >= c1):
        raise RoutingError(f"tensor has features outside [{c0}, {c1})")
    if state.nnz == 0:
        return tensor
    return merge_tensors(state, tensor)


def entry_bound(num_leaves: int, server_features: int, num_buckets: int) -> int:
    return num_leaves * server_features * num_buckets


def check_entry_bound(tensor: SparseHistTensor, num_leaves: int, block_features: int,
                      server_features: int, num_buckets: int) -> None:
    """Reject a push holding more entries than leaves x features x buckets allows."""
    for label, nfeat in (("server", server_features), ("block", block_features)):
        bound = entry_bound(num_leaves, nfeat, num_buckets)
        if tensor.nnz > bound:
            raise CommunicationBoundError(
                f"{tensor.nnz} entries exceed {label} bound {num_leaves}x{nfeat}x{num_buckets}={bound}")


class HistServerState:
    """Histogram accumulator for the column ranges owned by one server."""

    def __init__(self, col_ranges: dict[int, tuple[int, int]], expected: int):
        self.col_ranges = dict(col_ranges)
        self.expected = expected
        self.hist = {c: SparseHistTensor.empty() for c in col_ranges}
        self.received = {c: set() for c in col_ranges}

    def merge(self, c: int, msg: HistTensorMsg) -> None:
        if c not in self.col_ranges:
            raise RoutingError(f"column range {c} not owned here")
        if msg.worker_id in self.received[c]:
            raise ProtocolError(f"duplicate histogram push from worker {msg.worker_id}")
        self.hist[c] = server_merge_hist(self.hist[c], msg.tensor, self.col_ranges[c])
        self.received[c].add(msg.worker_id)

    @property
    def ready(self) -> bool:
        return all(len(s) == self.expected for s in self.received.values())

    def complete(self) -> SparseHistTensor:
        if not self.ready:
            raise NotReadyError("not every row-block worker has pushed its histogram")
        out = SparseHistTensor.empty()
        for c in sorted(self.hist):
            out = merge_tensors(out, self.hist[c]) if out.nnz else self.hist[c]
        return out


def add_zero_buckets(hist: SparseHistTensor, leaves, G, H, zero_bucket,
                     features=None) -> SparseHistTensor:
    """Fill the implicit-zero bucket of every (leaf, feature) group present in ``hist``.

    The residual ``leaf_total - sum(present)`` goes to the bucket containing
    0. Groups absent from ``hist`` hold the whole leaf total in that bucket;
    they stay implicit unless ``features`` lists the features to materialize
    for every leaf. Exactly-zero residuals are not stored.
    """
    if features is not None:
        return _materialize_groups(hist, leaves, G, H, zero_bucket, features)
    if hist.nnz == 0:
        return hist
    leaves = np.asarray(leaves, dtype=np.int64)
    lut = np.full(int(max(leaves.max(initial=0), hist.leaf.max())) + 1, -1, dtype=np.int64)
    lut[leaves] = np.arange(len(leaves))
    slot = lut[hist.leaf]
    if np.any(slot < 0):
        raise ProtocolError("histogram holds a leaf with no known total")
    starts, _ = _group_bounds(hist)
    g_sum = _segmented_prefix(hist.grad, starts)
    h_sum = _segmented_prefix(hist.hess, starts)
    ends = np.append(starts[1:], hist.nnz) - 1
    g_res = np.asarray(G)[slot[starts]] - g_sum[ends]
    h_res = np.asarray(H)[slot[starts]] - h_sum[ends]
    keep = (g_res != 0.0) | (h_res != 0.0)
    z_leaf = hist.leaf[starts][keep]
    z_feat = hist.feature[starts][keep]
    z_bucket = np.asarray(zero_bucket)[z_feat]
    return SparseHistTensor.from_entries(
        np.concatenate([hist.leaf, z_leaf]), np.concatenate([hist.feature, z_feat]),
        np.concatenate([hist.bucket, z_bucket]), np.concatenate([hist.grad, g_res[keep]]),
        np.concatenate([hist.hess, h_res[keep]]), drop_zero=False)


def _materialize_groups(hist: SparseHistTensor, leaves, G, H, zero_bucket, features):
    leaves = np.asarray(leaves, dtype=np.int64)
    features = np.asarray(features, dtype=np.int64)
    nl, nf = len(leaves), len(features)
    leaf_slot = np.full(int(max(leaves.max(initial=0), hist.leaf.max(initial=0))) + 1, -1, np.int64)
    leaf_slot[leaves] = np.arange(nl)
    feat_slot = np.full(int(max(features.max(initial=0), hist.feature.max(initial=0))) + 1, -1,
                        np.int64)
    feat_slot[features] = np.arange(nf)
    ls, fs = leaf_slot[hist.leaf], feat_slot[hist.feature]
    if np.any(ls < 0) or np.any(fs < 0):
        raise ProtocolError("histogram holds a (leaf, feature) outside the requested groups")
    group = ls * nf + fs
    g_sum = np.bincount(group, weights=hist.grad, minlength=nl * nf)
    h_sum = np.bincount(group, weights=hist.hess, minlength=nl * nf)
    g_res = np.repeat(np.asarray(G, dtype=np.float64), nf) - g_sum
    h_res = np.repeat(np.asarray(H, dtype=np.float64), nf) - h_sum
    keep = (g_res != 0.0) | (h_res != 0.0)
    z_leaf = np.repeat(leaves, nf)[keep]
    z_feat = np.tile(features, nl)[keep]
    return SparseHistTensor.from_entries(
        np.concatenate([hist.leaf, z_leaf]), np.concatenate([hist.feature, z_feat]),
        np.concatenate([hist.bucket, np.asarray(zero_bucket)[z_feat]]),
        np.concatenate([hist.grad, g_res[keep]]), np.concatenate([hist.hess, h_res[keep]]),
        drop_zero=False)


def _group_bounds(hist: SparseHistTensor) -> tuple[np.ndarray, np.ndarray]:
    """Start index of each (leaf, feature) group and each entry's group id."""
    new = np.ones(hist.nnz, dtype=bool)
    new[1:] = (hist.leaf[1:] != hist.leaf[:-1]) | (hist.feature[1:] != hist.feature[:-1])
    return np.flatnonzero(new), np.cumsum(new) - 1


def _segmented_prefix(values: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Running sums restarting at each group start, added strictly left to right.

    Summation order matches ``np.cumsum`` over a dense bucket axis, so sparse
    and dense scans see bit-identical prefixes.
    """
    n = len(values)
    out = np.array(values, dtype=np.float64, copy=True)
    if n == 0:
        return out
    group_start = np.repeat(starts, np.diff(np.append(starts, n)))
    pos = np.arange(n) - group_start
    order = np.argsort(pos, kind="stable")
    counts = np.bincount(pos)
    edges = np.concatenate(([0], np.cumsum(counts)))
    for p in range(1, len(counts)):
        idx = order[edges[p]:edges[p + 1]]
        out[idx] += out[idx - 1]
    return out


def split_gain(GL, HL, GR, HR, G, H, reg_lambda):
    """Second-order gain of splitting a (G, H) leaf into left/right children."""
    with np.errstate(divide="ignore", invalid="ignore"):
        def score(g, h):
            d = h + reg_lambda
            return np.where(d > 0, g * g / np.where(d > 0, d, 1.0), 0.0)
        return score(GL, HL) + score(GR, HR) - score(G, H)


def _leaf_weight(g, h, reg_lambda) -> float:
    d = h + reg_lambda
    return float(-g / d) if d > 0 else 0.0


def find_best_split(hist: SparseHistTensor, leaves, G, H, params: SplitParams) -> list[SplitDecision]:
    """Best split per leaf over a complete histogram (zero buckets filled in).

    Candidates are "left = buckets <= k" for every present bucket ``k`` that
    is not the last of its (leaf, feature) group. Ties go to the lowest
    feature, then the lowest bucket.
    """
    leaves = np.asarray(leaves, dtype=np.int64)
    G = np.asarray(G, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    decisions = {int(l): SplitDecision.no_split(int(l)) for l in leaves}
    if hist.nnz == 0:
        return [decisions[int(l)] for l in leaves]
    lut = np.full(int(max(leaves.max(initial=0), hist.leaf.max())) + 1, -1, dtype=np.int64)
    lut[leaves] = np.arange(len(leaves))
    starts, _ = _group_bounds(hist)
    GL = _segmented_prefix(hist.grad, starts)
    HL = _segmented_prefix(hist.hess, starts)
    last = np.zeros(hist.nnz, dtype=bool)
    last[np.append(starts[1:], hist.nnz) - 1] = True
    slot = lut[hist.leaf]
    cand = ~last & (slot >= 0)
    idx = np.flatnonzero(cand)
    if len(idx) == 0:
        return [decisions[int(l)] for l in leaves]
    s = slot[idx]
    Gt, Ht = G[s], H[s]
    gl, hl = GL[idx], HL[idx]
    gr, hr = Gt - gl, Ht - hl
    gain = split_gain(gl, hl, gr, hr, Gt, Ht, params.reg_lambda)
    ok = ((hl >= params.min_child_weight) & (hr >= params.min_child_weight)
          & (gain > params.min_gain))
    idx, gain, gl, hl, gr, hr = idx[ok], gain[ok], gl[ok], hl[ok], gr[ok], hr[ok]
    if len(idx) == 0:
        return [decisions[int(l)] for l in leaves]
    # idx is ascending in (leaf, feature, bucket), so a stable sort on -gain
    # within each leaf keeps the lowest (feature, bucket) first among ties
    order = np.lexsort((idx, -gain, hist.leaf[idx]))
    first = np.ones(len(order), dtype=bool)
    lo = hist.leaf[idx][order]
    first[1:] = lo[1:] != lo[:-1]
    for o in order[first]:
        i = idx[o]
        leaf = int(hist.leaf[i])
        decisions[leaf] = SplitDecision(
            leaf=leaf, feature=int(hist.feature[i]), bucket=int(hist.bucket[i]),
            gain=float(gain[o]),
            left_weight=_leaf_weight(gl[o], hl[o], params.reg_lambda),
            right_weight=_leaf_weight(gr[o], hr[o], params.reg_lambda))
    return [decisions[int(l)] for l in leaves]


def add_zero_buckets_dense(buffer: np.ndarray, G, H, zero_bucket) -> np.ndarray:
    """Dense counterpart of ``add_zero_buckets`` on a ``(L, F, B, 2)`` buffer."""
    out = buffer.copy()
    L, F = buffer.shape[:2]
    present = buffer.sum(axis=2)  # (L, F, 2)
    rows = np.arange(F)
    for i in range(L):
        out[i, rows, zero_bucket, 0] += G[i] - present[i, :, 0]
        out[i, rows, zero_bucket, 1] += H[i] - present[i, :, 1]
    return out


def find_best_split_dense(buffer: np.ndarray, leaves, G, H, params: SplitParams) -> list[SplitDecision]:
    """Exhaustive prefix scan over every (feature, bucket) of a complete dense buffer."""
    out = []
    for i, leaf in enumerate(np.asarray(leaves, dtype=np.int64).tolist()):
        prefix = np.cumsum(buffer[i], axis=1)  # (F, B, 2)
        gl, hl = prefix[:, :-1, 0], prefix[:, :-1, 1]
        gr, hr = G[i] - gl, H[i] - hl
        gain = split_gain(gl, hl, gr, hr, G[i], H[i], params.reg_lambda)
        ok = (hl >= params.min_child_weight) & (hr >= params.min_child_weight) & (gain > params.min_gain)
        if not ok.any():
            out.append(SplitDecision.no_split(leaf))
            continue
        masked = np.where(ok, gain, -np.inf)
        f, k = np.unravel_index(int(np.argmax(masked)), masked.shape)
        out.append(SplitDecision(
            leaf=leaf, feature=int(f), bucket=int(k), gain=float(gain[f, k]),
            left_weight=_leaf_weight(gl[f, k], hl[f, k], params.reg_lambda),
            right_weight=_leaf_weight(gr[f, k], hr[f, k], params.reg_lambda)))
    return out


def global_best_split(reports, expected: int | None = None) -> SplitDecision:
    """Cross-server argmax for one leaf; ``reports`` holds one decision per server."""
    reports = list(reports)
    if expected is not None and len(reports) < expected:
        raise NotReadyError(f"{len(reports)}/{expected} servers reported")
    if not reports:
        raise NotReadyError("no server reported")
    leaf_ids = {d.leaf for d in reports}
    if len(leaf_ids) != 1:
        raise ProtocolError(f"reports mix leaves {sorted(leaf_ids)}")
    return min(reports, key=SplitDecision.key)


def dense_buffer_bytes(num_leaves: int, num_features: int, num_buckets: int) -> int:
    return num_leaves * num_features * num_buckets * DENSE_CELL_BYTES


def hist_message_bytes(nnz: int) -> int:
    return HistTensorMsg.wire_size(nnz)


__all__ = [
    "ENTRY_BYTES", "HistServerState", "HistTensorMsg", "LeafTotalsMsg", "SparseHistTensor",
    "SplitDecision", "SplitParams", "SplitReportMsg", "accumulate_dense", "accumulate_local",
    "add_zero_buckets", "check_entry_bound", "find_best_split", "find_best_split_dense",
    "global_best_split", "leaf_totals", "server_merge_hist",
]
