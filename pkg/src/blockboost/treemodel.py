"""Regression trees, Quickscorer node bitstrings and the top-down oracle.

Bit layout: a leaf-candidate vector is one uint64 word where bit ``i`` stands
for leaf ``i`` in left-to-right order. "Left-most leaf" is therefore the
lowest set bit. Text renderings list leaf 0 first, so the root of a balanced
depth-2 tree renders as ``0011``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, InvariantViolation

LEAF_CAPACITY = 64
ALL_ONES = np.uint64(0xFFFF_FFFF_FFFF_FFFF)
_ALL_ONES_INT = (1 << 64) - 1


def _leaf_ref(leaf_id: int) -> int:
    return -1 - leaf_id


@dataclass(frozen=True, eq=False)
class Tree:
    """Array-encoded binary tree.

    Internal nodes are numbered in preorder with the root at 0. A child
    reference ``c >= 0`` is an internal node; ``c < 0`` is leaf ``-1 - c``.
    Leaves are numbered in left-to-right (in-order) position.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_weight: np.ndarray
    split_bucket: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.feature)
        if self.split_bucket is None:
            object.__setattr__(self, "split_bucket", np.full(n, -1, dtype=np.int64))
        if self.num_leaves != n + 1:
            raise ValueError(f"{n} internal nodes need {n + 1} leaves, got {self.num_leaves}")
        if self.num_leaves > LEAF_CAPACITY:
            raise CapacityError(f"{self.num_leaves} leaves exceed capacity {LEAF_CAPACITY}")
        if n and self._inorder_leaves() != list(range(self.num_leaves)):
            raise ValueError("leaves must be numbered in left-to-right order")

    @property
    def num_internal(self) -> int:
        return len(self.feature)

    @property
    def num_leaves(self) -> int:
        return len(self.leaf_weight)

    def _inorder_leaves(self) -> list[int]:
        out: list[int] = []
        stack, seen = [0], set()
        while stack:
            ref = stack.pop()
            if ref < 0:
                out.append(-1 - ref)
                continue
            if ref in seen or ref >= self.num_internal:
                raise ValueError(f"malformed child reference {ref}")
            seen.add(ref)
            stack.append(int(self.right[ref]))
            stack.append(int(self.left[ref]))
        if len(seen) != self.num_internal:
            raise ValueError("unreachable internal nodes")
        return out

    @property
    def depth(self) -> int:
        if not self.num_internal:
            return 0
        best, stack = 0, [(0, 0)]
        while stack:
            ref, d = stack.pop()
            if ref < 0:
                best = max(best, d)
            else:
                stack.extend([(int(self.left[ref]), d + 1), (int(self.right[ref]), d + 1)])
        return best

    @classmethod
    def build(cls, spec) -> "Tree":
        """Build from a nested spec.

        A leaf is a number (its weight); an internal node is a tuple
        ``(feature, threshold, left, right)`` or
        ``(feature, threshold, left, right, bucket)``.
        """
        feats, thrs, lefts, rights, bkts, weights = [], [], [], [], [], []

        def visit(node) -> int:
            if not isinstance(node, tuple):
                weights.append(float(node))
                return _leaf_ref(len(weights) - 1)
            nid = len(feats)
            feats.append(int(node[0]))
            thrs.append(float(node[1]))
            bkts.append(int(node[4]) if len(node) > 4 else -1)
            lefts.append(0)
            rights.append(0)
            lefts[nid] = visit(node[2])
            rights[nid] = visit(node[3])
            return nid

        visit(spec)
        return cls(
            feature=np.asarray(feats, dtype=np.int64),
            threshold=np.asarray(thrs, dtype=np.float64),
            left=np.asarray(lefts, dtype=np.int64),
            right=np.asarray(rights, dtype=np.int64),
            leaf_weight=np.asarray(weights, dtype=np.float64),
            split_bucket=np.asarray(bkts, dtype=np.int64),
        )

    def with_weights(self, weights) -> "Tree":
        return Tree(self.feature, self.threshold, self.left, self.right,
                    np.asarray(weights, dtype=np.float64), self.split_bucket)

    def same_structure(self, other: "Tree") -> bool:
        return (
            np.array_equal(self.feature, other.feature)
            and np.array_equal(self.threshold, other.threshold)
            and np.array_equal(self.left, other.left)
            and np.array_equal(self.right, other.right)
        )


def _left_leaf_ranges(tree: Tree) -> list[tuple[int, int]]:
    """For each internal node, the [lo, hi) leaf-id range of its left subtree."""
    span: dict[int, tuple[int, int]] = {}

    def leaves_of(ref: int) -> tuple[int, int]:
        if ref < 0:
            leaf = -1 - ref
            return leaf, leaf + 1
        lo, _ = leaves_of(int(tree.left[ref]))
        mid_lo, hi = leaves_of(int(tree.right[ref]))
        span[ref] = (lo, mid_lo)
        return lo, hi

    if tree.num_internal:
        leaves_of(0)
    return [span[n] for n in range(tree.num_internal)]


def compile_bitstrings(tree: Tree) -> np.ndarray:
    """One uint64 mask per internal node: zeros on its left subtree's leaves."""
    if tree.num_leaves > LEAF_CAPACITY:
        raise CapacityError(f"{tree.num_leaves} leaves exceed capacity {LEAF_CAPACITY}")
    masks = []
    for lo, hi in _left_leaf_ranges(tree):
        cleared = ((1 << (hi - lo)) - 1) << lo
        masks.append(_ALL_ONES_INT ^ cleared)
    return np.asarray(masks, dtype=np.uint64)


def bitstring(mask, num_leaves: int) -> str:
    m = int(mask)
    return "".join("1" if (m >> i) & 1 else "0" for i in range(num_leaves))


def parse_bitstring(text: str) -> np.uint64:
    """Inverse of ``bitstring``; bits past the text are set."""
    m = _ALL_ONES_INT
    for i, ch in enumerate(text):
        if ch == "0":
            m &= ~(1 << i)
    return np.uint64(m)


def _value(x, feature: int) -> float:
    if isinstance(x, dict):
        return float(x.get(feature, 0.0))
    return float(x[feature]) if feature < len(x) else 0.0


def traverse_topdown(tree: Tree, x) -> int:
    """Exit leaf by walking from the root; ``x`` is a dict or dense sequence."""
    ref = 0 if tree.num_internal else _leaf_ref(0)
    while ref >= 0:
        ref = int(tree.left[ref] if _value(x, int(tree.feature[ref])) <= tree.threshold[ref]
                  else tree.right[ref])
    return -1 - ref


def find_false(tree: Tree, x, nodes=None) -> list[int]:
    """Internal nodes (optionally restricted to ``nodes``) whose condition is false."""
    candidates = range(tree.num_internal) if nodes is None else nodes
    return [n for n in candidates if not _value(x, int(tree.feature[n])) <= tree.threshold[n]]


def fold_masks(masks: np.ndarray, nodes) -> np.uint64:
    v = ALL_ONES
    for n in nodes:
        v &= masks[n]
    return v


def lowest_set_bit(v: np.ndarray) -> np.ndarray:
    """Index of the lowest set bit for every element of a uint64 array."""
    v = np.asarray(v, dtype=np.uint64)
    if np.any(v == 0):
        raise InvariantViolation("empty candidate-leaf bitvector")
    isolated = v & (~v + np.uint64(1))
    _, exp = np.frexp(isolated.astype(np.float64))
    return (exp - 1).astype(np.int64)


def quickscorer_exit(tree: Tree, v) -> int:
    """Exit leaf for a fully merged bitvector: its left-most set bit."""
    leaf = int(lowest_set_bit(np.asarray([v], dtype=np.uint64))[0])
    if leaf >= tree.num_leaves:
        raise InvariantViolation(f"bitvector selects leaf {leaf} of {tree.num_leaves}")
    return leaf


def exit_leaves_topdown(tree: Tree, lookup, num_rows: int, rows=None) -> np.ndarray:
    """Vectorized top-down traversal for many rows via a ``FeatureLookup``."""
    rows = np.arange(num_rows) if rows is None else np.asarray(rows)
    refs = np.full(len(rows), 0 if tree.num_internal else _leaf_ref(0), dtype=np.int64)
    for _ in range(tree.depth):
        live = refs >= 0
        if not live.any():
            break
        node = refs[live]
        x = lookup.get(rows[live], tree.feature[node])
        go_left = x <= tree.threshold[node]
        refs[live] = np.where(go_left, tree.left[node], tree.right[node])
    return -1 - refs


@dataclass
class Ensemble:
    trees: list = field(default_factory=list)
    learning_rate: float = 0.3
    base_score: float = 0.0

    def predict_margin(self, lookup, num_rows: int) -> np.ndarray:
        margin = np.full(num_rows, self.base_score)
        for tree in self.trees:
            margin += self.learning_rate * tree.leaf_weight[exit_leaves_topdown(tree, lookup, num_rows)]
        return margin


def dump_model(ensemble: Ensemble) -> str:
    """JSON model dump with a fixed key order, suitable for textual diffs."""
    trees = []
    for t_id, tree in enumerate(ensemble.trees):
        masks = compile_bitstrings(tree)
        nodes = [
            {
                "id": n,
                "feature": int(tree.feature[n]),
                "threshold": float(tree.threshold[n]),
                "bucket": int(tree.split_bucket[n]),
                "left": int(tree.left[n]),
                "right": int(tree.right[n]),
                "bitstring": bitstring(masks[n], tree.num_leaves),
            }
            for n in range(tree.num_internal)
        ]
        leaves = [{"id": i, "weight": float(w)} for i, w in enumerate(tree.leaf_weight)]
        trees.append({"tree_id": t_id, "num_leaves": tree.num_leaves, "nodes": nodes, "leaves": leaves})
    doc = {
        "base_score": float(ensemble.base_score),
        "learning_rate": float(ensemble.learning_rate),
        "num_trees": len(trees),
        "trees": trees,
    }
    return json.dumps(doc, indent=1) + "\n"


def load_model(text: str) -> Ensemble:
    doc = json.loads(text)
    trees = []
    for t in doc["trees"]:
        nodes = t["nodes"]
        trees.append(Tree(
            feature=np.asarray([n["feature"] for n in nodes], dtype=np.int64),
            threshold=np.asarray([n["threshold"] for n in nodes], dtype=np.float64),
            left=np.asarray([n["left"] for n in nodes], dtype=np.int64),
            right=np.asarray([n["right"] for n in nodes], dtype=np.int64),
            leaf_weight=np.asarray([lf["weight"] for lf in t["leaves"]], dtype=np.float64),
            split_bucket=np.asarray([n["bucket"] for n in nodes], dtype=np.int64),
        ))
    return Ensemble(trees=trees, learning_rate=doc["learning_rate"], base_score=doc["base_score"])
