"""Sparse data ingestion, quantile cuts, bucketing and block partitioning.

Entries are kept as parallel numpy arrays (COO triplets). Absent entries are
value 0 and are never materialized; their bucket is the per-feature
``zero_bucket``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LibSVMParseError, UnsupportedLabelError

DEFAULT_NUM_BUCKETS = 255

_LABEL_MAP = {-1.0: 0, 0.0: 0, 1.0: 1}


@dataclass(frozen=True)
class SparseMatrix:
    num_rows: int
    num_features: int
    labels: np.ndarray
    rows: np.ndarray
    features: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.labels) != self.num_rows:
            raise ValueError("labels length must equal num_rows")
        if len(self.rows) and (self.rows.max() >= self.num_rows or self.rows.min() < 0):
            raise ValueError("row index out of range")
        if len(self.features) and (
            self.features.max() >= self.num_features or self.features.min() < 0
        ):
            raise ValueError("feature index out of range")

    @property
    def nnz(self) -> int:
        return len(self.values)

    @classmethod
    def from_dense(cls, X, y) -> "SparseMatrix":
        X = np.asarray(X, dtype=np.float64)
        rows, feats = np.nonzero(X)
        return cls(
            num_rows=X.shape[0],
            num_features=X.shape[1],
            labels=np.asarray(y, dtype=np.int8),
            rows=rows.astype(np.int64),
            features=feats.astype(np.int64),
            values=X[rows, feats],
        )

    def to_dense(self) -> np.ndarray:
        X = np.zeros((self.num_rows, self.num_features))
        X[self.rows, self.features] = self.values
        return X

    def take_rows(self, row_ids) -> "SparseMatrix":
        """Sub-matrix with the given rows, renumbered in the given order."""
        row_ids = np.asarray(row_ids, dtype=np.int64)
        remap = np.full(self.num_rows, -1, dtype=np.int64)
        remap[row_ids] = np.arange(len(row_ids))
        new_rows = remap[self.rows]
        keep = new_rows >= 0
        order = np.lexsort((self.features[keep], new_rows[keep]))
        return SparseMatrix(
            num_rows=len(row_ids),
            num_features=self.num_features,
            labels=self.labels[row_ids],
            rows=new_rows[keep][order],
            features=self.features[keep][order],
            values=self.values[keep][order],
        )


def load_libsvm(path, num_features: int | None = None) -> SparseMatrix:
    """Read a binary-labelled LIBSVM file.

    Indices are auto-detected as 0-based when index 0 appears anywhere in the
    file, otherwise they are shifted down by one. Explicit zero values are
    dropped since absent and zero are the same thing here.
    """
    labels: list[int] = []
    rows: list[int] = []
    feats: list[int] = []
    vals: list[float] = []
    saw_zero_index = False
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise LibSVMParseError(lineno, f"bad label {tokens[0]!r}") from None
            if label not in _LABEL_MAP:
                raise UnsupportedLabelError(lineno, f"unsupported label {tokens[0]!r}")
            row = len(labels)
            labels.append(_LABEL_MAP[label])
            seen = set()
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise LibSVMParseError(lineno, f"expected idx:value, got {tok!r}")
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise LibSVMParseError(lineno, f"malformed pair {tok!r}") from None
                if idx < 0:
                    raise LibSVMParseError(lineno, f"negative index {idx}")
                if idx in seen:
                    raise LibSVMParseError(lineno, f"duplicate index {idx}")
                seen.add(idx)
                if idx == 0:
                    saw_zero_index = True
                if val != 0.0:
                    rows.append(row)
                    feats.append(idx)
                    vals.append(val)

    feat_arr = np.asarray(feats, dtype=np.int64)
    if not saw_zero_index:
        feat_arr -= 1
    inferred = int(feat_arr.max()) + 1 if len(feat_arr) else 0
    if num_features is None:
        num_features = inferred
    elif num_features < inferred:
        raise ConfigError(f"num_features={num_features} but file uses index {inferred - 1}")
    row_arr = np.asarray(rows, dtype=np.int64)
    order = np.lexsort((feat_arr, row_arr))
    return SparseMatrix(
        num_rows=len(labels),
        num_features=num_features,
        labels=np.asarray(labels, dtype=np.int8),
        rows=row_arr[order],
        features=feat_arr[order],
        values=np.asarray(vals, dtype=np.float64)[order],
    )


def write_libsvm(matrix: SparseMatrix, path, zero_based: bool = False) -> None:
    offset = 0 if zero_based else 1
    order = np.lexsort((matrix.features, matrix.rows))
    rows, feats, vals = matrix.rows[order], matrix.features[order], matrix.values[order]
    bounds = np.searchsorted(rows, np.arange(matrix.num_rows + 1))
    with open(path, "w") as fh:
        for r in range(matrix.num_rows):
            lo, hi = bounds[r], bounds[r + 1]
            pairs = " ".join(
                f"{f + offset}:{v:.6g}" for f, v in zip(feats[lo:hi].tolist(), vals[lo:hi].tolist())
            )
            fh.write(f"{int(matrix.labels[r])} {pairs}".rstrip() + "\n")


def _thin(midpoints: np.ndarray, max_cuts: int) -> np.ndarray:
    m = len(midpoints)
    if m <= max_cuts:
        return midpoints
    # evenly spaced ranks over the m candidate midpoints
    picks = (np.arange(1, max_cuts + 1) * m) // (max_cuts + 1)
    return midpoints[picks]


def compute_cuts(matrix: SparseMatrix, num_buckets: int = DEFAULT_NUM_BUCKETS) -> list[np.ndarray]:
    """Per-feature ascending split thresholds, at most ``num_buckets - 1`` each.

    Candidates are midpoints between adjacent distinct values of the observed
    nonzero values plus 0, so zero vs nonzero is always separable.
    """
    if num_buckets < 2:
        raise ConfigError("num_buckets must be >= 2")
    cuts: list[np.ndarray] = [np.empty(0)] * matrix.num_features
    if matrix.nnz == 0:
        return cuts
    order = np.lexsort((matrix.values, matrix.features))
    f_sorted = matrix.features[order]
    v_sorted = matrix.values[order]
    bounds = np.flatnonzero(np.diff(f_sorted)) + 1
    starts = np.concatenate(([0], bounds))
    ends = np.concatenate((bounds, [len(f_sorted)]))
    for s, e in zip(starts.tolist(), ends.tolist()):
        distinct = np.unique(np.append(v_sorted[s:e], 0.0))
        if len(distinct) < 2:
            continue
        midpoints = (distinct[:-1] + distinct[1:]) / 2.0
        cuts[int(f_sorted[s])] = _thin(midpoints, num_buckets - 1)
    return cuts


def bucket_of(cuts: np.ndarray, value):
    """Number of cuts strictly less than ``value``."""
    return np.searchsorted(cuts, value, side="left")


@dataclass(frozen=True)
class QuantizedDataset:
    num_rows: int
    num_features: int
    num_buckets: int
    labels: np.ndarray
    cuts: list
    zero_bucket: np.ndarray
    rows: np.ndarray
    features: np.ndarray
    buckets: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return len(self.rows)

    def threshold(self, feature: int, bucket: int) -> float:
        """Raw threshold equivalent to ``bucket(x) <= bucket``."""
        return float(self.cuts[feature][bucket])

    def whole_block(self) -> "SparseMatrixBlock":
        return make_block(self, (0, self.num_rows), (0, self.num_features))


def quantize(matrix: SparseMatrix, cuts, num_buckets: int | None = None) -> QuantizedDataset:
    if len(cuts) != matrix.num_features:
        raise ConfigError("cuts must cover every feature")
    buckets = np.zeros(matrix.nnz, dtype=np.int64)
    order = np.argsort(matrix.features, kind="stable")
    f_sorted = matrix.features[order]
    bounds = np.flatnonzero(np.diff(f_sorted)) + 1
    starts = np.concatenate(([0], bounds)) if matrix.nnz else np.empty(0, np.int64)
    ends = np.concatenate((bounds, [matrix.nnz])) if matrix.nnz else np.empty(0, np.int64)
    for s, e in zip(starts.tolist(), ends.tolist()):
        idx = order[s:e]
        buckets[idx] = bucket_of(cuts[int(f_sorted[s])], matrix.values[idx])
    zero_bucket = np.array([bucket_of(c, 0.0) for c in cuts], dtype=np.int64)
    widest = max((len(c) + 1 for c in cuts), default=1)
    if num_buckets is None:
        num_buckets = max(2, widest)
    elif widest > num_buckets:
        raise ConfigError(f"cuts need {widest} buckets but num_buckets={num_buckets}")
    return QuantizedDataset(
        num_rows=matrix.num_rows,
        num_features=matrix.num_features,
        num_buckets=num_buckets,
        labels=matrix.labels,
        cuts=list(cuts),
        zero_bucket=zero_bucket,
        rows=matrix.rows,
        features=matrix.features,
        buckets=buckets,
        values=matrix.values,
    )


def quantize_matrix(matrix: SparseMatrix, num_buckets: int = DEFAULT_NUM_BUCKETS) -> QuantizedDataset:
    return quantize(matrix, compute_cuts(matrix, num_buckets), num_buckets)


@dataclass(frozen=True)
class SparseMatrixBlock:
    """Entries of one row x feature block, sorted by (feature, row).

    ``feature_ptr[j - col_start] : feature_ptr[j - col_start + 1]`` slices the
    entries of global feature ``j``.
    """

    row_range: tuple[int, int]
    col_range: tuple[int, int]
    rows: np.ndarray
    features: np.ndarray
    buckets: np.ndarray
    values: np.ndarray
    feature_ptr: np.ndarray = field(repr=False)

    @property
    def num_rows(self) -> int:
        return self.row_range[1] - self.row_range[0]

    @property
    def num_features(self) -> int:
        return self.col_range[1] - self.col_range[0]

    @property
    def nnz(self) -> int:
        return len(self.rows)

    def feature_slice(self, feature: int) -> slice:
        j = feature - self.col_range[0]
        return slice(int(self.feature_ptr[j]), int(self.feature_ptr[j + 1]))


def make_block(q: QuantizedDataset, row_range, col_range, _sel=None) -> SparseMatrixBlock:
    r0, r1 = row_range
    c0, c1 = col_range
    if _sel is None:
        _sel = (q.rows >= r0) & (q.rows < r1) & (q.features >= c0) & (q.features < c1)
    idx = np.flatnonzero(_sel)
    order = idx[np.lexsort((q.rows[idx], q.features[idx]))]
    feats = q.features[order]
    ptr = np.searchsorted(feats, np.arange(c0, c1 + 1))
    return SparseMatrixBlock(
        row_range=(r0, r1),
        col_range=(c0, c1),
        rows=q.rows[order],
        features=feats,
        buckets=q.buckets[order],
        values=q.values[order],
        feature_ptr=ptr,
    )


def split_ranges(n: int, parts: int) -> list[tuple[int, int]]:
    """Contiguous near-equal ranges; the remainder goes to the earliest ones."""
    base, rem = divmod(n, parts)
    out, start = [], 0
    for i in range(parts):
        stop = start + base + (1 if i < rem else 0)
        out.append((start, stop))
        start = stop
    return out


@dataclass(frozen=True)
class BlockGrid:
    row_ranges: list
    col_ranges: list
    blocks: list  # blocks[r][c]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_ranges), len(self.col_ranges)

    def block(self, r: int, c: int) -> SparseMatrixBlock:
        return self.blocks[r][c]


def partition(q: QuantizedDataset, R: int, C: int, workers: int | None = None) -> BlockGrid:
    if workers is not None and R * C != workers:
        raise ConfigError(f"grid {R}x{C} does not match {workers} workers")
    if not 1 <= R <= max(q.num_rows, 1):
        raise ConfigError(f"R={R} must be in [1, num_rows={q.num_rows}]")
    if not 1 <= C <= max(q.num_features, 1):
        raise ConfigError(f"C={C} must be in [1, num_features={q.num_features}]")
    row_ranges = split_ranges(q.num_rows, R)
    col_ranges = split_ranges(q.num_features, C)
    row_edges = np.array([r[1] for r in row_ranges])
    col_edges = np.array([c[1] for c in col_ranges])
    row_block = np.searchsorted(row_edges, q.rows, side="right")
    col_block = np.searchsorted(col_edges, q.features, side="right")
    blocks = [
        [
            make_block(q, row_ranges[r], col_ranges[c], (row_block == r) & (col_block == c))
            for c in range(C)
        ]
        for r in range(R)
    ]
    return BlockGrid(row_ranges=row_ranges, col_ranges=col_ranges, blocks=blocks)


def sample_rows(matrix: SparseMatrix, n: int | None, seed: int = 0) -> SparseMatrix:
    if n is None or n >= matrix.num_rows:
        return matrix
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(matrix.num_rows, size=n, replace=False))
    return matrix.take_rows(picked)


class FeatureLookup:
    """Vectorized ``x[row, feature]`` reads over sparse entries; absent reads 0."""

    def __init__(self, num_features: int, rows, features, values):
        keys = rows.astype(np.int64) * max(num_features, 1) + features
        order = np.argsort(keys, kind="stable")
        self._keys = keys[order]
        self._values = np.asarray(values, dtype=np.float64)[order]
        self._nf = max(num_features, 1)

    @classmethod
    def of(cls, data) -> "FeatureLookup":
        return cls(data.num_features, data.rows, data.features, data.values)

    def get(self, rows, features) -> np.ndarray:
        want = np.asarray(rows, dtype=np.int64) * self._nf + np.asarray(features, dtype=np.int64)
        pos = np.searchsorted(self._keys, want)
        pos_c = np.minimum(pos, max(len(self._keys) - 1, 0))
        if len(self._keys) == 0:
            return np.zeros(want.shape)
        hit = self._keys[pos_c] == want
        return np.where(hit, self._values[pos_c], 0.0)

