"""Reproducible sparse binary-classification data with a planted linear signal."""
from __future__ import annotations

import numpy as np

from .datamatrix import SparseMatrix, write_libsvm


def make_synthetic(rows: int, features: int, density: float, seed: int = 0,
                   informative: int | None = None) -> SparseMatrix:
    """Uniformly placed nonzeros with values in {0.0001, ..., 1.0}.

    The label is whether a linear score over the first ``informative``
    features (default: a tenth of them) plus a little noise exceeds its
    median.
    """
    if not 0.0 < density <= 1.0:
        raise ValueError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    cells = rows * features
    if density == 1.0:
        flat = np.arange(cells, dtype=np.int64)
    else:
        nnz = int(rng.binomial(cells, density))
        flat = np.sort(rng.choice(cells, size=nnz, replace=False))
    r, f = np.divmod(flat, features)
    values = rng.integers(1, 10_001, size=len(flat)) / 10_000.0

    k = informative if informative is not None else max(1, features // 10)
    weights = np.zeros(features)
    weights[:k] = rng.normal(size=k)
    score = np.bincount(r, weights=values * weights[f], minlength=rows)
    z = score + 0.25 * rng.normal(size=rows)
    labels = (z > np.median(z)).astype(np.int8) if rows else np.empty(0, np.int8)
    return SparseMatrix(num_rows=rows, num_features=features, labels=labels,
                        rows=r, features=f, values=values)


def gen_synthetic(rows: int, features: int, density: float, seed: int, out) -> SparseMatrix:
    m = make_synthetic(rows, features, density, seed)
    write_libsvm(m, out)
    return m
