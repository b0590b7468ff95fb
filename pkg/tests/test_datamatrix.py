import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blockboost.datamatrix import (
    DEFAULT_NUM_BUCKETS, SparseMatrix, bucket_of, compute_cuts, load_libsvm, partition,
    quantize, quantize_matrix, sample_rows, split_ranges, write_libsvm,
)
from blockboost.errors import ConfigError, LibSVMParseError, UnsupportedLabelError
from oracles import bucket_oracle, cuts_oracle, toy_matrix


class TestLoadLibsvm:
    def test_one_based_line(self, write_file):
        m = load_libsvm(write_file("1 3:0.5 7:1.2\n"))
        assert m.num_rows == 1
        assert m.labels.tolist() == [1]
        assert list(zip(m.features.tolist(), m.values.tolist())) == [(2, 0.5), (6, 1.2)]
        assert m.num_features == 7

    def test_negative_label_maps_to_zero(self, write_file):
        m = load_libsvm(write_file("-1 1:2.0\n"))
        assert m.labels.tolist() == [0]
        assert m.features.tolist() == [0]
        assert m.values.tolist() == [2.0]

    def test_empty_file(self, write_file):
        m = load_libsvm(write_file(""))
        assert (m.num_rows, m.nnz, m.num_features) == (0, 0, 0)

    def test_zero_based_detected(self, write_file):
        m = load_libsvm(write_file("0 0:1 2:3\n1 1:4\n"))
        assert m.features.tolist() == [0, 2, 1]
        assert m.num_features == 3

    def test_num_features_override(self, write_file):
        m = load_libsvm(write_file("1 2:1\n"), num_features=10)
        assert m.num_features == 10
        with pytest.raises(ConfigError):
            load_libsvm(write_file("1 20:1\n"), num_features=10)

    def test_explicit_zero_dropped(self, write_file):
        m = load_libsvm(write_file("1 1:0 2:5\n"))
        assert m.nnz == 1

    def test_blank_and_comment_lines(self, write_file):
        m = load_libsvm(write_file("# header\n\n1 1:1  # trailing\n0 2:1\n"))
        assert m.num_rows == 2

    @pytest.mark.parametrize("text,line", [
        ("1 1:1\n1 oops\n", 2),
        ("1 1:x\n", 1),
        ("abc 1:1\n", 1),
        ("1 1:1\n0 3:1 3:2\n", 2),
    ])
    def test_parse_error_names_line(self, write_file, text, line):
        with pytest.raises(LibSVMParseError) as exc:
            load_libsvm(write_file(text))
        assert exc.value.lineno == line
        assert f"line {line}" in str(exc.value)

    def test_non_binary_label(self, write_file):
        with pytest.raises(UnsupportedLabelError):
            load_libsvm(write_file("1 1:1\n2 1:1\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_libsvm(tmp_path / "nope.svm")

    def test_write_read_round_trip(self, tmp_path, rng):
        X = np.where(rng.random((12, 5)) < 0.4, rng.integers(1, 9, (12, 5)) / 4.0, 0.0)
        y = rng.integers(0, 2, 12)
        m = SparseMatrix.from_dense(X, y)
        write_libsvm(m, tmp_path / "a.svm")
        back = load_libsvm(tmp_path / "a.svm", num_features=5)
        np.testing.assert_array_equal(back.to_dense(), X)
        np.testing.assert_array_equal(back.labels, y)


def _matrix_from_column(values):
    X = np.asarray(values, dtype=np.float64)[:, None]
    return SparseMatrix.from_dense(X, np.zeros(len(values), dtype=np.int8))


class TestComputeCuts:
    def test_example_four_values(self):
        cuts = compute_cuts(_matrix_from_column([1, 2, 3, 4]), 3)[0]
        expected = cuts_oracle([1, 2, 3, 4], 3)
        assert expected == [1.5, 2.5]
        assert cuts.tolist() == expected

    def test_all_absent_feature_has_no_cuts(self):
        m = SparseMatrix.from_dense(np.array([[1.0, 0.0], [2.0, 0.0]]), [0, 1])
        cuts = compute_cuts(m, 8)
        assert len(cuts[1]) == 0
        q = quantize(m, cuts)
        assert q.zero_bucket[1] == 0

    def test_constant_feature_puts_every_entry_in_one_bucket(self):
        q = quantize_matrix(_matrix_from_column([5, 5, 5, 5]), 8)
        assert len(set(q.buckets.tolist())) == 1

    def test_default_bucket_count(self):
        assert DEFAULT_NUM_BUCKETS == 255
        m = _matrix_from_column(np.arange(1, 1001))
        assert len(compute_cuts(m)[0]) == 254

    def test_rejects_single_bucket(self):
        with pytest.raises(ConfigError):
            compute_cuts(_matrix_from_column([1, 2]), 1)

    @given(st.lists(st.integers(-20, 20), min_size=1, max_size=60), st.integers(2, 12))
    def test_matches_oracle(self, values, B):
        cuts = compute_cuts(_matrix_from_column(values), B)[0]
        assert cuts.tolist() == cuts_oracle([v for v in values if v != 0], B)
        assert len(cuts) <= B - 1
        assert np.all(np.diff(cuts) > 0)

    def test_zero_is_separable_from_positive_values(self):
        cuts = compute_cuts(_matrix_from_column([0, 3, 3, 7]), 255)[0]
        assert bucket_of(cuts, 0.0) < bucket_of(cuts, 3.0)


class TestQuantize:
    @pytest.mark.parametrize("value,bucket", [(2.0, 1), (1.5, 0), (1.6, 1), (3.0, 2), (-1.0, 0)])
    def test_bucket_examples(self, value, bucket):
        assert bucket_of(np.array([1.5, 2.5]), value) == bucket
        assert bucket_oracle([1.5, 2.5], value) == bucket

    def test_empty_cuts(self):
        assert bucket_of(np.array([]), 123.0) == 0

    def test_buckets_match_oracle(self, toy_q):
        for f, k, v in zip(toy_q.features, toy_q.buckets, toy_q.values):
            assert k == bucket_oracle(toy_q.cuts[f], v)
        for f in range(toy_q.num_features):
            assert toy_q.zero_bucket[f] == bucket_oracle(toy_q.cuts[f], 0.0)

    def test_threshold_equivalence(self, toy_q):
        # bucket(x) <= k  <=>  x <= cuts[k]
        for f in range(toy_q.num_features):
            sel = toy_q.features == f
            for k in range(len(toy_q.cuts[f])):
                gamma = toy_q.threshold(f, k)
                np.testing.assert_array_equal(toy_q.buckets[sel] <= k, toy_q.values[sel] <= gamma)

    def test_too_few_buckets(self):
        m = _matrix_from_column([1, 2, 3, 4, 5])
        with pytest.raises(ConfigError):
            quantize(m, compute_cuts(m, 6), num_buckets=3)

    @given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=40))
    def test_monotone(self, values):
        cuts = compute_cuts(_matrix_from_column(values), 6)[0]
        ordered = sorted(values)
        b = [int(bucket_of(cuts, v)) for v in ordered]
        assert b == sorted(b)


class TestPartition:
    def test_even_split(self):
        X = np.arange(1, 17, dtype=float).reshape(4, 4)
        q = quantize_matrix(SparseMatrix.from_dense(X, [0, 1, 0, 1]), 8)
        grid = partition(q, 2, 2)
        assert grid.shape == (2, 2)
        for r in range(2):
            for c in range(2):
                b = grid.block(r, c)
                assert (b.num_rows, b.num_features, b.nnz) == (2, 2, 4)

    def test_identity(self, toy_q):
        b = partition(toy_q, 1, 1).block(0, 0)
        assert b.nnz == toy_q.nnz
        assert b.row_range == (0, toy_q.num_rows)
        assert b.col_range == (0, toy_q.num_features)

    def test_remainder_to_front(self):
        assert split_ranges(5, 2) == [(0, 3), (3, 5)]
        assert split_ranges(7, 3) == [(0, 3), (3, 5), (5, 7)]

    def test_worker_count_mismatch(self, toy_q):
        with pytest.raises(ConfigError):
            partition(toy_q, 2, 2, workers=3)

    @pytest.mark.parametrize("R,C", [(0, 1), (1, 0), (1000, 1), (1, 99)])
    def test_out_of_range(self, toy_q, R, C):
        with pytest.raises(ConfigError):
            partition(toy_q, R, C)

    def test_blocks_sorted_by_feature(self, toy_q):
        b = partition(toy_q, 3, 2).block(1, 1)
        for f in range(*b.col_range):
            sl = b.feature_slice(f)
            assert np.all(b.features[sl] == f)
            assert np.all(np.diff(b.rows[sl]) > 0)

    @given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 3))
    def test_round_trip(self, R, C, seed):
        q = quantize_matrix(toy_matrix(rows=20, features=6, seed=seed), 8)
        grid = partition(q, R, C)
        sizes = [e - s for s, e in grid.row_ranges]
        assert max(sizes) - min(sizes) <= 1
        seen = set()
        for r in range(R):
            for c in range(C):
                b = grid.block(r, c)
                for row, f, k in zip(b.rows.tolist(), b.features.tolist(), b.buckets.tolist()):
                    assert b.row_range[0] <= row < b.row_range[1]
                    assert b.col_range[0] <= f < b.col_range[1]
                    seen.add((row, f, k))
        assert sum(grid.block(r, c).nnz for r in range(R) for c in range(C)) == q.nnz
        assert seen == set(zip(q.rows.tolist(), q.features.tolist(), q.buckets.tolist()))


def test_determinism(write_file):
    text = "".join(f"{i % 2} {i % 5 + 1}:{i * 0.3:.2f} {i % 3 + 6}:1\n" for i in range(1, 30))
    p = write_file(text)
    a, b = quantize_matrix(load_libsvm(p), 8), quantize_matrix(load_libsvm(p), 8)
    for field in ("rows", "features", "buckets", "values", "zero_bucket"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    ga, gb = partition(a, 3, 2), partition(b, 3, 2)
    for r in range(3):
        for c in range(2):
            np.testing.assert_array_equal(ga.block(r, c).buckets, gb.block(r, c).buckets)


def test_sample_rows():
    m = toy_matrix()
    s = sample_rows(m, 10, seed=3)
    assert s.num_rows == 10
    assert sample_rows(m, 10, seed=3).values.tolist() == s.values.tolist()
    assert sample_rows(m, None) is m
