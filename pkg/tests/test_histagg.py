import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blockboost.comms import Cluster, ClusterTopology
from blockboost.datamatrix import SparseMatrix, partition, quantize_matrix
from blockboost.errors import CommunicationBoundError, NotReadyError, ProtocolError, RoutingError
from blockboost.histagg import (
    HistServerState, HistTensorMsg, LeafTotalsMsg, SparseHistTensor, SplitDecision, SplitParams,
    SplitReportMsg, accumulate_dense, accumulate_local, add_zero_buckets, add_zero_buckets_dense,
    check_entry_bound, dense_buffer_bytes, entry_bound, find_best_split, find_best_split_dense,
    global_best_split, leaf_totals, merge_tensors, server_merge_hist, split_gain,
)
from oracles import best_split_oracle, dense_histogram, random_dense


def _instance(seed, rows=30, features=5, B=6, leaves=3, dyadic=True):
    rng = np.random.default_rng(seed)
    X = random_dense(rng, rows, features, 0.5, levels=7)
    q = quantize_matrix(SparseMatrix.from_dense(X, np.zeros(rows)), B)
    exits = rng.integers(0, leaves, rows)
    if dyadic:
        g = rng.integers(-64, 65, rows) / 64.0
        h = rng.integers(1, 17, rows) / 64.0
    else:
        g = rng.normal(size=rows)
        h = rng.uniform(0.01, 0.25, rows)
    return X, q, exits, g, h


def _server_histograms(q, exits, g, h, leaves, R, C, S):
    """Run pushes through the cluster and return each server's complete histogram."""
    grid = partition(q, R, C)
    topo = ClusterTopology(R, C, S)
    cluster = Cluster(topo, deterministic=True)
    for r in range(R):
        for c in range(C):
            b = grid.block(r, c)
            r0, r1 = b.row_range
            t = accumulate_local(b, exits[r0:r1], g[r0:r1], h[r0:r1])
            cluster.ps_push(HistTensorMsg(topo.worker_id(r, c), 0, 0, t), "col", c, "histogram",
                            topo.worker_id(r, c))
    G, H = leaf_totals(exits, g, h, leaves)
    out = {}
    for s in range(S):
        owned = {c: grid.col_ranges[c] for c in topo.col_ranges_of(s)}
        if not owned:
            continue
        state = HistServerState(owned, expected=R)
        for (_k, c), _w, payload in cluster.servers[s].drain(ordered=True):
            state.merge(c, HistTensorMsg.from_bytes(payload))
        feats = [f for c0, c1 in owned.values() for f in range(c0, c1)]
        out[s] = (owned, add_zero_buckets(state.complete(), leaves, G, H, q.zero_bucket, feats))
    return out, cluster


class TestAccumulate:
    def test_two_rows_same_cell(self):
        X = np.array([[0, 0, 0, 2.0], [0, 0, 0, 2.0], [0, 0, 0, 1.0]])
        q = quantize_matrix(SparseMatrix.from_dense(X, [0, 0, 0]), 8)
        b = q.whole_block()
        bucket = int(q.buckets[q.values == 2.0][0])
        t = accumulate_local(b, [0, 0, 1], [0.5, 0.5, 0.0], [0.25, 0.25, 0.0])
        assert t.cell(0, 3, bucket) == (1.0, 0.5)

    def test_zero_gradients_give_empty_tensor(self, toy_q):
        n = toy_q.num_rows
        t = accumulate_local(toy_q.whole_block(), np.zeros(n, int), np.zeros(n), np.zeros(n))
        assert t.nnz == 0

    def test_missing_exit_leaf(self, toy_q):
        n = toy_q.num_rows
        exits = np.zeros(n, int)
        exits[3] = -1
        with pytest.raises(ProtocolError):
            accumulate_local(toy_q.whole_block(), exits, np.ones(n), np.ones(n))

    def test_active_leaves_filter(self):
        X, q, exits, g, h = _instance(0)
        t = accumulate_local(q.whole_block(), exits, g, h, active_leaves=[1])
        assert set(t.leaf.tolist()) <= {1}

    @given(st.integers(0, 10_000))
    def test_complete_histogram_equals_dense_oracle(self, seed):
        X, q, exits, g, h = _instance(seed)
        leaves = [0, 1, 2]
        t = accumulate_local(q.whole_block(), exits, g, h)
        G, H = leaf_totals(exits, g, h, leaves)
        full = add_zero_buckets(t, leaves, G, H, q.zero_bucket, range(q.num_features))
        oracle = dense_histogram(X, q.cuts, exits, g, h, 3, q.num_buckets)
        np.testing.assert_array_equal(full.to_dense(3, q.num_features, q.num_buckets), oracle)

    def test_dense_accumulation_agrees(self):
        X, q, exits, g, h = _instance(3)
        t = accumulate_local(q.whole_block(), exits, g, h)
        d = accumulate_dense(q.whole_block(), exits, g, h, [0, 1, 2], q.num_features, q.num_buckets)
        np.testing.assert_array_equal(t.to_dense(3, q.num_features, q.num_buckets), d)


class TestMerge:
    def test_empty_identity(self):
        _, q, exits, g, h = _instance(1)
        t = accumulate_local(q.whole_block(), exits, g, h)
        assert server_merge_hist(SparseHistTensor.empty(), t, (0, q.num_features)).equals(t)

    def test_commutative(self):
        _, q, exits, g, h = _instance(2, dyadic=False)
        grid = partition(q, 2, 1)
        a = accumulate_local(grid.block(0, 0), exits[:15], g[:15], h[:15])
        b = accumulate_local(grid.block(1, 0), exits[15:], g[15:], h[15:])
        ab, ba = merge_tensors(a, b), merge_tensors(b, a)
        np.testing.assert_array_equal(ab.leaf, ba.leaf)
        np.testing.assert_allclose(ab.grad, ba.grad, rtol=1e-12)
        np.testing.assert_allclose(ab.hess, ba.hess, rtol=1e-12)

    def test_routing_error(self):
        t = SparseHistTensor.from_entries([0], [7], [1], [1.0], [1.0])
        with pytest.raises(RoutingError):
            server_merge_hist(SparseHistTensor.empty(), t, (0, 5))

    def test_duplicate_and_not_ready(self):
        t = SparseHistTensor.from_entries([0], [1], [1], [1.0], [1.0])
        state = HistServerState({0: (0, 5)}, expected=2)
        state.merge(0, HistTensorMsg(0, 0, 0, t))
        with pytest.raises(NotReadyError):
            state.complete()
        with pytest.raises(ProtocolError):
            state.merge(0, HistTensorMsg(0, 0, 0, t))
        with pytest.raises(RoutingError):
            state.merge(1, HistTensorMsg(1, 0, 0, t))

    @pytest.mark.parametrize("R,C,S", [(1, 1, 1), (3, 1, 1), (2, 3, 3), (4, 2, 3), (3, 5, 2)])
    def test_partial_tensors_merge_to_whole(self, R, C, S):
        X, q, exits, g, h = _instance(R * 10 + C, rows=40, features=7)
        oracle = dense_histogram(X, q.cuts, exits, g, h, 3, q.num_buckets)
        servers, _ = _server_histograms(q, exits, g, h, [0, 1, 2], R, C, S)
        covered = set()
        for owned, hist in servers.values():
            dense = hist.to_dense(3, q.num_features, q.num_buckets)
            for c0, c1 in owned.values():
                np.testing.assert_array_equal(dense[:, c0:c1], oracle[:, c0:c1])
                covered.update(range(c0, c1))
        assert covered == set(range(q.num_features))

    @given(st.integers(0, 10_000))
    def test_completeness(self, seed):
        X, q, exits, g, h = _instance(seed, dyadic=False)
        leaves = [0, 1, 2]
        G, H = leaf_totals(exits, g, h, leaves)
        full = add_zero_buckets(accumulate_local(q.whole_block(), exits, g, h),
                                leaves, G, H, q.zero_bucket, range(q.num_features))
        dense = full.to_dense(3, q.num_features, q.num_buckets)
        for i in range(3):
            sums = dense[i].sum(axis=1)
            np.testing.assert_allclose(sums[:, 0], G[i], rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(sums[:, 1], H[i], rtol=1e-9, atol=1e-12)

    def test_implicit_groups_carry_the_leaf_total(self):
        # feature 1 is never present, so its whole mass sits in its zero bucket
        hist = SparseHistTensor.from_entries([0], [0], [2], [1.0], [0.5])
        lazy = add_zero_buckets(hist, [0], [3.0], [2.0], np.array([0, 1]))
        assert lazy.nnz == 2
        full = add_zero_buckets(hist, [0], [3.0], [2.0], np.array([0, 1]), features=[0, 1])
        assert full.cell(0, 1, 1) == (3.0, 2.0)
        assert full.cell(0, 0, 0) == (2.0, 1.5)


class TestSplitFinding:
    P0 = SplitParams(reg_lambda=1.0, min_gain=0.0, min_child_weight=0.0)

    def test_gain_example(self):
        hist = SparseHistTensor.from_entries([0, 0], [0, 0], [0, 1], [-2.0, 2.0], [1.0, 1.0])
        (d,) = find_best_split(hist, [0], [0.0], [2.0], self.P0)
        assert (d.feature, d.bucket) == (0, 0)
        assert d.gain == pytest.approx(4.0)
        assert float(split_gain(-2.0, 1.0, 2.0, 1.0, 0.0, 2.0, 1.0)) == pytest.approx(4.0)
        assert best_split_oracle(hist.to_dense(1, 1, 2)[0], 0.0, 2.0, 1.0, 0.0, 0.0)[:2] == (0, 0)

    def test_single_bucket_no_split(self):
        hist = SparseHistTensor.from_entries([0], [0], [2], [-3.0], [2.0])
        params = SplitParams(1.0, 0.0, 0.5)
        assert not find_best_split(hist, [0], [-3.0], [2.0], params)[0].is_split

    def test_tie_prefers_lower_feature(self):
        leaf = [0] * 4
        feat = [2, 2, 5, 5]
        bucket = [0, 1, 0, 1]
        hist = SparseHistTensor.from_entries(leaf, feat, bucket, [-1, 1, -1, 1], [1, 1, 1, 1])
        (d,) = find_best_split(hist, [0], [0.0], [2.0], self.P0)
        assert d.feature == 2

    def test_tie_prefers_lower_bucket(self):
        # cutting after bucket 0 or after bucket 2 gives the same gain
        hist = SparseHistTensor.from_entries([0, 0, 0], [0, 0, 0], [0, 2, 3], [-1, 0, 1], [1, 1, 1])
        (d,) = find_best_split(hist, [0], [0.0], [3.0], self.P0)
        assert d.bucket == 0

    def test_min_gain_blocks(self):
        hist = SparseHistTensor.from_entries([0, 0], [0, 0], [0, 1], [-2.0, 2.0], [1.0, 1.0])
        (d,) = find_best_split(hist, [0], [0.0], [2.0], SplitParams(1.0, 4.0, 0.0))
        assert not d.is_split

    @given(st.integers(0, 10_000), st.floats(0.0, 2.0), st.floats(0.0, 1.0))
    def test_matches_exhaustive_oracle(self, seed, min_child_weight, min_gain):
        X, q, exits, g, h = _instance(seed)
        leaves = [0, 1, 2]
        params = SplitParams(1.0, min_gain, min_child_weight)
        G, H = leaf_totals(exits, g, h, leaves)
        full = add_zero_buckets(accumulate_local(q.whole_block(), exits, g, h),
                                leaves, G, H, q.zero_bucket)
        got = find_best_split(full, leaves, G, H, params)
        oracle_hist = dense_histogram(X, q.cuts, exits, g, h, 3, q.num_buckets)
        dense_got = find_best_split_dense(oracle_hist, leaves, G, H, params)
        for i, leaf in enumerate(leaves):
            want = best_split_oracle(oracle_hist[i], G[i], H[i], 1.0, min_gain, min_child_weight)
            for d in (got[i], dense_got[i]):
                if want is None:
                    assert not d.is_split
                else:
                    assert (d.feature, d.bucket) == want[:2]
                    assert d.gain == pytest.approx(want[2], rel=1e-12)

    def test_dense_zero_bucket_fill(self):
        X, q, exits, g, h = _instance(4)
        leaves = [0, 1, 2]
        G, H = leaf_totals(exits, g, h, leaves)
        local = accumulate_dense(q.whole_block(), exits, g, h, leaves, q.num_features, q.num_buckets)
        full = add_zero_buckets_dense(local, G, H, q.zero_bucket)
        np.testing.assert_array_equal(full, dense_histogram(X, q.cuts, exits, g, h, 3, q.num_buckets))


class TestGlobalBest:
    def test_one_server_splits(self):
        a = SplitDecision(leaf=0, feature=3, bucket=1, gain=4.0)
        assert global_best_split([SplitDecision.no_split(0), a, SplitDecision.no_split(0)]) == a

    def test_tie_lowest_feature(self):
        a = SplitDecision(0, 900, 0, 3.0)
        b = SplitDecision(0, 10, 5, 3.0)
        assert global_best_split([a, b]).feature == 10
        assert global_best_split([b, a]).feature == 10

    def test_missing_report(self):
        with pytest.raises(NotReadyError):
            global_best_split([SplitDecision.no_split(0)], expected=3)

    def test_all_no_split(self):
        assert not global_best_split([SplitDecision.no_split(2)] * 3).is_split

    @pytest.mark.parametrize("C,S", [(3, 3), (4, 2), (5, 3)])
    def test_equals_single_machine(self, C, S):
        X, q, exits, g, h = _instance(C + 7 * S, rows=60, features=10)
        leaves = [0, 1, 2]
        params = SplitParams(1.0, 0.0, 0.0)
        G, H = leaf_totals(exits, g, h, leaves)
        whole = add_zero_buckets(accumulate_local(q.whole_block(), exits, g, h), leaves, G, H,
                                 q.zero_bucket)
        single = find_best_split(whole, leaves, G, H, params)
        servers, _ = _server_histograms(q, exits, g, h, leaves, 2, C, S)
        per_server = [find_best_split(hist, leaves, G, H, params) for _, hist in servers.values()]
        for i in range(3):
            best = global_best_split([rep[i] for rep in per_server], expected=len(per_server))
            assert (best.feature, best.bucket, best.gain) == (
                single[i].feature, single[i].bucket, single[i].gain)


class TestBoundAndWire:
    def test_entry_bound(self):
        assert entry_bound(64, 1000, 255) == 64 * 1000 * 255

    def test_bound_violation_raises(self):
        t = SparseHistTensor.from_entries([0] * 5, [0, 0, 1, 1, 1], [0, 1, 0, 1, 2], [1.0] * 5, [1.0] * 5)
        check_entry_bound(t, 1, 2, 2, 3)
        with pytest.raises(CommunicationBoundError):
            check_entry_bound(t, 1, 2, 2, 2)
        with pytest.raises(CommunicationBoundError):
            check_entry_bound(t, 1, 2, 1, 3)

    def test_hist_message_sizes(self):
        n = 1000
        t = SparseHistTensor.from_entries(np.zeros(n), np.arange(n), np.zeros(n), np.ones(n), np.ones(n))
        wire = HistTensorMsg(1, 2, 3, t).to_bytes()
        assert len(wire) == 28_016 == HistTensorMsg.wire_size(1000)
        assert len(HistTensorMsg(0, 0, 0, SparseHistTensor.empty()).to_bytes()) == 16
        back = HistTensorMsg.from_bytes(wire)
        assert back.tensor.equals(t)
        with pytest.raises(ProtocolError):
            HistTensorMsg.from_bytes(wire[:-28])

    def test_leaf_totals_and_split_report_sizes(self):
        m = LeafTotalsMsg(0, 0, 0, np.arange(4), np.ones(4), np.ones(4))
        assert len(m.to_bytes()) == 16 + 20 * 4
        rep = SplitReportMsg(0, 0, 0, (SplitDecision(0, 3, 2, 1.5), SplitDecision.no_split(1)))
        wire = rep.to_bytes()
        assert len(wire) == 16 + 24 * 2
        back = SplitReportMsg.from_bytes(wire).decisions
        assert (back[0].feature, back[0].bucket, back[0].gain) == (3, 2, 1.5)
        assert not back[1].is_split

    def test_dense_buffer_arithmetic(self):
        nbytes = dense_buffer_bytes(64, 1000, 255)
        assert nbytes == 64 * 1000 * 255 * 16
        assert round(nbytes / 2**20, 1) == 249.0


def test_split_determinism_across_server_order():
    r = random.Random(0)
    X, q, exits, g, h = _instance(21, rows=50, features=9)
    leaves = [0, 1, 2]
    params = SplitParams(1.0, 0.0, 0.0)
    servers, _ = _server_histograms(q, exits, g, h, leaves, 2, 3, 3)
    G, H = leaf_totals(exits, g, h, leaves)
    reports = [find_best_split(hist, leaves, G, H, params) for _, hist in servers.values()]
    first = [global_best_split([rep[i] for rep in reports]) for i in range(3)]
    for _ in range(5):
        r.shuffle(reports)
        assert [global_best_split([rep[i] for rep in reports]) for i in range(3)] == first
