"""Message generation, pending bookkeeping, and graduation order."""

import numpy as np
import pytest

from oocgnn.chunks import Chunk
from oocgnn.errors import IncompleteLayerError
from oocgnn.iostats import IOCounters
from oocgnn.orchestrator import (
    CSV_FIELDS,
    LayerMetrics,
    finalize_layer,
    init_layer,
    make_message,
    process_chunk,
)
from oocgnn.storage import LayerWeights, ModelKind, ModelWeights
from oocgnn.vertexstate import COMPLETED

from conftest import fig2_csr


class CollectSink:
    """Records graduated rows and their arrival order."""

    def __init__(self, num_vertices, dim):
        self.rows = np.full((num_vertices, dim), np.nan, dtype=np.float32)
        self.order = []

    def add_batch(self, vertices, rows):
        self.order.extend(np.asarray(vertices).tolist())
        self.rows[vertices] = rows


def plain_weights(kind, in_dim, out_dim=1, epsilon=0.0):
    w_in = 2 * in_dim if kind == ModelKind.SAGE else in_dim
    weight = np.zeros((out_dim, w_in), dtype=np.float32)
    weight[:, : min(out_dim, w_in)] = np.eye(out_dim, min(out_dim, w_in))
    return ModelWeights(
        kind,
        [LayerWeights(w_in, out_dim, weight, np.zeros(out_dim, np.float32))],
        epsilon,
    )


def ctx_for(graph, weights, tmp_path, hot_slots=None, eviction="minpend",
            seed=0):
    return init_layer(
        graph.in_degrees.astype(np.int64),
        weights,
        0,
        hot_budget_bytes=1 << 20,
        cold_path=tmp_path / "cold.bin",
        io=IOCounters(),
        eviction=eviction,
        seed=seed,
        hot_slots=hot_slots,
    )


def chunk_of(graph, feats, start, end):
    o = graph.offsets
    lo, hi = int(o[start]), int(o[end])
    return Chunk(
        start,
        end,
        np.ascontiguousarray(feats[start:end], dtype=np.float32),
        (o[start : end + 1] - o[start]).astype(np.int64),
        graph.neighbors[lo:hi].astype(np.int64),
    )


def run_whole_layer(graph, feats, weights, tmp_path, chunk_rows=None,
                    hot_slots=None, eviction="minpend", seed=0):
    ctx = ctx_for(graph, weights, tmp_path, hot_slots=hot_slots,
                  eviction=eviction, seed=seed)
    sink = CollectSink(graph.num_vertices, ctx.agg_dim)
    step = chunk_rows or graph.num_vertices
    for start in range(0, graph.num_vertices, step):
        end = min(start + step, graph.num_vertices)
        process_chunk(ctx, chunk_of(graph, feats, start, end), sink)
    metrics = finalize_layer(ctx)
    ctx.memory.close()
    return ctx, sink, metrics


def test_pending_counts_per_model(tmp_path):
    g = fig2_csr()
    indeg = g.in_degrees.astype(np.int64)
    gcn = ctx_for(g, plain_weights(ModelKind.GCN, 1), tmp_path)
    np.testing.assert_array_equal(gcn.pending, indeg)
    sage = ctx_for(g, plain_weights(ModelKind.SAGE, 1), tmp_path)
    np.testing.assert_array_equal(sage.pending, indeg + 1)
    gin = ctx_for(g, plain_weights(ModelKind.GIN, 1), tmp_path)
    np.testing.assert_array_equal(gin.pending, indeg + 1)
    for c in (gcn, sage, gin):
        c.memory.close()


def test_make_message_mean_prescale():
    h = np.asarray([1.0, 2.0], dtype=np.float32)
    np.testing.assert_allclose(
        make_message(h, ModelKind.GCN, 4), [0.25, 0.5]
    )
    np.testing.assert_allclose(
        make_message(h, ModelKind.SAGE, 2), [0.5, 1.0]
    )
    # zero in-degree clamps rather than divides by zero
    np.testing.assert_allclose(make_message(h, ModelKind.GCN, 0), h)


def test_make_message_sum_is_a_copy():
    h = np.asarray([1.0, 2.0], dtype=np.float32)
    out = make_message(h, ModelKind.GIN, 3)
    out[0] = 99.0
    assert h[0] == 1.0


def test_fig2_neighbor_sums(tmp_path):
    # epsilon -1 zeroes the self contribution, exposing the raw sums
    g = fig2_csr()
    feats = np.arange(6, dtype=np.float32).reshape(6, 1)
    _, sink, _ = run_whole_layer(
        g, feats, plain_weights(ModelKind.GIN, 1, epsilon=-1.0), tmp_path
    )
    np.testing.assert_allclose(sink.rows.ravel(), [0, 4, 0, 6, 0, 0])


def test_fig2_gcn_means(tmp_path):
    g = fig2_csr()
    feats = np.arange(6, dtype=np.float32).reshape(6, 1)
    _, sink, _ = run_whole_layer(
        g, feats, plain_weights(ModelKind.GCN, 1), tmp_path
    )
    # v1: (0+4)/2, v3: (0+2+4)/3, zero in-degree rows graduate as zeros
    np.testing.assert_allclose(sink.rows.ravel(), [0, 2, 0, 2, 0, 0])


def test_zero_in_degree_graduates_without_messages(tmp_path):
    g = fig2_csr()
    feats = np.ones((6, 1), dtype=np.float32)
    ctx, sink, _ = run_whole_layer(
        g, feats, plain_weights(ModelKind.GCN, 1), tmp_path
    )
    assert set(sink.order) == set(range(6))
    assert np.all(ctx.states.array == COMPLETED)


def test_sage_concat_halves(tmp_path):
    from oocgnn.storage import edges_to_csr

    g = edges_to_csr(np.asarray([0]), np.asarray([1]), 2)
    feats = np.asarray([[3.0], [5.0]], dtype=np.float32)
    _, sink, _ = run_whole_layer(
        g, feats, plain_weights(ModelKind.SAGE, 1, out_dim=2), tmp_path
    )
    # slot layout is [neighbor mean, self]
    np.testing.assert_allclose(sink.rows, [[0.0, 3.0], [3.0, 5.0]])


def test_gin_self_term_scaling(tmp_path):
    from oocgnn.storage import edges_to_csr

    g = edges_to_csr(np.asarray([0]), np.asarray([1]), 2)
    feats = np.asarray([[2.0], [10.0]], dtype=np.float32)
    _, sink, _ = run_whole_layer(
        g, feats, plain_weights(ModelKind.GIN, 1, epsilon=0.5), tmp_path
    )
    # v0: 1.5 * 2; v1: 1.5 * 10 + 2
    np.testing.assert_allclose(sink.rows.ravel(), [3.0, 17.0])


def test_self_loops_flow_through_edges(tmp_path):
    from oocgnn.storage import edges_to_csr

    src = np.asarray([0, 1, 0])
    dst = np.asarray([0, 1, 1])
    g = edges_to_csr(src, dst, 2)
    feats = np.asarray([[4.0], [6.0]], dtype=np.float32)
    _, sink, _ = run_whole_layer(
        g, feats, plain_weights(ModelKind.GCN, 1), tmp_path
    )
    # v0: 4/1, v1: (4+6)/2
    np.testing.assert_allclose(sink.rows.ravel(), [4.0, 5.0])


def test_chunked_run_matches_single_chunk(tmp_path):
    g = fig2_csr()
    rng = np.random.default_rng(9)
    feats = rng.standard_normal((6, 3)).astype(np.float32)
    w = plain_weights(ModelKind.GCN, 3, out_dim=1)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    _, whole, _ = run_whole_layer(g, feats, w, tmp_path / "a")
    _, split, _ = run_whole_layer(g, feats, w, tmp_path / "b", chunk_rows=2)
    np.testing.assert_array_equal(whole.rows, split.rows)


def test_single_slot_budget_still_completes(tmp_path):
    g = fig2_csr()
    feats = np.arange(6, dtype=np.float32).reshape(6, 1)
    ctx, sink, metrics = run_whole_layer(
        g, feats, plain_weights(ModelKind.GCN, 1), tmp_path,
        chunk_rows=2, hot_slots=1,
    )
    np.testing.assert_allclose(sink.rows.ravel(), [0, 2, 0, 2, 0, 0])
    assert metrics.evictions > 0
    assert metrics.reloads > 0
    assert ctx.memory.slot_count == 1


def test_ample_budget_never_evicts(tmp_path):
    g = fig2_csr()
    feats = np.ones((6, 2), dtype=np.float32)
    _, _, metrics = run_whole_layer(
        g, feats, plain_weights(ModelKind.GCN, 2), tmp_path,
        chunk_rows=2, hot_slots=64,
    )
    assert metrics.evictions == 0
    assert metrics.reloads == 0


def test_message_conservation(tmp_path):
    g = fig2_csr()
    feats = np.ones((6, 1), dtype=np.float32)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    _, _, m_gcn = run_whole_layer(
        g, feats, plain_weights(ModelKind.GCN, 1), tmp_path / "a"
    )
    assert m_gcn.messages == g.num_edges
    _, _, m_gin = run_whole_layer(
        g, feats, plain_weights(ModelKind.GIN, 1), tmp_path / "b"
    )
    assert m_gin.messages == g.num_edges + g.num_vertices


def test_incomplete_layer_detected(tmp_path):
    g = fig2_csr()
    feats = np.ones((6, 1), dtype=np.float32)
    ctx = ctx_for(g, plain_weights(ModelKind.GCN, 1), tmp_path)
    sink = CollectSink(6, ctx.agg_dim)
    process_chunk(ctx, chunk_of(g, feats, 0, 2), sink)  # sources 0-1 only
    with pytest.raises(IncompleteLayerError):
        finalize_layer(ctx)
    ctx.memory.close()


def test_span_bookkeeping_fig2(tmp_path):
    g = fig2_csr()
    feats = np.ones((6, 1), dtype=np.float32)
    _, _, metrics = run_whole_layer(
        g, feats, plain_weights(ModelKind.GCN, 1), tmp_path
    )
    # edge walk: (0->1, 0->3, 2->3, 4->1, 4->3); dest 1 spans steps 0..3,
    # dest 3 spans 1..4, zero in-degree vertices are excluded
    assert metrics.mean_span == 3.0
    assert metrics.p99_span == 3.0


def test_hot_peak_recorded(tmp_path):
    g = fig2_csr()
    feats = np.ones((6, 1), dtype=np.float32)
    _, _, metrics = run_whole_layer(
        g, feats, plain_weights(ModelKind.GCN, 1), tmp_path, hot_slots=3
    )
    assert 1 <= metrics.hot_peak <= 3
    assert metrics.hot_slot_count == 3


def test_metrics_expose_every_csv_column():
    m = LayerMetrics(layer=0)
    for name in CSV_FIELDS:
        assert hasattr(m, name)
