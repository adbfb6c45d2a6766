"""Dense transform semantics, batch purity, and the compute stage."""

import queue

import numpy as np
import pytest

from oocgnn.chunks import END_OF_STREAM, StageFailure
from oocgnn.compute import (
    BlasBackend,
    GraduationBuffer,
    GraduationSink,
    MatmulBackend,
    get_backend,
    run_compute,
    transform,
)
from oocgnn.errors import ConfigError
from oocgnn.storage import LayerWeights


def layer(weight, bias=None):
    weight = np.asarray(weight, dtype=np.float32)
    out_dim, in_dim = weight.shape
    if bias is None:
        bias = np.zeros(out_dim, dtype=np.float32)
    return LayerWeights(in_dim, out_dim, weight,
                        np.asarray(bias, dtype=np.float32))


def test_identity_relu():
    lw = layer(np.eye(2))
    batch = np.asarray([[-1.0, 2.0]], dtype=np.float32)
    out = transform(batch, lw, apply_activation=True)
    np.testing.assert_array_equal(out, [[0.0, 2.0]])


def test_last_layer_keeps_sign():
    lw = layer(np.eye(2))
    batch = np.asarray([[-1.0, 2.0]], dtype=np.float32)
    out = transform(batch, lw, apply_activation=False)
    np.testing.assert_array_equal(out, [[-1.0, 2.0]])


def test_identity_passthrough_exact():
    # aggregates survive an identity output layer untouched
    lw = layer([[1.0]])
    batch = np.asarray([[4.0], [6.0]], dtype=np.float32)
    out = transform(batch, lw, apply_activation=False)
    np.testing.assert_array_equal(out, [[4.0], [6.0]])


def test_bias_added():
    lw = layer([[2.0]], bias=[0.5])
    out = transform(np.asarray([[3.0]], dtype=np.float32), lw,
                    apply_activation=False)
    np.testing.assert_array_equal(out, [[6.5]])


def test_matches_triple_loop_reference():
    rng = np.random.default_rng(0)
    batch = rng.standard_normal((50, 8)).astype(np.float32)
    w = rng.standard_normal((5, 8)).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    lw = layer(w, b)
    got = transform(batch, lw, apply_activation=True)

    ref = np.empty((50, 5), dtype=np.float64)
    for i in range(50):
        for j in range(5):
            acc = float(b[j])
            for k in range(8):
                acc += float(batch[i, k]) * float(w[j, k])
            ref[i, j] = max(acc, 0.0)
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_split_batch_purity_bit_exact():
    # a row's result must not depend on the rows batched around it
    rng = np.random.default_rng(1)
    batch = rng.standard_normal((97, 16)).astype(np.float32)
    lw = layer(rng.standard_normal((9, 16)).astype(np.float32),
               rng.standard_normal(9).astype(np.float32))
    whole = transform(batch, lw, apply_activation=True)
    for cuts in ([1], [7, 40], [3, 4, 5, 96]):
        bounds = [0, *cuts, 97]
        parts = [
            transform(batch[a:b], lw, apply_activation=True)
            for a, b in zip(bounds, bounds[1:])
        ]
        np.testing.assert_array_equal(np.concatenate(parts), whole)


def test_backend_row_cap_changes_nothing():
    rng = np.random.default_rng(2)
    batch = rng.standard_normal((33, 4)).astype(np.float32)
    lw = layer(rng.standard_normal((3, 4)).astype(np.float32))
    capped = MatmulBackend()
    capped.max_batch_rows = 10
    a = transform(batch, lw, apply_activation=False, backend=capped)
    b = transform(batch, lw, apply_activation=False)
    np.testing.assert_array_equal(a, b)


def test_backend_registry():
    assert isinstance(get_backend("stable"), MatmulBackend)
    assert isinstance(get_backend("blas"), BlasBackend)
    with pytest.raises(ConfigError):
        get_backend("tpu")


def test_blas_backend_close_to_stable():
    rng = np.random.default_rng(3)
    batch = rng.standard_normal((64, 12)).astype(np.float32)
    lw = layer(rng.standard_normal((6, 12)).astype(np.float32))
    a = transform(batch, lw, apply_activation=False)
    b = transform(batch, lw, apply_activation=False, backend=BlasBackend())
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_width_mismatch_rejected():
    lw = layer(np.eye(3))
    with pytest.raises(ConfigError):
        transform(np.zeros((2, 2), dtype=np.float32), lw,
                  apply_activation=False)


def test_empty_batch():
    lw = layer(np.eye(3))
    out = transform(np.zeros((0, 3), dtype=np.float32), lw,
                    apply_activation=True)
    assert out.shape == (0, 3)


# -- sink and stage ----------------------------------------------------


def make_sink(capacity_rows, dim):
    out_q: queue.Queue = queue.Queue()
    pool: queue.Queue = queue.Queue()
    sink = GraduationSink((dim * 4 + 8) * capacity_rows, dim, out_q, pool)
    return sink, out_q, pool


def test_exactly_two_buffers():
    sink, _, pool = make_sink(4, 2)
    assert pool.qsize() + 1 == 2  # one active, one pooled


def test_sink_rotates_on_fill():
    import threading

    sink, out_q, pool = make_sink(2, 1)
    got_ids = []

    def pump():
        # stand-in consumer: records ids and hands buffers back
        while True:
            item = out_q.get()
            if item is END_OF_STREAM:
                return
            assert isinstance(item, GraduationBuffer)
            got_ids.extend(item.ids[: item.fill].tolist())
            item.reset()
            pool.put(item)

    t = threading.Thread(target=pump)
    t.start()
    ids = np.arange(5, dtype=np.int64)
    rows = np.arange(5, dtype=np.float32).reshape(5, 1)
    sink.add_batch(ids, rows)  # spans three buffer rotations
    sink.finish()
    t.join(timeout=10)
    assert not t.is_alive()
    assert got_ids == list(range(5))
    assert sink.rows_shipped == 5


def test_sink_skips_empty_flush():
    sink, out_q, _ = make_sink(4, 1)
    sink.finish()
    assert out_q.get_nowait() is END_OF_STREAM
    with pytest.raises(queue.Empty):
        out_q.get_nowait()


def run_stage(buffers, lw, apply_activation=True, tail=END_OF_STREAM):
    in_q: queue.Queue = queue.Queue()
    out_q: queue.Queue = queue.Queue()
    pool: queue.Queue = queue.Queue()
    for b in buffers:
        in_q.put(b)
    in_q.put(tail)
    run_compute(in_q, out_q, pool, lw, apply_activation=apply_activation)
    items = []
    while True:
        item = out_q.get_nowait()
        items.append(item)
        if item is END_OF_STREAM or isinstance(item, StageFailure):
            break
    return items, pool


def filled_buffer(ids, rows):
    rows = np.asarray(rows, dtype=np.float32)
    buf = GraduationBuffer(len(ids), rows.shape[1])
    buf.put(np.asarray(ids, dtype=np.int64), rows)
    return buf


def test_stage_preserves_arrival_order():
    lw = layer([[1.0]])
    bufs = [
        filled_buffer([4, 2], [[1.0], [2.0]]),
        filled_buffer([9], [[3.0]]),
        filled_buffer([0, 5], [[4.0], [5.0]]),
    ]
    items, pool = run_stage(bufs, lw, apply_activation=False)
    assert items[-1] is END_OF_STREAM
    ids_seen = [i.tolist() for i, _ in items[:-1]]
    assert ids_seen == [[4, 2], [9], [0, 5]]
    vals = np.concatenate([o for _, o in items[:-1]]).ravel()
    np.testing.assert_array_equal(vals, [1, 2, 3, 4, 5])
    assert pool.qsize() == 3  # every buffer returned


def test_stage_empty_stream():
    items, _ = run_stage([], layer([[1.0]]))
    assert items == [END_OF_STREAM]


def test_stage_forwards_upstream_failure():
    failure = StageFailure("orchestrator", RuntimeError("boom"))
    items, _ = run_stage([], layer([[1.0]]), tail=failure)
    assert items == [failure]


def test_stage_reports_own_failure_and_recycles():
    lw = layer(np.eye(2))  # expects width 2; buffer is width 1
    bufs = [filled_buffer([0], [[1.0]]), filled_buffer([1], [[2.0]])]
    items, pool = run_stage(bufs, lw)
    assert isinstance(items[-1], StageFailure)
    assert items[-1].stage == "compute"
    assert isinstance(items[-1].error, ConfigError)
    assert pool.qsize() == 2  # drained buffers still returned
