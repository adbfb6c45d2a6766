"""Scoring, relabeling, and span measurement."""

import numpy as np
import pytest

from oocgnn.errors import ConfigError
from oocgnn.oracle import oracle_inference
from oocgnn.reorder import (
    build_order,
    compute_span,
    random_order,
    relabel_graph,
    reorder_dataset,
    score_vertices,
)
from oocgnn.storage import (
    ModelKind,
    edges_to_csr,
    generate_synthetic,
    load_layer_matrix,
    random_weights,
    read_csr,
    read_permutation,
)

from conftest import fig2_csr


def naive_scores(graph):
    """Double loop over the same edge order as the vectorized path."""
    src, dst = graph.edge_arrays()
    sums = np.zeros(graph.num_vertices)
    for s, d in zip(src, dst):
        sums[s] += 1.0 / max(graph.in_degrees[d], 1)
    out_deg = graph.out_degrees().astype(np.float64)
    safe = np.maximum(out_deg, 1)
    return np.where(out_deg > 0, sums / safe, 0.0)


def random_graph(v, e, seed):
    rng = np.random.default_rng(seed)
    return edges_to_csr(rng.integers(0, v, e), rng.integers(0, v, e), v)


def test_fig2_scores():
    scores = score_vertices(fig2_csr())
    # v0 and v4 both feed {1, 3}: (1/2 + 1/3) / 2
    want = [5 / 12, 0.0, 1 / 3, 0.0, 5 / 12, 0.0]
    np.testing.assert_allclose(scores, want)


def test_scores_match_naive_loop():
    g = random_graph(60, 400, 3)
    np.testing.assert_allclose(score_vertices(g), naive_scores(g),
                               rtol=1e-15)


def test_single_edge_scores_one():
    g = edges_to_csr(np.asarray([0]), np.asarray([1]), 2)
    np.testing.assert_allclose(score_vertices(g), [1.0, 0.0])


def test_fig2_order_ranks_by_score():
    # descending score, ties broken by ascending old id
    old_to_new = build_order(fig2_csr())
    np.testing.assert_array_equal(old_to_new, [0, 3, 2, 4, 1, 5])


def test_uniform_ties_keep_identity():
    v = 5  # cycle: every score is exactly 1.0
    nxt = (np.arange(v) + 1) % v
    g = edges_to_csr(np.arange(v), nxt, v)
    np.testing.assert_array_equal(build_order(g), np.arange(v))


def test_order_is_permutation():
    g = random_graph(200, 900, 8)
    assert sorted(build_order(g)) == list(range(200))


def test_random_order_seeded():
    a = random_order(50, seed=4)
    b = random_order(50, seed=4)
    np.testing.assert_array_equal(a, b)
    assert sorted(a) == list(range(50))
    assert not np.array_equal(a, random_order(50, seed=5))


def test_identity_relabel_is_noop():
    g = random_graph(40, 200, 1)
    same = relabel_graph(g, np.arange(40, dtype=np.int64))
    np.testing.assert_array_equal(same.offsets, g.offsets)
    np.testing.assert_array_equal(same.neighbors, g.neighbors)
    np.testing.assert_array_equal(same.in_degrees, g.in_degrees)


def test_relabel_preserves_edge_multiset():
    g = random_graph(80, 500, 2)
    perm = random_order(80, seed=9)
    h = relabel_graph(g, perm)

    src, dst = g.edge_arrays()
    hs, hd = h.edge_arrays()
    want = np.lexsort((perm[dst], perm[src]))
    got = np.lexsort((hd, hs))
    np.testing.assert_array_equal(perm[src][want], hs[got])
    np.testing.assert_array_equal(perm[dst][want], hd[got])

    # degree histograms cannot change under a relabel
    np.testing.assert_array_equal(np.sort(g.in_degrees),
                                  np.sort(h.in_degrees))
    np.testing.assert_array_equal(np.sort(g.out_degrees()),
                                  np.sort(h.out_degrees()))


def test_relabel_rows_sorted():
    g = random_graph(50, 300, 7)
    h = relabel_graph(g, random_order(50, seed=3))
    for v in range(50):
        row = h.neighbors[h.offsets[v]:h.offsets[v + 1]]
        assert np.all(np.diff(row) >= 0)


def test_relabel_length_checked():
    with pytest.raises(ConfigError):
        relabel_graph(fig2_csr(), np.arange(4, dtype=np.int64))


@pytest.mark.parametrize("kind", list(ModelKind))
def test_relabel_preserves_inference(kind):
    g = random_graph(200, 900, 5)
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((200, 4)).astype(np.float32)
    w = random_weights(kind, [4, 3, 2], seed=1, gin_epsilon=0.2)

    perm = random_order(200, seed=6)
    feats_new = np.empty_like(feats)
    feats_new[perm] = feats

    base = oracle_inference(g, feats, w)
    moved = oracle_inference(relabel_graph(g, perm), feats_new, w)
    np.testing.assert_allclose(moved[perm], base, atol=1e-5)
    np.testing.assert_array_equal(moved[perm].argmax(axis=1),
                                  base.argmax(axis=1))


def test_span_chain_is_zero():
    # every destination hears exactly one message
    g = edges_to_csr(np.arange(9), np.arange(1, 10), 10)
    stats = compute_span(g)
    assert stats.mean_span == 0.0
    assert stats.max_span == 0.0


def test_span_star_center():
    # five sources firing in id order at one hub: steps 0..4
    g = edges_to_csr(np.arange(1, 6), np.zeros(5, np.int64), 6)
    stats = compute_span(g)
    assert stats.mean_span == 4.0
    assert stats.p99_span == 4.0
    assert stats.max_span == 4.0


def test_span_empty_graph():
    g = edges_to_csr(np.empty(0, np.int64), np.empty(0, np.int64), 3)
    assert compute_span(g).mean_span == 0.0


def test_reorder_dataset_roundtrip(tmp_path):
    src_dir = tmp_path / "orig"
    out_dir = tmp_path / "greedy"
    generate_synthetic("pa", 3000, 8, 4, 9, src_dir)

    old_to_new = reorder_dataset(src_dir, out_dir, ordering="greedy",
                                 partitions=2)
    np.testing.assert_array_equal(
        read_permutation(out_dir / "perm.bin"), old_to_new
    )

    g_old = read_csr(src_dir)
    g_new = read_csr(out_dir)
    assert g_new.num_edges == g_old.num_edges
    # features follow their vertices, bit for bit
    f_old = load_layer_matrix(src_dir / "features")
    f_new = load_layer_matrix(out_dir / "features")
    np.testing.assert_array_equal(f_new[old_to_new], f_old)
    # the whole point: spans shrink (or at worst stay put)
    assert compute_span(g_new).mean_span <= compute_span(g_old).mean_span


def test_reorder_dataset_original_is_identity(tmp_path):
    src_dir = tmp_path / "orig"
    out_dir = tmp_path / "copy"
    generate_synthetic("uniform", 500, 6, 4, 2, src_dir)
    old_to_new = reorder_dataset(src_dir, out_dir, ordering="original")
    np.testing.assert_array_equal(old_to_new, np.arange(500))
    a, b = read_csr(src_dir), read_csr(out_dir)
    np.testing.assert_array_equal(a.neighbors, b.neighbors)
    np.testing.assert_array_equal(
        load_layer_matrix(src_dir / "features"),
        load_layer_matrix(out_dir / "features"),
    )


def test_reorder_dataset_rejects_unknown_ordering(tmp_path):
    src_dir = tmp_path / "orig"
    generate_synthetic("uniform", 50, 3, 2, 1, src_dir)
    with pytest.raises(ConfigError, match="ordering"):
        reorder_dataset(src_dir, tmp_path / "x", ordering="sorted")
