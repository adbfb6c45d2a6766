"""Greedy vertex reordering to shorten message lifetimes.

A source's out-edges all fire while its chunk is resident, so the
engine benefits when each destination's senders sit close together in
id order. Every vertex gets a static score: the sum over its
out-neighbors of one over their in-degree, divided by its own
out-degree. High scorers concentrate "finishing power" per emitted
message; ranking all vertices by descending score (ties: ascending old
id) and relabeling accordingly pulls senders of the same destinations
together, which shrinks the span between a destination's first and
last incoming message.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .iostats import IOCounters
from .storage import (
    GraphCSR,
    read_layer_meta,
    write_csr,
    write_permutation,
)
from .writer import SpillBufferSet


def score_vertices(graph: GraphCSR) -> np.ndarray:
    """Per-vertex ranking score; vertices without out-edges score zero.

    One pass over the edge array. Segment sums accumulate left to
    right per source, so structurally identical rows tie exactly.
    """
    inv_in = 1.0 / np.maximum(graph.in_degrees, 1).astype(np.float64)
    gains = inv_in[graph.neighbors]
    sums = np.zeros(graph.num_vertices, dtype=np.float64)
    src, _ = graph.edge_arrays()
    np.add.at(sums, src, gains)
    out_deg = graph.out_degrees().astype(np.float64)
    return np.divide(
        sums, out_deg, out=np.zeros_like(sums), where=out_deg > 0
    )


def build_order(graph: GraphCSR) -> np.ndarray:
    """old_to_new id map: rank by descending score, ties ascending id."""
    scores = score_vertices(graph)
    # stable sort on negated scores keeps equal scores in old-id order
    new_to_old = np.argsort(-scores, kind="stable")
    old_to_new = np.empty(graph.num_vertices, dtype=np.int64)
    old_to_new[new_to_old] = np.arange(graph.num_vertices, dtype=np.int64)
    return old_to_new


def random_order(num_vertices: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.permutation(num_vertices).astype(np.int64)


def relabel_graph(graph: GraphCSR, old_to_new: np.ndarray) -> GraphCSR:
    """Apply an id permutation to the whole adjacency."""
    v = graph.num_vertices
    if len(old_to_new) != v:
        raise ConfigError("permutation length != |V|")
    new_to_old = np.empty(v, dtype=np.int64)
    new_to_old[old_to_new] = np.arange(v, dtype=np.int64)

    out_deg = graph.out_degrees()
    new_out = out_deg[new_to_old]
    offsets = np.zeros(v + 1, dtype=np.int64)
    np.cumsum(new_out, out=offsets[1:])

    # ragged gather: new row r pulls graph.neighbors[starts_old[r] + j]
    starts_old = graph.offsets[new_to_old]
    order_idx = np.arange(graph.num_edges, dtype=np.int64)
    within = order_idx - np.repeat(offsets[:-1], new_out)
    take = np.repeat(starts_old, new_out) + within
    neighbors = old_to_new[graph.neighbors[take]]

    # sort each new row's neighbors ascending
    row_of = np.repeat(np.arange(v, dtype=np.int64), new_out)
    sort_key = np.lexsort((neighbors, row_of))
    neighbors = neighbors[sort_key]

    in_deg = graph.in_degrees[new_to_old]
    return GraphCSR(v, graph.num_edges, offsets, neighbors, in_deg)


def relabel_features(features_dir, out_dir, old_to_new: np.ndarray, *,
                     buffer_bytes: int = 16 << 20,
                     partitions: int | None = None) -> None:
    """Rewrite a feature set under new ids with bounded memory.

    Streams the old set in id order and scatters rows to their new
    positions through the standard partition buffers.
    """
    from .chunks import SpillSet, plan_chunks

    meta = read_layer_meta(features_dir)
    io = IOCounters()
    spills = SpillSet(features_dir, direct=False, counters=io)
    parts = partitions if partitions is not None else meta.partitions
    bufset = SpillBufferSet(
        out_dir, meta.num_vertices, meta.dim, parts, buffer_bytes,
        direct=False, io=io,
    )
    try:
        for start, end in plan_chunks(
            meta.num_vertices, meta.dim, meta.dtype, buffer_bytes
        ):
            slices = []
            ids_parts = []
            for d in spills.overlapping(start, end):
                ids, rows = spills.read_rows(d, start, end)
                if ids is None:
                    continue
                ids_parts.append(ids)
                slices.append(rows)
            ids = np.concatenate(ids_parts)
            rows = np.concatenate(slices, axis=0).astype(np.float32)
            bufset.scatter(old_to_new[ids], rows)
        bufset.flush_all()
        if bufset.coverage_gap():
            raise ConfigError(
                f"{features_dir}: relabel left {bufset.coverage_gap()} "
                f"rows uncovered"
            )
    finally:
        spills.close()


def reorder_dataset(graph_dir, out_dir, *, ordering: str = "greedy",
                    partitions: int = 1, seed: int = 0) -> np.ndarray:
    """Produce a fully relabeled copy of a dataset directory."""
    from .storage import read_csr

    graph_dir = Path(graph_dir)
    out_dir = Path(out_dir)
    graph = read_csr(graph_dir)
    if ordering == "greedy":
        old_to_new = build_order(graph)
    elif ordering == "random":
        old_to_new = random_order(graph.num_vertices, seed)
    elif ordering == "original":
        old_to_new = np.arange(graph.num_vertices, dtype=np.int64)
    else:
        raise ConfigError(f"unknown ordering {ordering!r}")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csr(relabel_graph(graph, old_to_new), out_dir)
    write_permutation(out_dir / "perm.bin", old_to_new)
    if (graph_dir / "features").exists():
        relabel_features(
            graph_dir / "features", out_dir / "features", old_to_new,
            partitions=partitions,
        )
    return old_to_new


@dataclass
class SpanStats:
    mean_span: float
    p99_span: float
    max_span: float


def compute_span(graph: GraphCSR) -> SpanStats:
    """Replay the source walk and measure per-destination step spans.

    Step t is the t-th message of the walk over sources in id order;
    a destination's span is last minus first step it receives.
    """
    if graph.num_edges == 0:
        return SpanStats(0.0, 0.0, 0.0)
    steps = np.arange(graph.num_edges, dtype=np.int64)
    first = np.full(graph.num_vertices, np.iinfo(np.int64).max)
    last = np.full(graph.num_vertices, -1, dtype=np.int64)
    np.minimum.at(first, graph.neighbors, steps)
    np.maximum.at(last, graph.neighbors, steps)
    got = last >= 0
    spans = (last[got] - first[got]).astype(np.float64)
    return SpanStats(
        float(spans.mean()),
        float(np.percentile(spans, 99)),
        float(spans.max()),
    )
