"""Layer orchestration: turn a stream of source chunks into messages.

For each chunk the orchestrator walks the out-edges of every source in
the block and pushes contributions to the destinations, instead of
gathering the other way around. Each destination slot receives its
addends one at a time, in source-major stream order (a model's own
self term rides the stream at its source position). Per-slot addition
order therefore never depends on how the stream was cut into chunks,
which makes final outputs bit-identical across chunk budgets. The
grouping below is only a batching device: it preserves both the
within-destination addend order and the first-appearance order the
eviction policy would see from a plain per-edge walk.
"""

from dataclasses import dataclass, field

import numpy as np

from .chunks import Chunk
from .errors import ConfigError, ConsistencyError, IncompleteLayerError
from .iostats import IOCounters, StageCounters
from .memstore import MemoryBudget, MemoryManager, make_policy
from .storage import ModelKind, ModelWeights
from .vertexstate import COMPLETED, NOT_STARTED, StateTable


def make_message(h_source: np.ndarray, model: ModelKind,
                 in_degree_dest: int) -> np.ndarray:
    """The per-edge message for one destination.

    Mean-aggregating models pre-divide by the destination in-degree so
    the hot slot can combine with plain addition; sum models pass the
    row through. Unit-test surface; the chunk path fuses this.
    """
    if model in (ModelKind.GCN, ModelKind.SAGE):
        return h_source / max(1, in_degree_dest)
    return h_source.copy()


@dataclass
class LayerMetrics:
    """One metrics row per layer, in output-CSV column order."""

    layer: int
    messages: int = 0
    evictions: int = 0
    reloads: int = 0
    unique_reloads: int = 0
    mean_span: float = 0.0
    p99_span: float = 0.0
    mean_reload_pct: float = 0.0
    bytes_read: int = 0
    bytes_written: int = 0
    wall_seconds: float = 0.0
    # instrumentation carried alongside the CSV columns
    feature_bytes_read: int = 0
    hot_peak: int = 0
    hot_slot_count: int = 0
    delivery_counts: np.ndarray | None = field(default=None, repr=False)

CSV_FIELDS = [
    "layer", "messages", "evictions", "reloads", "unique_reloads",
    "mean_span", "p99_span", "mean_reload_pct", "bytes_read",
    "bytes_written", "wall_seconds",
]


@dataclass
class LayerContext:
    """Everything one layer pass needs, wired up by init_layer."""

    layer_index: int
    model: ModelKind
    num_vertices: int
    in_degrees: np.ndarray  # int64
    embed_dim: int  # width of incoming rows
    agg_dim: int  # slot width (2x embed for the concat model)
    pending: np.ndarray  # uint32
    states: StateTable
    memory: MemoryManager
    io: IOCounters
    counters: StageCounters
    gin_epsilon: float = 0.0
    self_term: bool = False
    mean_norm: bool = False
    sub_batch: int = 1
    step: int = 0
    chunks_seen: int = 0
    first_step: np.ndarray = field(default=None, repr=False)
    last_step: np.ndarray = field(default=None, repr=False)


def init_layer(in_degrees: np.ndarray, weights: ModelWeights,
               layer_index: int, *, hot_budget_bytes: int,
               cold_path, io: IOCounters, eviction: str = "minpend",
               seed: int = 0, hot_slots: int | None = None,
               evict_batch: int | None = None) -> LayerContext:
    """Set up pending counters, state table and the memory manager."""
    v = len(in_degrees)
    model = weights.kind
    embed_dim = weights.embedding_dim(layer_index)
    agg_dim = weights.agg_dim(layer_index)
    self_term = model in (ModelKind.SAGE, ModelKind.GIN)

    pending = in_degrees.astype(np.uint32)
    if self_term:
        pending = pending + np.uint32(1)
    states = StateTable(v)
    counters = StageCounters()

    if hot_slots is not None:
        if hot_slots < 1:
            raise ConfigError("hot_slots must be >= 1")
        budget = MemoryBudget(hot_slots, agg_dim)
    else:
        budget = MemoryBudget.from_bytes(hot_budget_bytes, agg_dim)

    max_pending = int(pending.max()) if v else 1
    policy = make_policy(eviction, max_pending, seed)
    memory = MemoryManager(
        budget, pending, states, policy, cold_path, io, counters,
        evict_batch=evict_batch,
    )
    ctx = LayerContext(
        layer_index=layer_index,
        model=model,
        num_vertices=v,
        in_degrees=in_degrees,
        embed_dim=embed_dim,
        agg_dim=agg_dim,
        pending=pending,
        states=states,
        memory=memory,
        io=io,
        counters=counters,
        gin_epsilon=weights.gin_epsilon,
        self_term=self_term,
        mean_norm=model in (ModelKind.GCN, ModelKind.SAGE),
        # headroom: admission batches never ask for more than half the
        # slots, so eviction always has something to work with
        sub_batch=max(1, budget.slot_count // 2),
    )
    ctx.first_step = np.full(v, -1, dtype=np.int64)
    ctx.last_step = np.full(v, -1, dtype=np.int64)
    return ctx


def _graduate(ctx: LayerContext, vertices: np.ndarray, sink) -> None:
    rows = ctx.memory.release_batch(vertices)
    sink.add_batch(vertices, rows)


def _ragged_ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenated [s, s+c) ranges as one index array."""
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    idx = np.ones(total, dtype=np.int64)
    idx[0] = starts[0]
    pos = np.cumsum(counts)[:-1]
    idx[pos] = starts[1:] - starts[:-1] - counts[:-1] + 1
    return np.cumsum(idx)


def _deliver(ctx: LayerContext, dests: np.ndarray, starts: np.ndarray,
             counts: np.ndarray, firsts: np.ndarray, lasts: np.ndarray,
             msgs: np.ndarray, sink, combine: str = "sum") -> int:
    """Deliver destination-grouped addends, graduating finished vertices.

    msgs holds the chunk's addends sorted by destination; starts/counts
    slice it per destination, preserving stream order within each group.
    Returns the number of destinations touched. Splits into sub-batches
    so tiny slot budgets still make progress one vertex at a time.
    """
    mem = ctx.memory
    touched = 0
    for lo in range(0, len(dests), ctx.sub_batch):
        hi = min(lo + ctx.sub_batch, len(dests))
        vs = dests[lo:hi]
        slots_idx = mem.ensure_hot_many(vs)
        cnt = counts[lo:hi]
        if combine == "sum":
            rows = msgs[_ragged_ranges(starts[lo:hi], cnt)]
            per_row_slot = np.repeat(slots_idx, cnt)
            width = rows.shape[1]
            if width == ctx.agg_dim:
                np.add.at(mem.slots, per_row_slot, rows)
            else:
                np.add.at(mem.slots[:, :width], per_row_slot, rows)
        else:  # write_self_half: one row per destination, disjoint columns
            mem.slots[slots_idx, ctx.embed_dim :] = msgs[starts[lo:hi]]
        pend = ctx.pending[vs]
        if np.any(pend < cnt):
            bad = vs[pend < cnt][:4]
            raise ConsistencyError(
                f"more deliveries than pending for vertices {bad.tolist()}"
            )
        ctx.pending[vs] = pend - cnt.astype(np.uint32)
        newp = ctx.pending[vs]
        policy = mem.policy
        for vtx, p in zip(vs.tolist(), newp.tolist()):
            policy.on_message(vtx, int(p))
        ctx.counters.messages += int(cnt.sum())

        f = ctx.first_step[vs]
        ctx.first_step[vs] = np.where(f < 0, firsts[lo:hi], f)
        ctx.last_step[vs] = lasts[lo:hi]

        done = vs[newp == 0]
        if done.size:
            _graduate(ctx, done, sink)
        touched += len(vs)
    return touched


def process_chunk(ctx: LayerContext, chunk: Chunk, sink) -> None:
    """Consume one source chunk: walk its sources and push contributions."""
    n = chunk.num_rows
    ctx.chunks_seen += 1
    reloads_before = ctx.counters.reloads
    touched = 0
    src_ids = np.arange(chunk.start_id, chunk.end_id, dtype=np.int64)

    if ctx.model == ModelKind.SAGE:
        # the self column block is disjoint from the neighbor sum, so
        # it can land as one batch without disturbing addition order
        steps = np.arange(ctx.step, ctx.step + n, dtype=np.int64)
        ctx.step += n
        touched += _deliver(
            ctx, src_ids, np.arange(n, dtype=np.int64),
            np.ones(n, dtype=np.int64), steps, steps, chunk.features,
            sink, combine="write_self_half",
        )
    elif ctx.model == ModelKind.GCN:
        # sources nobody points at still owe an (all-zero) output row
        fresh = ctx.states.array[src_ids] == NOT_STARTED
        zeros = src_ids[fresh & (ctx.pending[src_ids] == 0)]
        for lo in range(0, len(zeros), ctx.sub_batch):
            vs = zeros[lo : lo + ctx.sub_batch]
            ctx.memory.ensure_hot_many(vs)
            _graduate(ctx, vs, sink)

    # addend stream for the sum half: source-major, and for the sum
    # self-term model each source's own term precedes its out-edges
    fanout = np.diff(chunk.local_offsets)
    if ctx.model == ModelKind.GIN:
        per_src = fanout + 1
        m = int(per_src.sum())
        self_pos = np.concatenate(([0], np.cumsum(per_src)[:-1]))
        stream_src = np.repeat(np.arange(n), per_src)
        is_self = np.zeros(m, dtype=bool)
        is_self[self_pos] = True
        stream_dst = np.empty(m, dtype=np.int64)
        stream_dst[is_self] = src_ids
        stream_dst[~is_self] = chunk.out_neighbors
    else:
        m = len(chunk.out_neighbors)
        stream_src = np.repeat(np.arange(n), fanout)
        stream_dst = chunk.out_neighbors
        is_self = None

    if m:
        msgs = chunk.features[stream_src]
        if is_self is not None:
            msgs[is_self] *= np.float32(1.0) + np.float32(ctx.gin_epsilon)
        if ctx.mean_norm:
            norm = np.maximum(ctx.in_degrees[stream_dst], 1)
            msgs /= norm.astype(np.float32)[:, None]

        order = np.argsort(stream_dst, kind="stable")
        sorted_dst = stream_dst[order]
        uniq, seg_starts = np.unique(sorted_dst, return_index=True)
        counts = np.diff(np.append(seg_starts, m))
        # step of an addend is its position in the stream; a stable
        # sort keeps each group's positions ascending
        positions = order + ctx.step
        ctx.step += m
        seg_ends = seg_starts + counts - 1
        firsts = positions[seg_starts]
        lasts = positions[seg_ends]
        msgs_sorted = msgs[order]

        # process destinations in first-appearance order, like a
        # straight per-edge walk would
        appearance = np.argsort(firsts, kind="stable")
        touched += _deliver(
            ctx,
            uniq[appearance],
            seg_starts[appearance],
            counts[appearance],
            firsts[appearance],
            lasts[appearance],
            msgs_sorted,
            sink,
        )

    reloads = ctx.counters.reloads - reloads_before
    pct = 100.0 * reloads / max(1, touched)
    ctx.counters.chunk_reload_pcts.append(pct)


def finalize_layer(ctx: LayerContext) -> LayerMetrics:
    """Check the layer drained completely and fold up its metrics."""
    not_done = np.flatnonzero(ctx.states.array != COMPLETED)
    if not_done.size:
        raise IncompleteLayerError(not_done[:16].tolist(), int(not_done.size))
    m = LayerMetrics(layer=ctx.layer_index)
    m.messages = ctx.counters.messages
    m.evictions = ctx.counters.evictions
    m.reloads = ctx.counters.reloads
    m.unique_reloads = int(ctx.memory.unique_reloaded.sum())
    got = ctx.first_step >= 0
    if np.any(got):
        spans = (ctx.last_step[got] - ctx.first_step[got]).astype(np.float64)
        m.mean_span = float(spans.mean())
        m.p99_span = float(np.percentile(spans, 99))
    if ctx.counters.chunk_reload_pcts:
        m.mean_reload_pct = float(np.mean(ctx.counters.chunk_reload_pcts))
    m.bytes_read = ctx.io.total_read()
    m.bytes_written = ctx.io.total_written()
    m.hot_peak = ctx.counters.hot_peak
    m.hot_slot_count = ctx.memory.slot_count
    return m
