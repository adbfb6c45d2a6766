"""Merge-on-read chunk assembly.

A layer's input is a set of internally-sorted spill files grouped into
id-range partitions. The reader walks the vertex space in fixed-size
id intervals; for each interval it binary-searches every overlapping
spill, issues one aligned range read per spill, and merges the slices
back into a dense, id-ordered block. Each spill is therefore read
exactly once per layer, sequentially, regardless of how many runs the
writer left behind.
"""

import queue
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .directio import AlignedReader
from .errors import ConsistencyError, CoverageError, PipelineError
from .iostats import IOCounters
from .storage import (
    NP_DTYPES,
    LayerMeta,
    SpillHeader,
    TopologyHeader,
    part_dir,
    partition_ranges,
    read_layer_meta,
    read_manifest,
    read_spill_header,
    read_topology_header,
)


def plan_chunks(num_vertices: int, dim: int, dtype: str,
                chunk_budget: int) -> list:
    """Split [0, V) into intervals whose feature payload fits the budget.

    Always at least one row per chunk, so a budget smaller than a row
    degrades to row-at-a-time streaming instead of failing.
    """
    row_bytes = dim * (2 if dtype == "f16" else 4)
    rows = max(1, chunk_budget // max(1, row_bytes))
    return [
        (start, min(start + rows, num_vertices))
        for start in range(0, num_vertices, rows)
    ]


class TopologySource:
    """Streams offset and neighbor slices for id intervals."""

    def __init__(self, path, direct: bool = True,
                 counters: IOCounters | None = None):
        self.header: TopologyHeader = read_topology_header(path)
        self._reader = AlignedReader(path, direct=direct)
        self._counters = counters or IOCounters()
        self._nbr_dtype = "<u4" if self.header.id_width == 4 else "<u8"

    def read_slice(self, start: int, end: int) -> tuple:
        """Return (local_offsets, neighbors) for sources [start, end).

        local_offsets is rebased to zero; neighbors come back int64.
        """
        h = self.header
        raw, nbytes = self._reader.pread(
            h.offsets_pos + start * 8, (end - start + 1) * 8
        )
        self._counters.topology_bytes_read += nbytes
        offsets = np.frombuffer(raw, dtype="<u8").astype(np.int64)
        o0, o1 = int(offsets[0]), int(offsets[-1])
        raw, nbytes = self._reader.pread(
            h.neighbors_pos + o0 * h.id_width, (o1 - o0) * h.id_width
        )
        self._counters.topology_bytes_read += nbytes
        neighbors = np.frombuffer(raw, dtype=self._nbr_dtype).astype(np.int64)
        return offsets - o0, neighbors

    def close(self) -> None:
        self._reader.close()


@dataclass
class SpillDescriptor:
    """One spill file plus its lazily-opened runtime state."""

    name: str
    header: SpillHeader
    reader: AlignedReader | None = None
    ids: np.ndarray | None = None
    data_reads: int = 0  # row-payload reads issued, for laziness checks

    @property
    def min_id(self) -> int:
        return self.header.min_id

    @property
    def max_id(self) -> int:
        return self.header.max_id


class SpillSet:
    """Index over every spill file of one layer directory.

    Headers are scanned once at mount to build the (min_id, max_id)
    index; file handles and id arrays are opened lazily on first
    overlap and recycled LRU-fashion past `max_open`.
    """

    def __init__(self, layer_dir, direct: bool = True,
                 counters: IOCounters | None = None, max_open: int = 128):
        self.layer_dir = Path(layer_dir)
        self.direct = direct
        self.counters = counters or IOCounters()
        self.max_open = max(1, max_open)
        self.meta: LayerMeta = read_layer_meta(self.layer_dir)
        self.row_bytes = self.meta.dim * (2 if self.meta.dtype == "f16" else 4)
        self._open: OrderedDict = OrderedDict()  # path -> descriptor

        self.partitions: list = []  # per partition: descriptors by min_id
        total_rows = 0
        for k in range(self.meta.partitions):
            pdir = part_dir(self.layer_dir, k)
            descs = []
            for name in read_manifest(pdir):
                hdr = read_spill_header(pdir / name)
                if hdr.dim != self.meta.dim or hdr.dtype != self.meta.dtype:
                    raise ConsistencyError(
                        f"{pdir / name}: shape {hdr.dim}/{hdr.dtype} does "
                        f"not match layer meta {self.meta.dim}/{self.meta.dtype}"
                    )
                total_rows += hdr.row_count
                descs.append(SpillDescriptor(name, hdr))
            descs.sort(key=lambda d: d.min_id)
            self.partitions.append(descs)
        if total_rows != self.meta.num_vertices:
            raise CoverageError(
                f"{self.layer_dir}: manifests cover {total_rows} rows, "
                f"meta says {self.meta.num_vertices}"
            )
        self._ranges = partition_ranges(
            self.meta.num_vertices, self.meta.partitions
        )
        # bumped once per id as chunks pass coverage; all-ones after a
        # full pass is the exactly-once read guarantee, made inspectable
        self.delivery = np.zeros(self.meta.num_vertices, dtype=np.uint16)

    def overlapping(self, start: int, end: int) -> list:
        """Descriptors whose id range intersects [start, end)."""
        out = []
        for k, (lo, hi) in enumerate(self._ranges):
            if hi <= start or lo >= end:
                continue
            for d in self.partitions[k]:
                if d.max_id >= start and d.min_id < end:
                    out.append(d)
        return out

    def ensure_open(self, desc: SpillDescriptor) -> None:
        path = desc.header.path
        if desc.reader is not None:
            self._open.move_to_end(path)
            return
        desc.reader = AlignedReader(path, direct=self.direct)
        raw, nbytes = desc.reader.pread(
            desc.header.ids_pos, desc.header.row_count * 8
        )
        self.counters.index_bytes_read += nbytes
        desc.ids = np.frombuffer(raw, dtype="<u8").astype(np.int64)
        self._open[path] = desc
        while len(self._open) > self.max_open:
            _, old = self._open.popitem(last=False)
            old.reader.close()
            old.reader = None
            old.ids = None

    def read_rows(self, desc: SpillDescriptor, start: int,
                  end: int) -> tuple:
        """Rows of one spill with start <= id < end, as (ids, rows)."""
        self.ensure_open(desc)
        r0 = int(np.searchsorted(desc.ids, start, side="left"))
        r1 = int(np.searchsorted(desc.ids, end, side="left"))
        if r0 == r1:
            return None, None
        raw, nbytes = desc.reader.pread(
            desc.header.rows_pos + r0 * self.row_bytes,
            (r1 - r0) * self.row_bytes,
        )
        self.counters.feature_bytes_read += nbytes
        desc.data_reads += 1
        rows = np.frombuffer(raw, dtype=NP_DTYPES[self.meta.dtype])
        return desc.ids[r0:r1], rows.reshape(r1 - r0, self.meta.dim)

    def close(self) -> None:
        for path in list(self._open):
            d = self._open.pop(path)
            if d.reader is not None:
                d.reader.close()
                d.reader = None
                d.ids = None


@dataclass
class Chunk:
    """A dense id-ordered block of embeddings plus its out-adjacency.

    Payloads are treated as immutable once enqueued; downstream stages
    only ever read them.
    """

    start_id: int
    end_id: int
    features: np.ndarray  # (n, dim) float32
    local_offsets: np.ndarray  # (n+1,) int64, rebased
    out_neighbors: np.ndarray  # int64

    @property
    def num_rows(self) -> int:
        return self.end_id - self.start_id


def read_chunk(interval: tuple, spills: SpillSet,
               topo: TopologySource) -> Chunk:
    """Assemble one dense chunk by merging every overlapping spill."""
    start, end = interval
    id_slices = []
    row_slices = []
    for desc in spills.overlapping(start, end):
        ids, rows = spills.read_rows(desc, start, end)
        if ids is None:
            continue
        id_slices.append(ids)
        row_slices.append(rows)
    if id_slices:
        all_ids = np.concatenate(id_slices)
        if len(id_slices) == 1:
            merged_ids, merged = all_ids, row_slices[0]
        else:
            order = np.argsort(all_ids, kind="stable")
            merged_ids = all_ids[order]
            merged = np.concatenate(row_slices, axis=0)[order]
    else:
        merged_ids = np.empty(0, dtype=np.int64)
        merged = np.empty((0, spills.meta.dim), dtype=np.float32)

    expect = np.arange(start, end, dtype=np.int64)
    if not np.array_equal(merged_ids, expect):
        present = set(merged_ids.tolist())
        missing = [i for i in range(start, end) if i not in present][:8]
        dupes = len(merged_ids) - len(present)
        raise CoverageError(
            f"interval [{start}, {end}) assembled {len(merged_ids)} rows; "
            f"missing ids {missing}{'...' if len(missing) == 8 else ''}, "
            f"{dupes} duplicates"
        )
    spills.delivery[start:end] += 1
    features = merged.astype(np.float32, copy=False)
    local_offsets, out_neighbors = topo.read_slice(start, end)
    return Chunk(start, end, features, local_offsets, out_neighbors)


END_OF_STREAM = object()


@dataclass
class StageFailure:
    """Terminal queue item that carries a stage's death downstream."""

    stage: str
    error: BaseException

    def raise_(self):
        raise PipelineError(self.stage, self.error) from self.error


def run_reader(spills: SpillSet, topo: TopologySource, plan: list,
               out_queue: queue.Queue) -> None:
    """Reader stage: stream the chunk plan into a bounded queue.

    On failure, emits a StageFailure and stops; the queue always
    receives a terminal item so downstream stages cannot hang.
    """
    try:
        for interval in plan:
            out_queue.put(read_chunk(interval, spills, topo))
        out_queue.put(END_OF_STREAM)
    except BaseException as e:  # propagated, never swallowed
        out_queue.put(StageFailure("reader", e))
    finally:
        spills.close()
        topo.close()
