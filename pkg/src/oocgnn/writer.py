"""Embedding writer: scatter transformed rows into partitioned runs.

Output vertex ids arrive in graduation order, which is arbitrary. Each
row lands in the append buffer of its id-range partition; a buffer that
fills is sorted by id and flushed as one spill file, so every file on
disk is internally sorted and the reader can merge cheaply next layer.
"""

import queue
import shutil
from pathlib import Path

import numpy as np

from .chunks import END_OF_STREAM, StageFailure
from .errors import ConsistencyError
from .iostats import IOCounters
from .storage import (
    MANIFEST_FILE,
    LayerMeta,
    append_manifest,
    part_dir,
    partition_ranges,
    partition_width,
    write_layer_meta,
    write_spill_file,
)


class _PartitionBuffer:
    __slots__ = ("ids", "rows", "fill", "spills")

    def __init__(self, capacity_rows: int, dim: int):
        self.ids = np.empty(capacity_rows, dtype=np.int64)
        self.rows = np.empty((capacity_rows, dim), dtype=np.float32)
        self.fill = 0
        self.spills = 0


class SpillBufferSet:
    """Fixed-budget append buffers, one per output partition."""

    def __init__(self, out_dir, num_vertices: int, dim: int,
                 partitions: int, buffer_bytes: int, *,
                 direct: bool = True, io: IOCounters | None = None):
        self.out_dir = Path(out_dir)
        self.num_vertices = num_vertices
        self.dim = dim
        self.partitions = partitions
        self.direct = direct
        self.io = io or IOCounters()
        self.width = partition_width(num_vertices, partitions)
        # per-partition share of the budget, at least one row each
        rows = max(1, buffer_bytes // max(1, partitions) // (dim * 4 + 8))
        self.rows_per_buffer = rows
        self._bufs = [_PartitionBuffer(rows, dim) for _ in range(partitions)]
        self._seen = np.zeros(num_vertices, dtype=bool)
        self.rows_written = 0

        write_layer_meta(
            self.out_dir, LayerMeta(num_vertices, dim, "f32", partitions)
        )
        for k in range(partitions):
            pdir = part_dir(self.out_dir, k)
            pdir.mkdir(parents=True, exist_ok=True)
            (pdir / MANIFEST_FILE).write_text("")

    def scatter(self, ids: np.ndarray, rows: np.ndarray) -> None:
        if len(ids) == 0:
            return
        if ids.min() < 0 or ids.max() >= self.num_vertices:
            raise ConsistencyError("output vertex id out of range")
        if np.any(self._seen[ids]):
            dupes = ids[self._seen[ids]][:4]
            raise ConsistencyError(
                f"duplicate output rows for vertices {dupes.tolist()}"
            )
        self._seen[ids] = True
        parts = ids // self.width
        for k in np.unique(parts):
            sel = parts == k
            self._append(int(k), ids[sel], rows[sel])

    def _append(self, k: int, ids: np.ndarray, rows: np.ndarray) -> None:
        buf = self._bufs[k]
        pos = 0
        while pos < len(ids):
            take = min(len(buf.ids) - buf.fill, len(ids) - pos)
            buf.ids[buf.fill : buf.fill + take] = ids[pos : pos + take]
            buf.rows[buf.fill : buf.fill + take] = rows[pos : pos + take]
            buf.fill += take
            pos += take
            if buf.fill == len(buf.ids):
                self._flush(k)

    def _flush(self, k: int) -> None:
        buf = self._bufs[k]
        if buf.fill == 0:
            return
        order = np.argsort(buf.ids[: buf.fill])
        name = f"spill_{buf.spills}"
        pdir = part_dir(self.out_dir, k)
        nbytes = write_spill_file(
            pdir / name,
            buf.ids[: buf.fill][order],
            buf.rows[: buf.fill][order],
            direct=self.direct,
        )
        self.io.spill_bytes_written += nbytes
        append_manifest(pdir, name)
        buf.spills += 1
        self.rows_written += buf.fill
        buf.fill = 0

    def flush_all(self) -> None:
        for k in range(self.partitions):
            self._flush(k)

    def coverage_gap(self) -> int:
        return self.num_vertices - int(self._seen.sum())


def discard_partial_output(out_dir) -> None:
    """Remove a layer directory a failed run left behind."""
    shutil.rmtree(out_dir, ignore_errors=True)


def run_writer(in_queue: queue.Queue, bufset: SpillBufferSet,
               failures: list) -> None:
    """Writer stage: drain (ids, rows) pairs until the stream ends.

    On an upstream failure the partial output directory is deleted and
    the failure lands in `failures` for the driver to re-raise. A local
    failure drains the queue so upstream stages never block on put().
    """
    local_failure = None
    terminated = False
    while not terminated:
        item = in_queue.get()
        if item is END_OF_STREAM:
            terminated = True
        elif isinstance(item, StageFailure):
            local_failure = local_failure or item
            terminated = True
        elif local_failure is None:
            try:
                ids, rows = item
                bufset.scatter(ids, rows)
            except BaseException as e:
                local_failure = StageFailure("writer", e)
                # keep draining; upstream will terminate the stream
    if local_failure is not None:
        discard_partial_output(bufset.out_dir)
        failures.append(local_failure)
        return
    bufset.flush_all()
    gap = bufset.coverage_gap()
    if gap:
        failure = StageFailure(
            "writer",
            ConsistencyError(f"{gap} vertices missing from output"),
        )
        discard_partial_output(bufset.out_dir)
        failures.append(failure)
