"""Dense transform stage.

Graduated rows collect in fixed-capacity buffers; a full buffer crosses
the queue to this stage, is multiplied through the layer weights, and
the empty buffer goes back to the orchestrator through a small return
pool. Exactly two buffers exist per layer, so graduation stalls (rather
than allocating) when compute falls behind.

The matmul backend is pluggable. Backends may cap their batch size;
the transform slices batches accordingly, which is safe because the
default backend guarantees the result of a row never depends on the
other rows in its batch.
"""

import queue
from dataclasses import dataclass

import numpy as np

from .chunks import END_OF_STREAM, StageFailure
from .errors import ConfigError
from .storage import LayerWeights


class MatmulBackend:
    """Default dense transform with batch-invariant rounding.

    Library matmuls retile by batch height, so the same row can round
    differently depending on how many rows ride along with it. Walking
    the shared axis in fixed order instead makes every output element a
    fixed-order f32 sum: splitting or regrouping batches cannot change
    a bit, which is what keeps final outputs independent of buffer and
    chunk sizing.
    """

    name = "stable"
    max_batch_rows: int | None = None

    def apply(self, batch: np.ndarray, weight: np.ndarray,
              bias: np.ndarray) -> np.ndarray:
        out = np.empty((len(batch), weight.shape[0]), dtype=np.float32)
        out[:] = bias
        tmp = np.empty_like(out)
        for k in range(weight.shape[1]):
            np.multiply(batch[:, k, None], weight[None, :, k], out=tmp)
            out += tmp
        return out


class BlasBackend:
    """Library-backed transform; faster, but rounding shifts with the
    batch shape, so outputs are only reproducible for a fixed config."""

    name = "blas"
    max_batch_rows: int | None = None

    def apply(self, batch: np.ndarray, weight: np.ndarray,
              bias: np.ndarray) -> np.ndarray:
        return batch @ weight.T + bias


_BACKENDS = {"stable": MatmulBackend, "blas": BlasBackend}


def register_backend(cls) -> None:
    _BACKENDS[cls.name] = cls


def get_backend(name: str) -> "MatmulBackend":
    try:
        return _BACKENDS[name]()
    except KeyError:
        raise ConfigError(f"unknown compute backend {name!r}") from None


def transform(batch: np.ndarray, layer: LayerWeights, *,
              apply_activation: bool,
              backend: MatmulBackend | None = None) -> np.ndarray:
    """out = act(batch @ W.T + bias); activation is ReLU when applied."""
    backend = backend or MatmulBackend()
    if batch.shape[1] != layer.in_dim:
        raise ConfigError(
            f"batch width {batch.shape[1]} != layer in_dim {layer.in_dim}"
        )
    cap = backend.max_batch_rows
    if cap and len(batch) > cap:
        parts = [
            backend.apply(batch[i : i + cap], layer.weight, layer.bias)
            for i in range(0, len(batch), cap)
        ]
        out = np.concatenate(parts, axis=0)
    else:
        out = backend.apply(batch, layer.weight, layer.bias)
    out = np.asarray(out, dtype=np.float32)
    if apply_activation:
        np.maximum(out, 0.0, out=out)
    return out


class GraduationBuffer:
    """Preallocated (ids, rows) pair filled by the orchestrator."""

    def __init__(self, capacity_rows: int, dim: int):
        self.ids = np.empty(capacity_rows, dtype=np.int64)
        self.rows = np.empty((capacity_rows, dim), dtype=np.float32)
        self.fill = 0

    @property
    def capacity(self) -> int:
        return len(self.ids)

    def room(self) -> int:
        return self.capacity - self.fill

    def put(self, ids: np.ndarray, rows: np.ndarray) -> None:
        n = len(ids)
        self.ids[self.fill : self.fill + n] = ids
        self.rows[self.fill : self.fill + n] = rows
        self.fill += n

    def reset(self) -> None:
        self.fill = 0


class GraduationSink:
    """Double-buffered hand-off from the orchestrator to compute.

    add_batch never drops rows: when the active buffer fills it is
    shipped and the other buffer is taken from the pool, blocking if
    compute still owns it.
    """

    def __init__(self, capacity_bytes: int, dim: int,
                 out_queue: queue.Queue, pool: queue.Queue):
        rows = max(1, capacity_bytes // (dim * 4 + 8))
        self.capacity_rows = rows
        self._out = out_queue
        self._pool = pool
        for _ in range(2):
            pool.put(GraduationBuffer(rows, dim))
        self._active = pool.get()
        self.rows_shipped = 0

    def add_batch(self, ids: np.ndarray, rows: np.ndarray) -> None:
        pos = 0
        while pos < len(ids):
            take = min(self._active.room(), len(ids) - pos)
            if take:
                self._active.put(ids[pos : pos + take],
                                 rows[pos : pos + take])
                pos += take
            if self._active.room() == 0:
                self._rotate()

    def _rotate(self) -> None:
        self.rows_shipped += self._active.fill
        self._out.put(self._active)
        self._active = self._pool.get()

    def flush(self) -> None:
        if self._active.fill:
            self._rotate()

    def finish(self) -> None:
        """Flush leftovers and terminate the stream."""
        self.flush()
        self._out.put(END_OF_STREAM)

    def abandon(self, failure: StageFailure) -> None:
        self._out.put(failure)


def run_compute(in_queue: queue.Queue, out_queue: queue.Queue,
                pool: queue.Queue, layer: LayerWeights, *,
                apply_activation: bool,
                backend: MatmulBackend | None = None) -> None:
    """Compute stage: transform graduated batches as they arrive.

    Buffers return to the pool even while draining after a failure, so
    the orchestrator can never deadlock waiting for one.
    """
    failed = None
    while True:
        item = in_queue.get()
        if item is END_OF_STREAM:
            out_queue.put(failed if failed else END_OF_STREAM)
            return
        if isinstance(item, StageFailure):
            out_queue.put(item)
            return
        buf: GraduationBuffer = item
        if failed is None:
            try:
                ids = buf.ids[: buf.fill].copy()
                out = transform(
                    buf.rows[: buf.fill],
                    layer,
                    apply_activation=apply_activation,
                    backend=backend,
                )
                out_queue.put((ids, out))
            except BaseException as e:
                failed = StageFailure("compute", e)
        buf.reset()
        pool.put(buf)
