"""Pipeline assembly and the public inference entry points.

One layer = four threads over bounded queues:

    reader -> orchestrator -> compute -> writer

The reader streams dense chunks; the orchestrator turns them into
per-destination aggregates and graduates finished rows into shared
buffers; compute transforms full buffers; the writer scatters results
into the next layer's partitioned spill runs. Any stage that dies
plants a terminal failure item downstream and the survivors drain, so
join() always returns and the first error is re-raised in the caller.
"""

import csv
import queue
import shutil
import tempfile
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .chunks import (
    END_OF_STREAM,
    SpillSet,
    StageFailure,
    TopologySource,
    plan_chunks,
    run_reader,
)
from .compute import GraduationSink, MatmulBackend, run_compute
from .errors import ConfigError, EngineError
from .iostats import IOCounters
from .oracle import oracle_inference
from .orchestrator import (
    CSV_FIELDS,
    LayerMetrics,
    finalize_layer,
    init_layer,
    process_chunk,
)
from .storage import (
    INDEGREE_FILE,
    TOPOLOGY_FILE,
    ModelWeights,
    load_layer_matrix,
    read_csr,
    read_in_degrees,
    read_layer_meta,
    read_topology_header,
    read_weights,
    write_matrix_as_layer,
)
from .writer import SpillBufferSet, run_writer


@dataclass
class PipelineConfig:
    """Knobs for one inference run. Sizes are bytes unless noted."""

    hot_budget: int = 64 << 20
    chunk_budget: int = 8 << 20
    graduation_budget: int = 16 << 20
    spill_buffer: int = 8 << 20
    partitions: int = 8
    queue_capacity: int = 20
    eviction: str = "minpend"
    seed: int = 0
    direct_io: bool = True
    discard_intermediate: bool = False
    hot_slots: int | None = None  # overrides hot_budget when set
    evict_batch: int | None = None
    max_open_files: int = 128
    backend: MatmulBackend | None = field(default=None, repr=False)

    def validate(self) -> None:
        if self.partitions < 1:
            raise ConfigError("partitions must be >= 1")
        if self.queue_capacity < 1:
            raise ConfigError("queue capacity must be >= 1")
        if self.chunk_budget < 1:
            raise ConfigError("chunk budget must be positive")


@dataclass
class RunReport:
    layers: list
    out_dir: Path
    wall_seconds: float

    def total(self, field_name: str):
        return sum(getattr(m, field_name) for m in self.layers)


def write_metrics_csv(path, layers: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_FIELDS)
        for m in layers:
            w.writerow(
                [
                    m.layer, m.messages, m.evictions, m.reloads,
                    m.unique_reloads,
                    f"{m.mean_span:.3f}", f"{m.p99_span:.3f}",
                    f"{m.mean_reload_pct:.3f}", m.bytes_read,
                    m.bytes_written, f"{m.wall_seconds:.3f}",
                ]
            )


def run_layer(topology_path, in_degrees: np.ndarray,
              input_dir, output_dir, weights: ModelWeights,
              layer_index: int, config: PipelineConfig,
              scratch_dir) -> LayerMetrics:
    """Run one layer through the four-stage pipeline."""
    t0 = time.perf_counter()
    io = IOCounters()
    is_last = layer_index == len(weights.layers) - 1

    spills = SpillSet(
        input_dir,
        direct=config.direct_io,
        counters=io,
        max_open=config.max_open_files,
    )
    meta = spills.meta
    expect_dim = weights.embedding_dim(layer_index)
    if meta.dim != expect_dim:
        spills.close()
        raise ConfigError(
            f"layer {layer_index} expects {expect_dim}-wide rows, "
            f"input holds {meta.dim}"
        )
    topo = TopologySource(topology_path, direct=config.direct_io,
                          counters=io)
    plan = plan_chunks(meta.num_vertices, meta.dim, meta.dtype,
                       config.chunk_budget)

    cold_path = Path(scratch_dir) / f"cold_{layer_index}.bin"
    ctx = init_layer(
        in_degrees, weights, layer_index,
        hot_budget_bytes=config.hot_budget,
        cold_path=cold_path, io=io,
        eviction=config.eviction, seed=config.seed,
        hot_slots=config.hot_slots, evict_batch=config.evict_batch,
    )

    cap = config.queue_capacity
    chunk_q: queue.Queue = queue.Queue(maxsize=cap)
    grad_q: queue.Queue = queue.Queue(maxsize=cap)
    write_q: queue.Queue = queue.Queue(maxsize=cap)
    pool_q: queue.Queue = queue.Queue()
    sink = GraduationSink(config.graduation_budget, ctx.agg_dim,
                          grad_q, pool_q)
    bufset = SpillBufferSet(
        output_dir, meta.num_vertices, weights.layers[layer_index].out_dim,
        config.partitions, config.spill_buffer,
        direct=config.direct_io, io=io,
    )
    writer_failures: list = []

    def run_orchestrator() -> None:
        try:
            while True:
                item = chunk_q.get()
                if item is END_OF_STREAM:
                    sink.finish()
                    return
                if isinstance(item, StageFailure):
                    sink.abandon(item)
                    return
                process_chunk(ctx, item, sink)
        except BaseException as e:
            failure = StageFailure("orchestrator", e)
            sink.abandon(failure)
            # drain so the reader never blocks on a full queue
            while True:
                item = chunk_q.get()
                if item is END_OF_STREAM or isinstance(item, StageFailure):
                    return

    threads = [
        threading.Thread(
            target=run_reader, args=(spills, topo, plan, chunk_q),
            name="reader", daemon=True,
        ),
        threading.Thread(
            target=run_orchestrator, name="orchestrator", daemon=True
        ),
        threading.Thread(
            target=run_compute,
            args=(grad_q, write_q, pool_q, weights.layers[layer_index]),
            kwargs={
                "apply_activation": not is_last,
                "backend": config.backend,
            },
            name="compute", daemon=True,
        ),
        threading.Thread(
            target=run_writer, args=(write_q, bufset, writer_failures),
            name="writer", daemon=True,
        ),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    ctx.memory.close(delete_cold=True)
    if writer_failures:
        writer_failures[0].raise_()

    metrics = finalize_layer(ctx)
    metrics.wall_seconds = time.perf_counter() - t0
    metrics.feature_bytes_read = io.feature_bytes_read
    metrics.delivery_counts = spills.delivery
    return metrics


def run_inference(graph_dir, weights, config: PipelineConfig, out_dir,
                  metrics_path=None) -> RunReport:
    """Run every layer, chaining each output as the next input."""
    t0 = time.perf_counter()
    config.validate()
    graph_dir = Path(graph_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not isinstance(weights, ModelWeights):
        weights = read_weights(weights)

    topo_path = graph_dir / TOPOLOGY_FILE
    header = read_topology_header(topo_path)
    in_degrees = read_in_degrees(
        graph_dir / INDEGREE_FILE, header.num_vertices
    )
    features_dir = graph_dir / "features"
    weights.validate(read_layer_meta(features_dir).dim)

    layers = []
    input_dir = features_dir
    with tempfile.TemporaryDirectory(dir=out_dir,
                                     prefix=".scratch_") as scratch:
        for l in range(len(weights.layers)):
            layer_out = out_dir / f"layer_{l}"
            if layer_out.exists():
                shutil.rmtree(layer_out)
            m = run_layer(
                topo_path, in_degrees, input_dir, layer_out,
                weights, l, config, scratch,
            )
            layers.append(m)
            if config.discard_intermediate and l > 0:
                shutil.rmtree(input_dir, ignore_errors=True)
            input_dir = layer_out
    report = RunReport(
        layers=layers,
        out_dir=out_dir,
        wall_seconds=time.perf_counter() - t0,
    )
    write_metrics_csv(metrics_path or out_dir / "metrics.csv", layers)
    return report


def final_layer_dir(out_dir) -> Path:
    out_dir = Path(out_dir)
    candidates = sorted(
        (p for p in out_dir.glob("layer_*") if p.is_dir()),
        key=lambda p: int(p.name.split("_")[1]),
    )
    if not candidates:
        raise ConfigError(f"{out_dir}: no layer outputs found")
    return candidates[-1]


def run_oracle(graph_dir, weights, out_dir, *,
               partitions: int = 1) -> Path:
    """Reference inference over a dataset directory; returns output dir."""
    graph_dir = Path(graph_dir)
    if not isinstance(weights, ModelWeights):
        weights = read_weights(weights)
    graph = read_csr(graph_dir)
    features = load_layer_matrix(graph_dir / "features")
    out = oracle_inference(graph, features, weights)
    out_dir = Path(out_dir)
    layer_dir = out_dir / f"layer_{len(weights.layers) - 1}"
    if layer_dir.exists():
        shutil.rmtree(layer_dir)
    write_matrix_as_layer(layer_dir, out, partitions=partitions)
    return out_dir


@dataclass
class CompareReport:
    max_abs_err: float
    mean_abs_err: float
    argmax_mismatches: int
    rows: int
    tolerance: float

    @property
    def ok(self) -> bool:
        return (
            self.max_abs_err <= self.tolerance
            and self.argmax_mismatches == 0
        )


def compare_outputs(dir_a, dir_b, tolerance: float) -> CompareReport:
    """Compare the final layer directories of two runs."""
    a = load_layer_matrix(final_layer_dir(dir_a))
    b = load_layer_matrix(final_layer_dir(dir_b))
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = np.abs(a.astype(np.float64) - b.astype(np.float64))
    mismatches = int(np.count_nonzero(a.argmax(axis=1) != b.argmax(axis=1)))
    return CompareReport(
        max_abs_err=float(diff.max(initial=0.0)),
        mean_abs_err=float(diff.mean()) if diff.size else 0.0,
        argmax_mismatches=mismatches,
        rows=a.shape[0],
        tolerance=tolerance,
    )


def clone_config(config: PipelineConfig, **overrides) -> PipelineConfig:
    return replace(config, **overrides)
