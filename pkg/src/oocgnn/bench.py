"""Ablation harness.

Scenario files are flat key=value text (one pair per line, # comments).
A scenario names a dataset (synthetic or an existing directory), a
model shape, a memory budget, and one sweep axis: eviction policy,
vertex ordering, or hot-budget size. Every run is cross-checked against
the in-memory reference before its metrics row counts.

Also here: a replay of the conventional gather pattern, used to compare
bytes touched per layer against the broadcast engine's exactly-once
sequential reads.
"""

import csv
import shutil
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .oracle import oracle_inference
from .reorder import compute_span, reorder_dataset
from .runtime import PipelineConfig, run_inference
from .storage import (
    GraphCSR,
    ModelKind,
    generate_synthetic,
    load_layer_matrix,
    random_weights,
    read_csr,
    read_layer_meta,
)


@dataclass
class Scenario:
    name: str = "scenario"
    sweep: str = "eviction"  # eviction | ordering | budget
    graph: str = "uniform"  # uniform | pa | path to a dataset dir
    vertices: int = 10000
    avg_degree: int = 10
    dim: int = 32
    layers_out: list = field(default_factory=lambda: [32, 16])
    model: str = "gcn"
    gin_eps: float = 0.0
    seed: int = 7
    budget_pct: float = 5.0
    budget_pcts: list = field(default_factory=lambda: [2, 5, 10, 50, 100])
    evictions: list = field(default_factory=lambda: ["minpend", "lru", "rnd"])
    orderings: list = field(default_factory=lambda: ["original", "greedy"])
    seeds: list = field(default_factory=lambda: [1, 2, 3])
    chunk: int = 8 << 20
    queue_cap: int = 20
    partitions: int = 8
    grad_buf: int = 16 << 20
    spill_buf: int = 8 << 20
    tol: float = 1e-4
    direct_io: bool = True


_INT_KEYS = {"vertices", "avg_degree", "dim", "seed", "chunk",
             "queue_cap", "partitions", "grad_buf", "spill_buf"}
_FLOAT_KEYS = {"budget_pct", "tol", "gin_eps"}
_LIST_INT_KEYS = {"seeds"}
_LIST_FLOAT_KEYS = {"budget_pcts"}
_LIST_STR_KEYS = {"evictions", "orderings", "layers_out"}


def parse_scenario(path) -> Scenario:
    sc = Scenario()
    for lineno, line in enumerate(
        Path(path).read_text().splitlines(), start=1
    ):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        if not hasattr(sc, key):
            raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                setattr(sc, key, int(value))
            elif key in _FLOAT_KEYS:
                setattr(sc, key, float(value))
            elif key in _LIST_INT_KEYS:
                setattr(sc, key, [int(x) for x in value.split(",") if x])
            elif key in _LIST_FLOAT_KEYS:
                setattr(sc, key, [float(x) for x in value.split(",") if x])
            elif key == "layers_out":
                setattr(sc, key, [int(x) for x in value.split(",") if x])
            elif key in _LIST_STR_KEYS:
                setattr(sc, key, [x.strip() for x in value.split(",") if x])
            elif key == "direct_io":
                setattr(sc, key, value not in ("0", "false", "no"))
            else:
                setattr(sc, key, value)
        except ValueError:
            raise FormatError(
                f"{path}:{lineno}: bad value {value!r} for {key}"
            ) from None
    if sc.sweep not in ("eviction", "ordering", "budget"):
        raise ConfigError(f"unknown sweep {sc.sweep!r}")
    return sc


BENCH_FIELDS = [
    "scenario", "sweep", "variant", "seed", "hot_slots", "messages",
    "evictions", "reloads", "unique_reloads", "mean_span", "p99_span",
    "mean_reload_pct", "bytes_read", "bytes_written", "wall_seconds",
    "max_abs_err",
]


def write_bench_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=BENCH_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in BENCH_FIELDS})


def _ensure_dataset(sc: Scenario, workdir: Path) -> Path:
    if sc.graph in ("uniform", "pa"):
        data = workdir / f"data_{sc.graph}"
        if not (data / "topology.bin").exists():
            generate_synthetic(
                sc.graph, sc.vertices, sc.avg_degree, sc.dim, sc.seed, data
            )
        return data
    path = Path(sc.graph)
    if not path.is_dir():
        raise ConfigError(f"dataset directory {path} not found")
    return path


def _slot_budget(pct: float, num_vertices: int) -> int:
    return max(1, int(round(num_vertices * pct / 100.0)))


def _metrics_row(sc: Scenario, variant: str, seed, slots: int,
                 report, max_abs_err: float) -> dict:
    row = {
        "scenario": sc.name,
        "sweep": sc.sweep,
        "variant": variant,
        "seed": seed,
        "hot_slots": slots,
        "max_abs_err": f"{max_abs_err:.3e}",
        "wall_seconds": f"{report.wall_seconds:.3f}",
    }
    for key in ("messages", "evictions", "reloads", "unique_reloads",
                "bytes_read", "bytes_written"):
        row[key] = report.total(key)
    row["mean_span"] = f"{np.mean([m.mean_span for m in report.layers]):.2f}"
    row["p99_span"] = f"{np.mean([m.p99_span for m in report.layers]):.2f}"
    row["mean_reload_pct"] = (
        f"{np.mean([m.mean_reload_pct for m in report.layers]):.3f}"
    )
    return row


def run_ablation(sc: Scenario, workdir, progress=None) -> list:
    """Execute one scenario sweep; returns one metrics dict per run."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    data_dir = _ensure_dataset(sc, workdir)
    meta = read_layer_meta(data_dir / "features")
    graph = read_csr(data_dir)

    kind = ModelKind.from_name(sc.model)
    weights = random_weights(
        kind, [meta.dim] + list(sc.layers_out), sc.seed,
        gin_epsilon=sc.gin_eps,
    )
    reference = oracle_inference(
        graph, load_layer_matrix(data_dir / "features"), weights
    )

    def say(msg):
        if progress:
            progress(msg)

    base_cfg = PipelineConfig(
        chunk_budget=sc.chunk,
        graduation_budget=sc.grad_buf,
        spill_buffer=sc.spill_buf,
        partitions=sc.partitions,
        queue_capacity=sc.queue_cap,
        direct_io=sc.direct_io,
    )
    slots = _slot_budget(sc.budget_pct, graph.num_vertices)
    rows = []

    def one_run(tag, run_dir, dataset, cfg, expect, seed) -> dict:
        if run_dir.exists():
            shutil.rmtree(run_dir)
        report = run_inference(dataset, weights, cfg, run_dir)
        got = load_layer_matrix(
            run_dir / f"layer_{len(weights.layers) - 1}"
        )
        err = float(np.abs(got - expect).max(initial=0.0))
        if err > sc.tol:
            raise ConfigError(
                f"{tag}: run disagrees with reference by {err:.3e}"
            )
        shutil.rmtree(run_dir, ignore_errors=True)
        return _metrics_row(sc, tag, seed, cfg.hot_slots, report, err)

    if sc.sweep == "eviction":
        for policy in sc.evictions:
            for seed in sc.seeds:
                say(f"eviction={policy} seed={seed}")
                cfg = PipelineConfig(
                    **{**base_cfg.__dict__, "eviction": policy,
                       "seed": seed, "hot_slots": slots}
                )
                rows.append(
                    one_run(policy, workdir / "run", data_dir, cfg,
                            reference, seed)
                )
    elif sc.sweep == "budget":
        for pct in sc.budget_pcts:
            say(f"budget={pct}%")
            s = _slot_budget(pct, graph.num_vertices)
            cfg = PipelineConfig(
                **{**base_cfg.__dict__, "hot_slots": s, "seed": sc.seed}
            )
            row = one_run(f"{pct:g}pct", workdir / "run", data_dir, cfg,
                          reference, sc.seed)
            rows.append(row)
    else:  # ordering
        for ordering in sc.orderings:
            say(f"ordering={ordering}")
            if ordering == "original":
                dataset, expect = data_dir, reference
                span_graph = graph
            else:
                variant = workdir / f"data_{ordering}"
                if variant.exists():
                    shutil.rmtree(variant)
                old_to_new = reorder_dataset(
                    data_dir, variant, ordering=ordering, seed=sc.seed
                )
                # reference rows live at old positions; permute to new
                expect = np.empty_like(reference)
                expect[old_to_new] = reference
                dataset = variant
                span_graph = read_csr(variant)
            cfg = PipelineConfig(
                **{**base_cfg.__dict__, "hot_slots": slots, "seed": sc.seed}
            )
            row = one_run(ordering, workdir / "run", dataset, cfg,
                          expect, sc.seed)
            span = compute_span(span_graph)
            row["mean_span"] = f"{span.mean_span:.2f}"
            row["p99_span"] = f"{span.p99_span:.2f}"
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Gather-pattern replay


def reverse_csr(graph: GraphCSR) -> tuple:
    """CSR of the transposed graph: per-destination source lists."""
    src, dst = graph.edge_arrays()
    order = np.lexsort((src, dst))
    rev_sources = src[order]
    offsets = np.zeros(graph.num_vertices + 1, dtype=np.int64)
    np.cumsum(
        np.bincount(dst, minlength=graph.num_vertices), out=offsets[1:]
    )
    return offsets, rev_sources


def simulate_gather_rows(graph: GraphCSR, cache_rows: int = 0,
                         block_rows: int = 1) -> int:
    """Rows a gather engine reads in one layer, with an LRU row cache.

    Walks destinations in id order and touches each in-neighbor's row,
    loading block_rows-sized blocks through a cache of cache_rows rows.
    cache_rows=0 means every touch is a load.
    """
    offsets, sources = reverse_csr(graph)
    cap_blocks = cache_rows // max(1, block_rows)
    cache: OrderedDict = OrderedDict()
    loads = 0
    blocks = sources // block_rows
    for v in range(graph.num_vertices):
        for b in blocks[offsets[v] : offsets[v + 1]].tolist():
            if cap_blocks and b in cache:
                cache.move_to_end(b)
                continue
            loads += 1
            if cap_blocks:
                cache[b] = None
                if len(cache) > cap_blocks:
                    cache.popitem(last=False)
    return loads * block_rows


def broadcast_rows(graph: GraphCSR) -> int:
    """Rows the broadcast engine reads in one layer: each exactly once."""
    return graph.num_vertices
