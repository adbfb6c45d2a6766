"""Command-line entry points.

    oocgnn synth        build a synthetic dataset directory
    oocgnn ingest       pack an edge-list file into the binary layout
    oocgnn gen-weights  write a random model weights file
    oocgnn infer        out-of-core inference
    oocgnn oracle       in-memory reference inference
    oocgnn compare      diff two output directories
    oocgnn reorder      relabel a dataset with the greedy ordering
    oocgnn bench        run an ablation scenario to a CSV
"""

import argparse
import logging
import sys

from .errors import ConfigError, EngineError
from .storage import ModelKind


def _add_infer_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", required=True, help="dataset directory")
    p.add_argument("--weights", required=True, help="weights file")
    p.add_argument("--model", required=True, choices=["gcn", "sage", "gin"])
    p.add_argument("--hot-mem", type=int, default=64 << 20,
                   help="hot store budget in bytes")
    p.add_argument("--chunk", type=int, default=8 << 20,
                   help="chunk payload budget in bytes")
    p.add_argument("--grad-buf", type=int, default=16 << 20,
                   help="graduation buffer bytes (split across two)")
    p.add_argument("--spill-buf", type=int, default=8 << 20,
                   help="writer buffer bytes across all partitions")
    p.add_argument("--partitions", type=int, default=8)
    p.add_argument("--queue-cap", type=int, default=20)
    p.add_argument("--eviction", default="minpend",
                   choices=["minpend", "lru", "rnd"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--metrics", default=None, help="metrics CSV path")
    p.add_argument("--no-direct-io", action="store_true")
    p.add_argument("--discard-intermediate", action="store_true")
    p.add_argument("--hot-slots", type=int, default=None,
                   help="override the budget with an exact slot count")


def _cmd_synth(args) -> int:
    from .storage import generate_synthetic

    summary = generate_synthetic(
        args.kind, args.vertices, args.avg_degree, args.dim,
        args.seed, args.out, dtype=args.dtype,
    )
    print(
        f"wrote {args.out}: |V|={summary.num_vertices} "
        f"|E|={summary.num_edges} max_in={summary.max_in_degree} "
        f"dim={summary.feature_dim}"
    )
    return 0


def _cmd_ingest(args) -> int:
    from .storage import ingest_edge_list

    graph = ingest_edge_list(args.edges, args.vertices, args.out)
    print(f"wrote {args.out}: |V|={graph.num_vertices} |E|={graph.num_edges}")
    return 0


def _cmd_gen_weights(args) -> int:
    from .storage import random_weights, write_weights

    dims = [int(x) for x in args.dims.split(",") if x]
    model = random_weights(
        ModelKind.from_name(args.model), dims, args.seed,
        gin_epsilon=args.gin_eps,
    )
    write_weights(args.out, model)
    print(f"wrote {args.out}: {args.model} dims={dims}")
    return 0


def _check_model_flag(args) -> None:
    from .storage import read_weights

    weights = read_weights(args.weights)
    if weights.kind != ModelKind.from_name(args.model):
        raise ConfigError(
            f"--model {args.model} but weights file holds "
            f"{weights.kind.cli_name}"
        )


def _cmd_infer(args) -> int:
    from .runtime import PipelineConfig, run_inference

    _check_model_flag(args)
    config = PipelineConfig(
        hot_budget=args.hot_mem,
        chunk_budget=args.chunk,
        graduation_budget=args.grad_buf,
        spill_buffer=args.spill_buf,
        partitions=args.partitions,
        queue_capacity=args.queue_cap,
        eviction=args.eviction,
        seed=args.seed,
        direct_io=not args.no_direct_io,
        discard_intermediate=args.discard_intermediate,
        hot_slots=args.hot_slots,
    )
    report = run_inference(
        args.graph, args.weights, config, args.out,
        metrics_path=args.metrics,
    )
    for m in report.layers:
        print(
            f"layer {m.layer}: messages={m.messages} "
            f"evictions={m.evictions} reloads={m.reloads} "
            f"wall={m.wall_seconds:.2f}s"
        )
    print(f"done in {report.wall_seconds:.2f}s -> {report.out_dir}")
    return 0


def _cmd_oracle(args) -> int:
    from .runtime import run_oracle

    _check_model_flag(args)
    run_oracle(args.graph, args.weights, args.out)
    print(f"reference output -> {args.out}")
    return 0


def _cmd_compare(args) -> int:
    from .runtime import compare_outputs

    report = compare_outputs(args.a, args.b, args.tol)
    print(
        f"rows={report.rows} max_abs={report.max_abs_err:.3e} "
        f"mean_abs={report.mean_abs_err:.3e} "
        f"argmax_mismatches={report.argmax_mismatches}"
    )
    if not report.ok:
        print(f"FAIL: tolerance {report.tolerance:g}")
        return 1
    print("OK")
    return 0


def _cmd_reorder(args) -> int:
    from .reorder import reorder_dataset

    reorder_dataset(
        args.graph, args.out, ordering=args.ordering,
        partitions=args.partitions, seed=args.seed,
    )
    print(f"relabeled dataset -> {args.out}")
    return 0


def _cmd_bench(args) -> int:
    from .bench import parse_scenario, run_ablation, write_bench_csv

    sc = parse_scenario(args.scenario)
    rows = run_ablation(
        sc, args.workdir, progress=lambda msg: print(f"[{sc.name}] {msg}")
    )
    write_bench_csv(args.out, rows)
    print(f"{len(rows)} runs -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="oocgnn",
        description="Out-of-core GNN inference via sequential broadcast",
    )
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--kind", required=True, choices=["uniform", "pa"])
    p.add_argument("--vertices", type=int, required=True)
    p.add_argument("--avg-degree", type=int, default=10)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", default="f32", choices=["f32", "f16"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="pack an edge list")
    p.add_argument("--edges", required=True, help="text file, 'src dst' lines")
    p.add_argument("--vertices", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("gen-weights", help="write random model weights")
    p.add_argument("--model", required=True, choices=["gcn", "sage", "gin"])
    p.add_argument("--dims", required=True,
                   help="comma list: input,hidden...,output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gin-eps", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_weights)

    p = sub.add_parser("infer", help="out-of-core inference")
    _add_infer_flags(p)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("oracle", help="in-memory reference inference")
    p.add_argument("--graph", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--model", required=True, choices=["gcn", "sage", "gin"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("compare", help="compare two output directories")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("reorder", help="relabel a dataset")
    p.add_argument("--graph", required=True)
    p.add_argument("--partitions", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--ordering", default="greedy",
                   choices=["greedy", "random", "original"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_reorder)

    p = sub.add_parser("bench", help="run an ablation scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="results CSV")
    p.add_argument("--workdir", default="bench_work")
    p.set_defaults(func=_cmd_bench)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except EngineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
