"""Command-line entry point: ``run``, ``pe-inspect`` and ``generate-data``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, config_to_text, parse_config
from .experiment import ExperimentAborted, RunReport, format_table, run_experiment, save_pe_cache
from .graph import GraphFormatError, SbmParams, generate_regression_set, generate_sbm, load_json, save_json
from .positional import lap_pe

log = logging.getLogger("graphtransformer")


def write_report(report: RunReport, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path, txt_path = out / "report.json", out / "report.txt"
    json_path.write_text(report.to_json())
    txt_path.write_text(format_table([report]))
    return json_path, txt_path


def cmd_run(args) -> int:
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    try:
        cfg = parse_config(args.config, {k.strip(): v for k, v in overrides.items()})
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(config_to_text(cfg))

    def done(res):
        log.info("seed %d finished: %d epochs, test=%s train=%.4f",
                 res.seed, res.num_epochs, res.test_metric, res.train_metric)

    try:
        report = run_experiment(cfg, jobs=args.jobs, on_seed_done=done)
    except ExperimentAborted as exc:
        paths = write_report(exc.report, out_dir)
        print(f"error: {exc}; partial report written to {paths[0]}", file=sys.stderr)
        return 130 if isinstance(exc.__cause__, KeyboardInterrupt) else 1
    paths = write_report(report, out_dir)
    print(format_table([report]), end="")
    print(f"report written to {paths[0]} and {paths[1]}")
    return 0


def cmd_pe_inspect(args) -> int:
    try:
        g = load_json(args.graph)
        pe = lap_pe(g, args.k)
    except (GraphFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print("eigenvalues: " + " ".join(f"{v:.10g}" for v in pe.eigenvalues))
    print("node," + ",".join(f"pe{c}" for c in range(pe.k)))
    for i, row in enumerate(pe.encodings):
        print(f"{i}," + ",".join(f"{v:.10g}" for v in np.where(np.abs(row) < 1e-15, 0.0, row)))
    return 0


def cmd_generate_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "regression":
        graphs = generate_regression_set(args.num_graphs, (args.min_nodes, args.max_nodes), args.seed)
    else:
        sizes = tuple(int(v) for v in args.block_sizes.split(","))
        params = SbmParams(len(sizes), sizes, args.p_intra, args.q_inter, args.feature_noise)
        seeds = np.random.SeedSequence(args.seed).generate_state(args.num_graphs)
        graphs = [generate_sbm(params, int(s)) for s in seeds]
    width = len(str(max(len(graphs) - 1, 0)))
    for i, g in enumerate(graphs):
        path = out / f"graph_{i:0{width}d}.json"
        save_json(g, path)
        if args.pe_k:
            save_pe_cache(path, lap_pe(g, args.pe_k))
    print(f"wrote {len(graphs)} graphs to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphtransformer", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate an experiment config over its seeds")
    run.add_argument("--config", required=True)
    run.add_argument("--jobs", type=int, default=1, help="seeds trained in parallel")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    run.set_defaults(func=cmd_run)

    pe = sub.add_parser("pe-inspect", help="print Laplacian eigenvalues and positional encodings")
    pe.add_argument("graph")
    pe.add_argument("--k", type=int, default=4)
    pe.set_defaults(func=cmd_pe_inspect)

    gen = sub.add_parser("generate-data", help="write a synthetic dataset as JSON graphs")
    gen.add_argument("--kind", choices=("sbm", "regression"), required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--num-graphs", type=int, default=100)
    gen.add_argument("--min-nodes", type=int, default=6)
    gen.add_argument("--max-nodes", type=int, default=12)
    gen.add_argument("--block-sizes", default="10,10")
    gen.add_argument("--p-intra", type=float, default=0.9)
    gen.add_argument("--q-inter", type=float, default=0.1)
    gen.add_argument("--feature-noise", type=float, default=0.1)
    gen.add_argument("--pe-k", type=int, default=0, help="also write a PE cache with this many columns")
    gen.set_defaults(func=cmd_generate_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
