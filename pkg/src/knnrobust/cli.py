"""Command-line entry point wiring datasets, indexes, benchmarks and attacks.

Commands
--------
synth    generate a synthetic Gaussian-mixture dataset (.vds, optional query split)
truth    exact top-k ground truth for a query file (.gtk)
bench    recall/QPS/build-time comparison of index specs (CSV)
attack   train the adversarial agent per an experiment config (JSONL traces+report)
pca      TP/FP scatter in the first two principal components (CSV)
report   summarize an attack report file

Every command is deterministic given its inputs and --seed; timing fields
(qps, build_seconds) are the only outputs that vary between runs.

Exit codes: 0 success, 2 usage error, 3 missing input file, 4 malformed
file or config, 5 invalid parameters or failed invariants, 6 training
diverged, 1 unexpected internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import analysis, attack, bench
from .core import IndexSpec, build, parse_spec
from .errors import FormatError, TrainingDiverged, ValidationError
from .vecdata import (
    GroundTruth,
    VectorSet,
    exact_ground_truth,
    load_ground_truth,
    load_vectors,
    make_synthetic,
    save_ground_truth,
    save_vectors,
    split_train_query,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_MALFORMED = 4
EXIT_INVALID = 5
EXIT_DIVERGED = 6

_EXIT_CODES_HELP = (
    "exit codes: 0 success; 2 usage error; 3 missing input file; "
    "4 malformed file/config; 5 invalid parameters or failed invariants; "
    "6 training diverged; 1 internal error"
)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_synth(args: argparse.Namespace) -> int:
    total = args.n + (args.query_count or 0)
    vs = make_synthetic(total, args.d, args.clusters, args.spread, args.seed)
    if args.query_count:
        if not args.queries_out:
            raise ValidationError("--query-count requires --queries-out")
        base, queries = split_train_query(vs, args.query_count, args.seed)
        save_vectors(base, args.out, format=args.format)
        save_vectors(queries, args.queries_out, format=args.format)
        _log(f"wrote {base.n}x{base.d} to {args.out} and {queries.n} queries to {args.queries_out}")
    else:
        save_vectors(vs, args.out, format=args.format)
        _log(f"wrote {vs.n}x{vs.d} to {args.out}")
    return EXIT_OK


def cmd_truth(args: argparse.Namespace) -> int:
    base = load_vectors(args.base)
    queries = load_vectors(args.queries)
    gt = exact_ground_truth(base, queries, args.k, threads=args.threads)
    save_ground_truth(gt, args.out)
    _log(f"wrote top-{args.k} truth for {gt.n} queries to {args.out}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    base = load_vectors(args.base)
    queries = load_vectors(args.queries)
    truth = load_ground_truth(args.truth)
    specs = [parse_spec(s) for s in args.spec]
    runs = bench.run_bench(base, queries, truth, specs, args.k, epsilon=args.epsilon)
    rows = bench.pareto_table(runs)
    bench.write_bench_csv(rows, args.out)
    for row in rows:
        if row.error:
            _log(f"{row.label}: FAILED ({row.error})")
        else:
            flag = " pareto" if row.pareto else ""
            _log(f"{row.label}: recall={row.mean_recall:.4f} qps={row.qps:.1f} "
                 f"build={row.build_seconds:.3f}s{flag}")
    return EXIT_OK


def _agent_config_from(payload: dict, seed: int) -> attack.AgentConfig:
    known = {f.name for f in dataclass_fields(attack.AgentConfig)}
    unknown = set(payload) - known
    if unknown:
        raise FormatError(f"unknown agent config keys: {sorted(unknown)}")
    if "hidden" in payload:
        payload = dict(payload, hidden=tuple(payload["hidden"]))
    return attack.AgentConfig(**{**payload, "seed": seed})


def _load_attack_config(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if args.config:
        path = Path(args.config)
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(cfg, dict):
            raise FormatError(f"{path}: config must be a JSON object")
    # flag overrides
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.subject:
        cfg["subject"] = args.subject
    if args.k:
        cfg["k_values"] = [int(v) for v in args.k.split(",")]
    if args.out:
        cfg["out_dir"] = args.out
    agent = cfg.setdefault("agent", {})
    if args.jitter_size is not None:
        agent["jitter_size"] = args.jitter_size
    if args.max_steps is not None:
        agent["max_steps"] = args.max_steps
    if args.loss_mode is not None:
        agent["loss_mode"] = args.loss_mode
    if "seed" not in cfg:
        raise FormatError("config must provide a seed (reproducibility is mandatory)")
    for key in ("subject", "k_values", "out_dir", "dataset", "attack_points"):
        if key not in cfg:
            raise FormatError(f"config is missing required key {key!r}")
    return cfg


def _dataset_from_config(cfg: dict) -> VectorSet:
    ds = cfg["dataset"]
    if "path" in ds:
        return load_vectors(ds["path"])
    if "synthetic" in ds:
        s = ds["synthetic"]
        return make_synthetic(s["n"], s["d"], s["clusters"], s.get("spread", 1.0),
                              int(cfg["seed"]))
    raise FormatError("dataset must provide 'path' or 'synthetic'")


def _attack_points_from_config(cfg: dict, base: VectorSet) -> VectorSet:
    ap = cfg["attack_points"]
    if "path" in ap:
        points = load_vectors(ap["path"])
        if points.d != base.d:
            raise ValidationError("attack points dimension differs from dataset")
        return points
    if "count" in ap:
        count = int(ap["count"])
        if not 1 <= count <= base.n:
            raise ValidationError(f"attack point count must be in [1, {base.n}]")
        rng = np.random.default_rng(attack.derive_seed(int(cfg["seed"]), 0xA77AC))
        rows = np.sort(rng.choice(base.n, size=count, replace=False))
        return VectorSet(base.data[rows])
    raise FormatError("attack_points must provide 'path' or 'count'")


def cmd_attack(args: argparse.Namespace) -> int:
    cfg = _load_attack_config(args)
    base = _dataset_from_config(cfg)
    points = _attack_points_from_config(cfg, base)
    subject = build(parse_spec(cfg["subject"]), base)
    config = _agent_config_from(cfg.get("agent", {}), int(cfg["seed"]))
    k_values = [int(k) for k in cfg["k_values"]]
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    report = attack.robustness_report(points, base, subject, config, k_values,
                                      threads=args.threads, log=_log)
    attack.write_report_jsonl(report, out_dir / "report.jsonl")
    for (k, pi), trace in report.traces.items():
        attack.write_trace_jsonl(trace, config, out_dir / f"trace_k{k:03d}_p{pi:03d}.jsonl")
    _log(f"wrote report and {len(report.traces)} traces to {out_dir}")
    return EXIT_OK


def cmd_pca(args: argparse.Namespace) -> int:
    base = load_vectors(args.base)
    queries = load_vectors(args.queries)
    truth = load_ground_truth(args.truth)
    if truth.n != queries.n or truth.k < args.k:
        raise ValidationError("truth file does not match queries and k")
    subject = build(parse_spec(args.subject), base)
    from .core import QueryResult, label_fp

    ids, dists = subject.query_batch(queries.data, args.k)
    labels = [
        label_fp(QueryResult(ids[i], dists[i]), truth.dists[i, :args.k],
                 epsilon=args.epsilon, query_id=int(queries.ids[i]))
        for i in range(queries.n)
    ]
    model = analysis.fit_pca(queries, max(2, args.components))
    table = analysis.tp_fp_scatter(queries, labels, model)
    analysis.write_scatter_csv(table, args.out)
    n_fp = int(table.is_fp.sum())
    _log(f"{n_fp}/{table.n} queries are FPs under {subject.spec.label()}")
    if table.degenerate:
        _log("single-class labels: separability degenerate (1.0)")
    _log("separability: " + ", ".join(f"{k}={v:.4f}" for k, v in table.separability.items()))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.report)
    lines = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    aggregates = [r for r in lines if r.get("type") == "aggregate"]
    rows = ["k,mean_fp_count,mean_fp_fraction,mean_mu_distance,mean_variance,saturation_rate"]
    for agg in sorted(aggregates, key=lambda r: r["k"]):
        rows.append(
            f"{agg['k']},{agg['mean_fp_count']:.2f},{agg['mean_fp_fraction']:.4f},"
            f"{agg['mean_mu_distance']:.4f},{agg['mean_variance']:.4f},{agg['saturation_rate']:.2f}"
        )
    print("\n".join(rows))
    if args.out:
        Path(args.out).write_text("\n".join(rows) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="knnrobust",
        description="Robustness evaluation toolkit for approximate K-NN search.",
        epilog=_EXIT_CODES_HELP,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset", epilog=_EXIT_CODES_HELP)
    p.add_argument("--n", type=int, required=True, help="number of base points")
    p.add_argument("--d", type=int, required=True, help="dimensionality")
    p.add_argument("--clusters", type=int, required=True, help="number of Gaussian clusters")
    p.add_argument("--spread", type=float, default=1.0, help="cluster standard deviation")
    p.add_argument("--seed", type=int, required=True, help="root random seed")
    p.add_argument("--out", required=True, help="output vector file")
    p.add_argument("--query-count", type=int, default=0, help="also split off this many queries")
    p.add_argument("--queries-out", help="output file for the query split")
    p.add_argument("--format", choices=["binary", "csv"], default="binary")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("truth", help="exact ground truth", epilog=_EXIT_CODES_HELP)
    p.add_argument("--base", required=True, help="base vector file")
    p.add_argument("--queries", required=True, help="query vector file")
    p.add_argument("--k", type=int, required=True, help="neighbors per query")
    p.add_argument("--out", required=True, help="output ground-truth file")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_truth)

    p = sub.add_parser("bench", help="recall/QPS benchmark", epilog=_EXIT_CODES_HELP)
    p.add_argument("--base", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--spec", action="append", required=True,
                   help="index spec, e.g. kdforest:num_trees=4,max_checks=100 (repeatable)")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--epsilon", type=float, default=0.0, help="recall relaxation")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("attack", help="adversarial robustness experiment", epilog=_EXIT_CODES_HELP)
    p.add_argument("--config", help="experiment config JSON (see module docstring)")
    p.add_argument("--subject", help="index spec override")
    p.add_argument("--k", help="comma-separated k values override")
    p.add_argument("--jitter-size", type=int, help="samples per step (default 1000)")
    p.add_argument("--max-steps", type=int, help="steps per episode")
    p.add_argument("--loss-mode", choices=list(attack.LOSS_MODES))
    p.add_argument("--seed", type=int, help="root random seed override")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("pca", help="TP/FP principal-component scatter", epilog=_EXIT_CODES_HELP)
    p.add_argument("--base", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--subject", required=True, help="index spec to label queries with")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--components", type=int, default=2)
    p.add_argument("--out", required=True, help="output scatter CSV")
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("report", help="summarize an attack report", epilog=_EXIT_CODES_HELP)
    p.add_argument("--report", required=True, help="report.jsonl from the attack command")
    p.add_argument("--out", help="optional summary CSV")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        _log(f"error: missing file: {exc.filename or exc}")
        return EXIT_MISSING_FILE
    except FormatError as exc:
        _log(f"error: {exc}")
        return EXIT_MALFORMED
    except ValidationError as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID
    except TrainingDiverged as exc:
        _log(f"error: training diverged: {exc}")
        return EXIT_DIVERGED
    except Exception as exc:  # pragma: no cover - defensive
        _log(f"internal error: {exc!r}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
