"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input error (or every case
failed), 2 some cases failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from partnermas.bench import (
    ConfigError,
    ExperimentConfig,
    ProviderBinding,
    build_gateway,
    dumps_json,
    pareto_front,
    read_runlog,
    run_bench,
    write_outputs,
)
from partnermas.cluster import cluster_profiles, diversity_report, profile_vectors, sweep_k
from partnermas.config import build_config, dump_config
from partnermas.domain import InvalidPoolError
from partnermas.gateway import Gateway, GatewayError, HTTPEmbedder, RecordingProvider, dump_fixtures
from partnermas.ingest import CaseFileError, LoadReport, SyntheticSpec, generate_synthetic, load_cases, save_cases
from partnermas.oracle import RuleProvider

log = logging.getLogger("partnermas")


class UsageError(Exception):
    pass


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (dotted path); repeatable")
    p.add_argument("--seed", type=int, help="candidate-row shuffle seed")
    p.add_argument("--concurrency", type=int, help="maximum cases in flight")
    p.add_argument("--provider-fixtures", help="fixture file for scripted providers")
    p.add_argument("--variant", choices=["generic", "business"])
    p.add_argument("--system", choices=["partner-mas", "single", "debate"])
    p.add_argument("--supervisor-mode", choices=["deterministic", "importance", "weight", "majority"])
    p.add_argument("--runs-k", type=int, help="single-agent runs before self-reflection")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partnermas", description="Co-investor shortlisting with agent teams.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one case")
    _experiment_flags(run)
    run.add_argument("--cases", required=True, help="case file (.csv or .jsonl)")
    run.add_argument("--case-id", help="case to run (required when the file holds several)")
    run.add_argument("--out", default="out")

    bench = sub.add_parser("bench", help="run every case and score the system")
    _experiment_flags(bench)
    bench.add_argument("--cases", required=True, help="case file (.csv or .jsonl)")
    bench.add_argument("--out", default="out")

    cl = sub.add_parser("cluster", help="cluster specialist profiles from run logs")
    cl.add_argument("runlogs", nargs="+", help="runlog.jsonl files")
    cl.add_argument("--k", type=int, default=8)
    cl.add_argument("--seed", type=int, default=0)
    cl.add_argument("--sweep", help="comma-separated k values for a silhouette sweep")
    cl.add_argument("--embedder", help="NAME:MODEL of an HTTP embeddings endpoint (default: offline hashing)")
    cl.add_argument("--out", default="out")

    rep = sub.add_parser("report", help="summarise bench reports and their cost/accuracy frontier")
    rep.add_argument("reports", nargs="+", help="bench_report.json files")
    rep.add_argument("--out", help="directory for pareto.json")

    gen = sub.add_parser("gen-fixtures", help="write a synthetic case file and matching scripted fixtures")
    _experiment_flags(gen)
    gen.add_argument("--cases", type=int, default=10, help="number of cases to generate")
    gen.add_argument("--planted-feature", default="pair_tie_strength")
    gen.add_argument("--specialists", type=int, default=3)
    gen.add_argument("--out", default="fixtures")
    return parser


def _config(args: argparse.Namespace) -> ExperimentConfig:
    flags = {
        "shuffle_seed": args.seed,
        "concurrency": args.concurrency,
        "variant": args.variant,
        "system": args.system,
        "supervisor_mode": args.supervisor_mode,
        "runs_k": args.runs_k,
    }
    return build_config(args.config, args.overrides, flags)


def _load(path: str) -> list:
    report = LoadReport()
    pools = load_cases(path, report)
    for cid, why in report.skipped:
        log.warning("skipped case %s: %s", cid, why)
    if not pools:
        raise UsageError(f"{path}: no usable cases")
    return pools


def _bench(args: argparse.Namespace, pools: list) -> int:
    cfg = _config(args)
    gateway = build_gateway(cfg, fixtures_override=args.provider_fixtures)
    report = run_bench(pools, cfg, gateway)
    paths = write_outputs(report, args.out)
    print(report.summary_line())
    for r in report.failed:
        print(f"  failed {r.case_id}: {r.failure}")
    print(f"  wrote {', '.join(str(p) for p in paths.values())}")
    return report.exit_code


def cmd_run(args: argparse.Namespace) -> int:
    pools = _load(args.cases)
    if args.case_id is None:
        if len(pools) > 1:
            raise UsageError(f"{args.cases} holds {len(pools)} cases; choose one with --case-id")
        chosen = pools
    else:
        chosen = [p for p in pools if p.case_id == args.case_id]
        if not chosen:
            raise UsageError(f"case {args.case_id!r} not found in {args.cases}")
    return _bench(args, chosen)


def cmd_bench(args: argparse.Namespace) -> int:
    return _bench(args, _load(args.cases))


def cmd_cluster(args: argparse.Namespace) -> int:
    embedder = None
    if args.embedder:
        name, _, model = args.embedder.partition(":")
        if not model:
            raise UsageError("--embedder must look like NAME:MODEL")
        embedder = HTTPEmbedder(name, model)
    vectors = []
    records_by_run = []
    for i, path in enumerate(args.runlogs):
        run = Path(path).parent.name or f"run{i}"
        run = f"{i}:{run}"
        records = read_runlog(path)
        records_by_run.append((run, records))
        vectors += profile_vectors(records, embedder, run)
    if len(vectors) < args.k:
        raise UsageError(f"only {len(vectors)} specialist profiles found; need at least k={args.k}")
    model = cluster_profiles(vectors, args.k, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "cluster_model.json")
    rows = [dict(run=run, **row) for run, recs in records_by_run for row in diversity_report(recs, model, run)]
    with open(out / "diversity.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, ["run", "case_id", "specialists", "clusters", "hhi", "normalized_hhi", "match_rate"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"{len(vectors)} profiles, k={args.k}, silhouette {model.silhouette:.3f}"
          + (" (degenerate)" if model.degenerate else ""))
    if args.sweep:
        ks = [int(x) for x in args.sweep.split(",") if x.strip()]
        sweep = sweep_k(vectors, ks, args.seed)
        (out / "silhouette_sweep.json").write_text(dumps_json({str(k): s for k, s in sweep.items()}), encoding="utf-8")
        for k, s in sweep.items():
            print(f"  k={k}: silhouette {s:.3f}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    points: dict[str, tuple[float, float]] = {}
    for path in args.reports:
        try:
            body = json.loads(Path(path).read_text(encoding="utf-8"))["body"]
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"{path}: not a bench report ({exc})") from None
        label = f"{body['system']}[{body['config_hash']}]"
        if label in points or any(lbl.startswith(label + " ") for lbl in points):
            label = f"{label} {path}"  # same config run twice: tell them apart by file
        mean = body["mean_match_rate"]
        ci = body["ci95_half_width"]
        tokens = body["tokens"]["total_tokens"]
        print(f"{label}: {body['cases_scored']}/{body['cases_total']} scored, "
              f"mean {'n/a' if mean is None else f'{mean:.2f}%'}"
              f"{'' if ci is None else f' ± {ci:.2f}'}, {tokens} tokens"
              + (" (mixed providers)" if body.get("mixed_providers") else ""))
        if mean is not None:
            points[label] = (float(tokens), float(mean))
    front = pareto_front(points)
    print("pareto front: " + (", ".join(front) or "(empty)"))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {"points": {k: {"total_tokens": t, "match_rate": r} for k, (t, r) in points.items()},
                   "front": front}
        (out / "pareto.json").write_text(dumps_json(payload), encoding="utf-8")
    return 0


def cmd_gen_fixtures(args: argparse.Namespace) -> int:
    if args.cases < 1:
        raise UsageError("--cases must be positive")
    pools = generate_synthetic(
        SyntheticSpec(num_cases=args.cases, seed=args.seed or 0, planted_feature=args.planted_feature)
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_cases(pools, out / "cases.csv")

    args.seed = None  # the generator seed is not a shuffle seed
    cfg = _config(args)
    recorder = RecordingProvider(RuleProvider(args.planted_feature, args.specialists))
    report = run_bench(pools, cfg, Gateway(recorder))
    dump_fixtures(recorder.recorded, out / "fixtures.json")

    replay = dataclasses.replace(cfg, providers={"default": ProviderBinding("scripted", fixtures="fixtures.json")})
    (out / "config.yaml").write_text(dump_config(replay), encoding="utf-8")
    print(f"wrote {len(pools)} cases and {len(recorder.recorded)} fixtures to {out}; oracle {report.summary_line()}")
    return 0


COMMANDS = {
    "run": cmd_run,
    "bench": cmd_bench,
    "cluster": cmd_cluster,
    "report": cmd_report,
    "gen-fixtures": cmd_gen_fixtures,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error at '{exc.key}': {exc.message}", file=sys.stderr)
    except (UsageError, CaseFileError, InvalidPoolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except GatewayError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
