"""Command line entry point.

    iuq run <experiment> [--config C] [--data-root D] [--out O] [--jobs N] [--seeds 0 1 2] [--epochs E] [--resolution R]
    iuq train --arch A --split K --seed S [--epochs E] [--data-root D] [--out-dir O]
    iuq report <out-dir>
    iuq figures <out-dir>

Exit codes: 0 success, 1 configuration error, 2 some jobs failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .experiments import (
    ALL_ARCHS,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_PARTIAL,
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    Job,
    _run_job_safe,
    emit_figures,
    summarize,
    run_experiment,
)
from .splits import SPLIT_KINDS


def _config(args: argparse.Namespace, experiment: str) -> ExperimentConfig:
    d: dict = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    d["experiment"] = experiment
    if args.data_root:
        d["sintel_root"] = args.data_root
        d.pop("synthetic", None)
    elif "sintel_root" not in d and "synthetic" not in d:
        d["synthetic"] = {}
    if args.out:
        d["out_dir"] = args.out
    if getattr(args, "seeds", None):
        d["seeds"] = args.seeds
    if getattr(args, "epochs", None):
        d["epochs"] = args.epochs
    if getattr(args, "resolution", None):
        d["resolution"] = args.resolution
    return ExperimentConfig.from_dict(d)


def _print_tables(out_dir: Path) -> None:
    for f in sorted((out_dir / "tables").glob("*.txt")):
        print(f"== {f.stem}")
        print(f.read_text())


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args, args.experiment)
    summary = run_experiment(cfg, jobs=args.jobs)
    _print_tables(Path(cfg.out_dir))
    for run_id, err in summary["failures"].items():
        print(f"FAILED {run_id}: {err}", file=sys.stderr)
    return EXIT_PARTIAL if summary["failures"] else EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    args.experiment = "main_table"
    args.out = args.out_dir
    args.seeds = [args.seed]
    cfg = _config(args, "main_table")
    cfg.archs, cfg.splits = [args.arch], [args.split]
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    (Path(cfg.out_dir) / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    job, err = _run_job_safe(cfg.to_dict(), Job(args.arch, args.split, args.seed))
    if err:
        print(f"FAILED {job.run_id}: {err}", file=sys.stderr)
        return EXIT_PARTIAL
    print((Path(cfg.out_dir) / "results" / f"{job.run_id}.json").read_text())
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    summarize(args.out_dir)
    _print_tables(Path(args.out_dir))
    return EXIT_OK


def cmd_figures(args: argparse.Namespace) -> int:
    manifest = emit_figures(args.out_dir)
    for w in manifest["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{len(manifest['files'])} figure files written to {Path(args.out_dir) / 'figures'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iuq", description="Intrinsic decomposition with uncertainty: experiment runner")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment grid")
    r.add_argument("experiment", choices=EXPERIMENTS)
    r.add_argument("--config")
    r.add_argument("--data-root", help="Sintel-layout root; synthetic data is used when omitted")
    r.add_argument("--out")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--seeds", type=int, nargs="+")
    r.add_argument("--epochs", type=int)
    r.add_argument("--resolution", type=int, help="working resolution for --data-root inputs (default 256)")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("train", help="train and evaluate a single job")
    t.add_argument("--arch", choices=ALL_ARCHS, required=True)
    t.add_argument("--split", choices=SPLIT_KINDS, default="scene")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int)
    t.add_argument("--config")
    t.add_argument("--data-root")
    t.add_argument("--out-dir", default="out")
    t.set_defaults(func=cmd_train)

    for name, fn, help_ in (("report", cmd_report, "rebuild tables"), ("figures", cmd_figures, "emit figures")):
        q = sub.add_parser(name, help=help_)
        q.add_argument("out_dir")
        q.set_defaults(func=fn)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
