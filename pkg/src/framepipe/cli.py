"""Command-line entry point: run, tune, verify, report.

Every run writes an artifact directory containing the fully resolved
configuration (config.resolved.json), the frame trace (trace.jsonl), the
aggregated metrics (metrics.json), a plain-text summary, the episode CSV
when an environment was driven, and a manifest of inputs. Re-running from
the embedded config reproduces the virtual-time artifacts byte for byte;
only manifest.json carries volatile fields.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 runtime error, 4 no feasible tuning configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from pathlib import Path

from . import __version__
from .config import (build_env, build_pipeline_config, build_policy,
                     build_tune_request, parse_override, resolve_config,
                     run_experiment)
from .errors import ConfigInvalid, FramepipeError, NoFeasibleConfig
from .metrics import compare, read_metrics, write_trace_jsonl
from .tuner import finetune_alpha, grid_search
from .verify import run_all

OUTPUT_ROOT_ENV = "FRAMEPIPE_OUTPUT_ROOT"


def _output_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / default_name


def _load_config(args) -> dict:
    file_data = None
    if args.config:
        with open(args.config) as fh:
            file_data = json.load(fh)
    overrides: dict = {}
    for expr in args.set or []:
        layer = parse_override(expr)
        cursor = overrides
        while True:
            key, value = next(iter(layer.items()))
            if not isinstance(value, dict):
                cursor[key] = value
                break
            cursor = cursor.setdefault(key, {})
            layer = value
    return resolve_config(file_data, overrides)


def _write_manifest(out: Path, cfg: dict, extra: dict | None = None) -> None:
    manifest = {
        "tool": "framepipe",
        "version": __version__,
        "python": platform.python_version(),
        "created_unix": time.time(),
        "inputs": {"config": "config.resolved.json", "seed": cfg["run"]["seed"]},
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _dump_config(out: Path, cfg: dict) -> None:
    (out / "config.resolved.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))


def cmd_run(args) -> int:
    try:
        cfg = _load_config(args)
    except (ConfigInvalid, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = _output_dir(args, f"run-{cfg['run']['mode']}")
    try:
        result, metrics, env = run_experiment(cfg)
    except FramepipeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    out.mkdir(parents=True, exist_ok=True)
    _dump_config(out, cfg)
    write_trace_jsonl(result.trace, out / "trace.jsonl")
    (out / "metrics.json").write_text(metrics.to_json())
    if env is not None:
        env.export_csv(out / "episode.csv")
    summary = [
        f"mode={metrics.mode} engine={metrics.engine} frames={metrics.frames}",
        f"emissions={metrics.emission_count} throughput={metrics.throughput!r}"
        f" mean_interval={metrics.mean_interval!r}",
        f"jitter={metrics.jitter!r} ({metrics.jitter_definition})",
        f"jct_mean={metrics.jct_mean!r}",
        f"fill_frames={metrics.pipeline_fill_frames}",
        f"staleness mean={metrics.staleness_mean!r} max={metrics.staleness_max!r}",
        f"mean_error={metrics.mean_error!r} success={metrics.success}",
    ]
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    _write_manifest(out, cfg)
    print("\n".join(summary))
    print(f"artifacts: {out}")
    return 0


def cmd_tune(args) -> int:
    try:
        cfg = _load_config(args)
    except (ConfigInvalid, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = _output_dir(args, "tune")
    policy = build_policy(cfg)
    request = build_tune_request(cfg)
    base = build_pipeline_config(cfg)

    def env_factory(seed: int):
        return build_env(cfg, seed=seed)

    try:
        result = grid_search(policy, env_factory, request, base_config=base)
    except NoFeasibleConfig as exc:
        out.mkdir(parents=True, exist_ok=True)
        _dump_config(out, cfg)
        if exc.result is not None:
            (out / "tune_result.json").write_text(
                json.dumps(exc.result.to_dict(), indent=2, sort_keys=True))
        print(f"no feasible configuration: {exc}", file=sys.stderr)
        return 4
    chosen = result.chosen
    refined = finetune_alpha(policy, env_factory, chosen, request, base_config=base)
    out.mkdir(parents=True, exist_ok=True)
    _dump_config(out, cfg)
    payload = {"grid": result.to_dict(), "alpha": refined.to_dict()}
    (out / "tune_result.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    _write_manifest(out, cfg)

    lines = [f"{'pp_p':>4} {'pp_g':>4} {'L':>2} {'throughput':>12} {'feasible':>8} "
             f"{'mean_error':>11}"]
    for point in result.evaluated:
        err = "-" if point.mean_error is None else f"{point.mean_error:.4f}"
        mark = " <-- meets requirement" if point.feasible else ""
        lines.append(f"{point.pp_perception:>4} {point.pp_generation:>4} "
                     f"{point.l_total:>2} {point.throughput:>12.6g} "
                     f"{str(point.feasible):>8} {err:>11}{mark}")
    final = refined.chosen if refined.alpha_applied else chosen
    lines.append(f"chosen: pp=({final.pp_perception},{final.pp_generation}) "
                 f"alpha={final.alpha} throughput={final.throughput:.6g} "
                 f"mean_error={final.mean_error}")
    lines.append(f"alpha fine-tune: {refined.alpha_note or 'applied'}")
    table = "\n".join(lines)
    (out / "tune_summary.txt").write_text(table + "\n")
    print(table)
    print(f"artifacts: {out}")
    return 0


def cmd_verify(_args) -> int:
    results = run_all()
    width = max(len(r.name) for r in results)
    failed = [r for r in results if not r.ok]
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{r.name:<{width}}  {status}  {r.detail}")
    if failed:
        print(f"verification failed: {', '.join(r.name for r in failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    runs = []
    names = []
    for path in args.metrics:
        p = Path(path)
        try:
            runs.append(read_metrics(p))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            print(f"cannot read metrics file {path}: {exc}", file=sys.stderr)
            return 2
        names.append(p.parent.name or p.stem)
    try:
        table = compare(runs, names=names, baseline=args.baseline)
    except FramepipeError as exc:
        print(f"comparison error: {exc}", file=sys.stderr)
        return 2
    out = _output_dir(args, "report")
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(table.to_json())
    (out / "comparison.csv").write_text(table.to_csv())
    text = table.to_text()
    (out / "comparison.txt").write_text(text + "\n")
    print(text)
    print(f"artifacts: {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="framepipe",
        description="Frame-based pipeline execution harness for perception/generation policies")
    parser.add_argument("--version", action="version", version=f"framepipe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one configured mode and write artifacts")
    run_p.add_argument("--config", help="path to a JSON experiment configuration")
    run_p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a configuration value (repeatable)")
    run_p.add_argument("--out", help="artifact directory (default: "
                                     f"${OUTPUT_ROOT_ENV}/run-<mode>)")
    run_p.set_defaults(func=cmd_run)

    tune_p = sub.add_parser("tune", help="grid-search pipeline degrees, then fine-tune alpha")
    tune_p.add_argument("--config", help="path to a JSON experiment configuration")
    tune_p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    tune_p.add_argument("--out", help="artifact directory")
    tune_p.set_defaults(func=cmd_tune)

    verify_p = sub.add_parser("verify", help="run the embedded property suite")
    verify_p.set_defaults(func=cmd_verify)

    report_p = sub.add_parser("report", help="compare saved metrics files against a baseline")
    report_p.add_argument("metrics", nargs="+", help="metrics.json paths")
    report_p.add_argument("--baseline", type=int, default=0,
                          help="index of the baseline run (default 0)")
    report_p.add_argument("--out", help="artifact directory")
    report_p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
