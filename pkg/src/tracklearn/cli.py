"""Command-line entry point: ``tracklearn <subcommand>``.

Exit codes: 0 ok, 2 evaluation non-completion, 3 load error, 4 config error.
"""

from __future__ import annotations

import argparse
import json
import platform
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as config_mod
from .errors import ConfigError, LoadError
from .geometry import SourceTag
from .harness import (EXIT_LOAD_ERROR, EXIT_OK, EvalGrid, EvalReport, format_cell, gap_ratio,
                      load_metrics, render_report, run_grid, write_gap_table)
from .pipeline.paths import MANIFEST_NAME, generate_virtual_paths, load_scenarios, write_scenarios
from .pipeline.training import Trainer, finalize
from .vehicle import ModelTier

EXIT_CONFIG_ERROR = 4


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}", "--set")
        try:
            out[key] = json.loads(raw)
        except ValueError:
            out[key] = raw
    return out


def _git_revision() -> str:
    try:
        res = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return res.stdout.strip() if res.returncode == 0 else "unknown"


def write_stamp(out_dir: Path, cfg, command: str) -> None:
    """Record the resolved config and what produced it."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved").write_text(config_mod.dumps(cfg), encoding="utf-8")
    stamp = {"command": command, "seed": cfg.seed, "version": __version__, "git": _git_revision(),
             "python": platform.python_version(), "numpy": np.__version__}
    (out_dir / "stamp.json").write_text(json.dumps(stamp, indent=2) + "\n", encoding="utf-8")


def _resolve(args, extra: dict) -> config_mod.RunConfig:
    overrides = _parse_set(args.set)
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    overrides.update({k: v for k, v in extra.items() if v is not None})
    cfg = config_mod.load(args.config, overrides)
    if args.seed is not None:
        # an explicit flag beats both the file and the environment
        cfg = config_mod.from_dict({**config_mod.to_dict(cfg), "seed": args.seed})
    return cfg


def cmd_generate_paths(args) -> int:
    cfg = _resolve(args, {})
    if args.dry_run:
        print("configuration valid")
        return EXIT_OK
    out = Path(cfg.output_dir)
    scenarios = generate_virtual_paths(cfg.paths, np.random.default_rng(cfg.seed))
    try:
        manifest = write_scenarios(scenarios, out, {"seed": cfg.seed})
    except OSError as exc:
        raise LoadError(f"cannot write paths under {out}: {exc}") from exc
    write_stamp(out, cfg, "generate-paths")
    counts = {}
    for s in scenarios:
        key = f"{s.tag.value}/{s.split}"
        counts[key] = counts.get(key, 0) + 1
    print(f"wrote {len(scenarios)} paths to {manifest} ({', '.join(f'{k}: {v}' for k, v in sorted(counts.items()))})")
    return EXIT_OK


def _print_eval(rec) -> None:
    print(f"step {rec.step:>7d}  phase {rec.phase}  eval reward {rec.mean_eval_reward:.4f}  "
          f"alpha {rec.alpha:.4f}  lr {rec.lr:.2e}  {rec.steps_per_sec:.0f} steps/s", flush=True)


def cmd_train(args) -> int:
    cfg = _resolve(args, {"train.variant": args.variant, "train.data": args.data})
    tcfg = config_mod.to_train_config(cfg)
    if not cfg.train.data and not args.resume:
        raise ConfigError("no path manifest given (use --data)", "train.data")
    if args.dry_run:
        print(f"configuration valid: {tcfg.variant}, {len(tcfg.phases())} phase(s)")
        return EXIT_OK
    out = Path(cfg.output_dir)
    if args.resume:
        trainer = Trainer.load_state(args.resume, tcfg)
        trainer.out_dir = out
        trainer.on_eval = _print_eval
    else:
        scenarios = load_scenarios(cfg.train.data)
        trainer = Trainer(tcfg, scenarios, out, _print_eval)
    write_stamp(out, cfg, "train")
    trainer.run(stop_after_evals=args.stop_after_evals)
    if not trainer.finished:
        print(f"interrupted after step {trainer.global_step}; resume with --resume {out}")
        return EXIT_OK
    result = finalize(trainer)
    for o in result.outcomes:
        print(f"phase {o.phase}: best eval reward {o.best_reward:.4f} at step {o.best_step} ({o.end_reason})")
    if result.log.dip is not None:
        print(f"reward change across the data switch: {result.log.dip:+.4f}")
    return EXIT_OK


def _parse_checkpoints(items) -> dict:
    out = {}
    for item in items or ():
        label, sep, path = item.partition("=")
        if not sep:
            label, path = Path(item).stem, item
        out[label] = path
    return out


def cmd_evaluate(args) -> int:
    extra = {"harness.data": args.data, "harness.tier": args.tier}
    if args.checkpoint:
        extra["harness.checkpoints"] = _parse_checkpoints(args.checkpoint)
    if args.deviations:
        extra["harness.init_deviations"] = [float(d) for d in args.deviations.split(",")]
    cfg = _resolve(args, extra)
    h = cfg.harness
    if not h.data:
        raise ConfigError("no path manifest given (use --data)", "harness.data")
    if not h.checkpoints:
        raise ConfigError("no checkpoints given (use --checkpoint LABEL=PATH)", "harness.checkpoints")
    if args.dry_run:
        print("configuration valid")
        return EXIT_OK
    for label, path in h.checkpoints.items():
        if not Path(path).is_file():
            raise LoadError(f"checkpoint {label}={path} does not exist")
    tags = {SourceTag(t) for t in h.tags}
    paths = [s for s in load_scenarios(h.data) if s.split == h.split and s.tag in tags]
    grid = EvalGrid(list(h.checkpoints.items()), paths, h.init_deviations, cfg.vehicle, cfg.env.max_steps,
                    h.transient_steps, h.record_traces, cfg.env.eps_d_max, cfg.env.eps_theta_max)
    out = Path(cfg.output_dir)
    write_stamp(out, cfg, "evaluate")
    tiers = [ModelTier.ST, ModelTier.HF] if h.tier == "both" else [ModelTier(h.tier)]
    reports = {t: run_grid(grid, t, jobs=cfg.jobs) for t in tiers}
    gap = gap_ratio(reports[ModelTier.HF], reports[ModelTier.ST]) if len(tiers) == 2 else None
    codes = []
    for t, rep in reports.items():
        dest = out / t.value if len(tiers) == 2 else out
        codes.append(render_report(rep, dest, gap if t is ModelTier.HF else None).exit_code)
        _print_summary(rep)
    if gap is not None:
        write_gap_table(gap, out / "gap_ratios.csv")
        for (pol, path), g in gap.ratios.items():
            flag = "" if g.reliable else "  (unreliable)"
            print(f"gap {pol} {path}: {g.value:.3f}{flag}")
        for w in gap.warnings:
            print(f"warning: {w}", file=sys.stderr)
    return max(codes)


def _print_summary(rep: EvalReport) -> None:
    print(f"[{rep.tier}] transient window {rep.transient_steps} steps")
    for pol, c in rep.policies.items():
        print(f"  {pol}: |eps_d| {format_cell(c.mean_abs, c.std_abs)} m, max {c.max_abs:.2f} m, "
              f"completion {rep.completion_rate(pol):.0%}")


def cmd_report(args) -> int:
    cfg = _resolve(args, {})
    if args.dry_run:
        print("configuration valid")
        return EXIT_OK
    merged = None
    for path in args.metrics:
        try:
            rep = load_metrics(path)
        except (OSError, ValueError, KeyError) as exc:
            raise LoadError(f"cannot read metrics bundle {path}: {exc}") from exc
        if merged is None:
            merged = rep
            continue
        clash = set(rep.policies) & set(merged.policies)
        rename = {p: f"{p}@{rep.tier}" if p in clash else p for p in rep.policies}
        for e in rep.episodes:
            e.policy = rename[e.policy]
        merged.episodes += rep.episodes
        merged.cells.update({(rename[p], q): c for (p, q), c in rep.cells.items()})
        merged.policies.update({rename[p]: c for p, c in rep.policies.items()})
        merged.warnings += rep.warnings
    out = Path(cfg.output_dir)
    write_stamp(out, cfg, "report")
    result = render_report(merged, out)
    print(f"wrote {result.summary_csv}")
    return result.exit_code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="seed (overrides the file and TRACKLEARN_SEED)")
    common.add_argument("--jobs", type=int, help="worker threads for evaluation (default 1)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key")
    common.add_argument("--dry-run", action="store_true", help="validate the configuration and exit")

    parser = argparse.ArgumentParser(prog="tracklearn", description="Path-following RL training toolkit.")
    parser.add_argument("--version", action="version", version=f"tracklearn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-paths", parents=[common], help="generate virtual and surrogate logged paths")
    g.set_defaults(func=cmd_generate_paths)

    t = sub.add_parser("train", parents=[common], help="run the training curriculum")
    t.add_argument("--data", help=f"path manifest ({MANIFEST_NAME}) or its directory")
    t.add_argument("--variant", choices=["SAC-ST-VD", "SAC-ST-RW", "SAC-HF-VD", "SAC-HF-RW"])
    t.add_argument("--resume", help="run directory or resume.pkl to continue from")
    t.add_argument("--stop-after-evals", type=int, help=argparse.SUPPRESS)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="evaluate checkpoints over the deviation grid")
    e.add_argument("--data", help="path manifest or its directory")
    e.add_argument("--checkpoint", action="append", metavar="LABEL=PATH")
    e.add_argument("--tier", choices=["ST", "HF", "both"])
    e.add_argument("--deviations", help="comma-separated initial deviations in metres")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", parents=[common], help="render tables from metrics bundles")
    r.add_argument("metrics", nargs="+", help="metrics.json files written by evaluate")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except LoadError as exc:
        print(f"load error: {exc}", file=sys.stderr)
        return EXIT_LOAD_ERROR


if __name__ == "__main__":
    sys.exit(main())
