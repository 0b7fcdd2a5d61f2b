"""Command-line interface: ``run``, ``report`` and ``validate``."""
from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

from .io.config import ConfigError, RunConfig, dump_config, parse_yaml, apply_overrides, to_episode_config, validate_data
from .io.logs import JsonlWriter, episode_path
from .io.report import EmptyReportError, build_report
from .sim.metrics import metrics
from .sim.runner import run_batch

EXIT_OK, EXIT_INVALID, EXIT_UNWRITABLE = 0, 1, 2


def _resolve(args) -> RunConfig:
    data, marks = {}, {}
    source = None
    if args.config:
        source = args.config
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError([f"cannot read config: {exc.strerror}"], source) from None
        data, marks = parse_yaml(text, source)
    overrides = list(args.set or [])
    for flag, key in (("seed", "seed"), ("episodes", "episodes"), ("scheduler", "scheduler.mode"),
                      ("workers", "workers"), ("out", "output.dir"), ("label", "label")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if getattr(args, "guidance_off", False):
        overrides.append("guidance.enabled=false")
    return validate_data(apply_overrides(data, overrides), marks, source)


def _writable(path: Path) -> str | None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path):
            pass
    except OSError as exc:
        return f"output directory {path} is not writable: {exc.strerror or exc}"
    return None


def _variants(cfg: RunConfig, paired: bool) -> list[tuple[str, bool]]:
    if paired:
        return [("baseline", True), (cfg.label or "guided", False)]
    label = cfg.label or ("guided" if cfg.guidance.enabled else "baseline")
    return [(label, False)]


def cmd_run(args) -> int:
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    out = Path(cfg.output.dir)
    problem = _writable(out)
    if problem:
        print(problem, file=sys.stderr)
        return EXIT_UNWRITABLE

    for label, off in _variants(cfg, args.paired):
        ep_cfg = to_episode_config(cfg, guidance_off=off, label=label)
        vdir = out / label
        vdir.mkdir(parents=True, exist_ok=True)
        (vdir / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
        writers = {}

        def sink_for(i, vdir=vdir, writers=writers):
            writers[i] = JsonlWriter(episode_path(vdir, i))
            return writers[i]

        reports = run_batch(ep_cfg, cfg.seed, cfg.episodes, sink_for, cfg.workers)
        for w in writers.values():
            w.close()
        m = metrics(reports)
        summary = {"scenario": cfg.scenario, "variant": label, "seed": cfg.seed, **m.to_dict(),
                   "fallbacks": sum(r.fallback_count for r in reports),
                   "failures": sum(r.failure is not None for r in reports)}
        (vdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"{cfg.scenario:<10} {label:<10} episodes={m.episodes} SR={m.sr:.3f} DR={m.dr:.3f} "
              f"safe_failure={m.safe_failure:.3f}")

    if args.paired:
        text = build_report(out)
        (out / "comparison.txt").write_text(text, encoding="utf-8")
        print(text, end="")
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.dir)
    if not root.is_dir():
        print(f"report directory {root} does not exist", file=sys.stderr)
        return EXIT_INVALID
    try:
        text = build_report(root, args.out)
    except EmptyReportError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"cannot build report: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(text, end="")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: {args.config or '<overrides>'} (scenario {cfg.scenario})")
    if args.dump:
        print(dump_config(cfg), end="")
    return EXIT_OK


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, e.g. guidance.rho0=30")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bimanual-safety", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run episodes and write logs")
    _common(run)
    run.add_argument("--seed", type=int)
    run.add_argument("--episodes", type=int)
    run.add_argument("--guidance-off", action="store_true", help="baseline policy (no cost guidance)")
    run.add_argument("--scheduler", choices=("rules", "remote"))
    run.add_argument("--paired", action="store_true", help="baseline and guided on the same seeds")
    run.add_argument("--label", help="variant label for logs and tables")
    run.add_argument("--out", help="output directory")
    run.add_argument("--workers", type=int)
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="aggregate logs into tables and CSV series")
    rep.add_argument("dir")
    rep.add_argument("--out", help="where to write tables (default: DIR)")
    rep.set_defaults(func=cmd_report)

    val = sub.add_parser("validate", help="check a configuration without running")
    _common(val)
    val.add_argument("--dump", action="store_true", help="print the resolved configuration")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
