"""Command line entry point: ``hybridci run|sweep|validate``."""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .experiment import (
    CSV_HEADER,
    SWEEP_HEADER,
    ConfigError,
    bundled_configs,
    load_config,
    parse_p_values,
    run_failure_sweep,
    run_scenario,
    write_csv,
)

log = logging.getLogger("hybridci")


def _manifest(cfg, command: str, extra: dict | None = None) -> dict:
    out = {
        "command": command,
        "scenario": cfg.name,
        "seed": cfg.seed,
        "config": cfg.raw,
        "versions": {
            "hybridci": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    out.update(extra or {})
    return out


def _write_manifest(out_dir: Path, manifest: dict) -> None:
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_fh = open(out / "messages.jsonl", "w", encoding="utf-8") if args.trace else None

    def trace(rec):
        trace_fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

    try:
        with open(out / "records.csv", "w", encoding="utf-8", newline="") as fh:
            write_csv((r.row() for r in run_scenario(cfg, trace=trace if trace_fh else None)),
                      CSV_HEADER, fh)
    finally:
        if trace_fh:
            trace_fh.close()
    _write_manifest(out, _manifest(cfg, "run", {"outputs": ["records.csv"]
                                                + (["messages.jsonl"] if args.trace else [])}))
    log.info("wrote %s", out / "records.csv")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    p_values = parse_p_values(args.p)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_failure_sweep(cfg, p_values)
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        write_csv((r.row() for r in rows), SWEEP_HEADER, fh)
    _write_manifest(out, _manifest(cfg, "sweep", {"p_values": p_values, "outputs": ["sweep.csv"]}))
    log.info("wrote %s", out / "sweep.csv")
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"{cfg.name}: ok ({cfg.grid.n_cells} states, {cfg.n_agents} agents, "
          f"{len(cfg.dispersion.source_cells)} sources, horizon {cfg.horizon}, "
          f"topology {cfg.topology.mode.value})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridci",
        description="Decentralized field estimation with hybrid CI / MH consensus.",
        epilog=f"bundled scenarios: {', '.join(bundled_configs())}",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario and write per-step records")
    p.add_argument("config", help="TOML file or bundled scenario name")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out")
    p.add_argument("--trace", action="store_true",
                   help="also log every hybrid consensus message to messages.jsonl")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="link-failure sweep over p_fail")
    p.add_argument("config")
    p.add_argument("--p", default="0:0.9:0.1", help="start:stop:step (inclusive) or a comma list")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="check a scenario config")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
