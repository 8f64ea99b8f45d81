"""Command-line entry point: ``lab <subcommand> --config path [--set k=v ...] --out dir``.

Exit codes: 0 success, 2 config error, 3 experiment failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, config_hash, load_config

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3

SUBCOMMANDS = ("swingup", "surrogate-bench", "conditioning", "variance", "control-bench", "plots", "all")
ORDER = ("swingup", "surrogate-bench", "conditioning", "variance", "control-bench")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lab", description="Run the surrogate / LTV trajectory-optimization studies.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, default=None, help="JSON config (defaults used when omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry by dotted path; value parsed as JSON when possible")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _manifests_in(out: Path):
    from .experiments import load_manifest

    return [load_manifest(p) for p in sorted(out.glob("*/manifest.json"))]


def _print_manifest(man) -> None:
    print(f"== {man.experiment}: {'ok' if man.ok else 'FAILED'} ({len(man.files)} files)")
    for f in man.failures:
        print(f"   failure: {f}")


def run(subcommand: str, cfg: dict, out: Path) -> int:
    from . import experiments
    from .plotting import emit_plots

    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    names = ORDER if subcommand == "all" else () if subcommand == "plots" else (subcommand,)
    manifests = []
    for name in names:
        try:
            man = experiments.EXPERIMENTS[name](cfg, out)
        except experiments.ExperimentFailure as err:
            print(f"== {name}: FAILED ({err})")
            return EXIT_FAILURE
        _print_manifest(man)
        manifests.append(man)
    if subcommand in ("plots", "all") and cfg["plots"]["enabled"]:
        source = manifests if subcommand == "all" else _manifests_in(out)
        written, missing = emit_plots(source, out)
        print(f"== plots: {len(written)} written, {len(missing)} missing")
        for m in missing:
            print(f"   missing: {m}")
        if not source:
            print("   warning: no manifests found, nothing plotted")
    if subcommand == "all":
        summary = {"config_hash": config_hash(cfg),
                   "experiments": {m.experiment: {"status": "ok" if m.ok else "failed", "files": m.checksums()}
                                   for m in manifests}}
        (out / "manifest.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return EXIT_OK if all(m.ok for m in manifests) else EXIT_FAILURE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        print(f"config error: output directory {args.out} not writable: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return run(args.subcommand, cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
