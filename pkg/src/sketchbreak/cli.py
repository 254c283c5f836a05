"""Command line entry point: ``sketchbreak attack|lp|recovery|chi2-table|validate``."""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys

from .experiments import ConfigError, ExperimentConfig, resolve_seed, run_campaign

log = logging.getLogger("sketchbreak")

COMMANDS = {
    "attack": "gapnorm-attack",
    "lp": "lp-attack",
    "recovery": "sparse-recovery-attack",
    "chi2-table": "chi2-table",
    "validate": "lemma-validation",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketchbreak",
                                     description="Adaptive attacks on linear sketches.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, scenario in COMMANDS.items():
        sp = sub.add_parser(name, help=f"run the {scenario} scenario")
        sp.add_argument("--config", help="JSON config file (defaults are used when omitted)")
        sp.add_argument("--seed", type=int, help="base seed; trial i uses seed + i")
        sp.add_argument("--jobs", type=int, default=1, help="trials run concurrently")
        sp.add_argument("--oracle-cmd", help="external oracle process speaking NDJSON on stdio")
        sp.add_argument("--diagnostics", action="store_true",
                        help="record alignment of accepted directions with the true row space")
        sp.add_argument("--output", help="output directory (overrides output_path)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load(args, scenario: str) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        if cfg.scenario != scenario:
            raise ConfigError(f"scenario: config is for {cfg.scenario!r}, command expects {scenario!r}")
    else:
        cfg = ExperimentConfig(scenario, {}, "results")
    if args.output:
        cfg.output_path = args.output
    if args.diagnostics and scenario in ("gapnorm-attack", "lp-attack", "sparse-recovery-attack"):
        cfg.parameters["diagnostics"] = True
    cfg.validate()
    return resolve_seed(cfg, args.seed).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    scenario = COMMANDS[args.command]
    try:
        cfg = _load(args, scenario)
        if args.jobs < 1:
            raise ConfigError("--jobs: must be at least 1")
        if args.oracle_cmd and scenario != "gapnorm-attack":
            raise ConfigError("--oracle-cmd: only supported by the attack command")
        oracle_cmd = shlex.split(args.oracle_cmd) if args.oracle_cmd else None

        def progress(rec, wall):
            log.info("trial %d seed %d: %s after %d rounds, %d queries, %.1fs", rec["trial"],
                     rec["seed"], rec["outcome"], rec["rounds"], rec["queries"], wall)

        records, summary = run_campaign(cfg, jobs=args.jobs, oracle_cmd=oracle_cmd, progress=progress)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    if summary is not None:
        print(json.dumps(summary.row()))
    elif scenario == "lemma-validation":
        for c in records:
            print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}  margin={c['margin']:.3g}")
    else:
        print(f"wrote {len(records)} rows to {cfg.output_path}/chi2_table.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
