"""Command-line entry point: ``pnscan <simulate|attack|evaluate|order-group|export>``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import DependencyError, PnSError, ScenarioError
from .scenario import Scenario

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_SIMULATION = 3
EXIT_DEPENDENCY = 4


def parse_pairs(text: str) -> list[list[str]]:
    """``"N1:N13,N2:N14"`` -> ``[["N1", "N13"], ["N2", "N14"]]``."""
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 2 or not all(parts):
            raise ScenarioError(f"bad pair {item!r}; expected A:B", "--pairs")
        pairs.append(parts)
    if not pairs:
        raise ScenarioError("no pairs given", "--pairs")
    return pairs


def _value(raw: str):
    if raw.lower() in ("none", "null", "auto"):
        return None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_grid(text: str) -> list[dict]:
    """Countermeasure grid from a JSON file or ``mode[:key=value...]`` entries.

    Examples: ``none,jitter:alpha=0.5,multi_transceiver:n=2``.
    """
    path = Path(text)
    if path.suffix == ".json" and path.exists():
        try:
            grid = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"grid file is not valid JSON: {exc.msg}", "--grid") from None
        return grid["grid"] if isinstance(grid, dict) else grid
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        mode, *params = item.split(":")
        entry = {"mode": mode}
        for p in params:
            if "=" not in p:
                raise ScenarioError(f"bad grid parameter {p!r}; expected key=value", "--grid")
            key, raw = p.split("=", 1)
            key = {"n": "n_transceivers"}.get(key, key)
            if key == "p":
                key = "p_isolate" if mode == "passive" else "p_assist"
            entry[key] = _value(raw)
        out.append(entry)
    if not out:
        raise ScenarioError("empty grid", "--grid")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pnscan",
        description="Simulate PnS key agreement on a CAN bus, attack it through the probe, "
                    "and evaluate countermeasures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario_required=True):
        p.add_argument("--scenario", required=scenario_required,
                       help="scenario JSON file or built-in name (minimal, equidistant, reference16)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the experiment seed")
        p.add_argument("--trials", type=int, help="override frames per pair")
        p.add_argument("--pairs", help="override the pair list, e.g. N1:N13,N2:N14")

    common(sub.add_parser("simulate", help="run key agreement and write traces and transcripts"))
    p = sub.add_parser("attack", help="timing attack over the pair matrix")
    common(p)
    p.add_argument("--traces", help="attack the output directory of a previous simulate run")
    p = sub.add_parser("evaluate", help="compare countermeasures")
    common(p)
    p.add_argument("--grid", help="grid entries (mode[:key=value...], comma separated) or a JSON file")
    p = sub.add_parser("order-group", help="min-max spanning tree and masked rank broadcast")
    common(p, scenario_required=False)
    p.add_argument("--advantage", help="advantage matrix CSV")
    p.add_argument("--group", help="comma-separated member ids")
    p.add_argument("--nonce", help="broadcast nonce as hex")
    p.add_argument("--run-keys", action="store_true", help="also run GroupKey-Tree on the scenario bus")
    common(sub.add_parser("export", help="write plot-ready CSVs and the resolved scenario"))
    return parser


def _load(args) -> Scenario:
    scenario = Scenario.load(args.scenario)
    pairs = parse_pairs(args.pairs) if args.pairs else None
    grid = parse_grid(args.grid) if getattr(args, "grid", None) else None
    if any(v is not None for v in (args.seed, args.trials, pairs, grid)):
        scenario = scenario.with_overrides(seed=args.seed, trials=args.trials, pairs=pairs, grid=grid)
    return scenario


def run(argv=None) -> int:
    from . import harness

    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "trials": args.trials, "pairs": args.pairs,
                 "grid": getattr(args, "grid", None)}
    try:
        if args.command == "order-group":
            scenario = _load(args) if args.scenario else None
            group = [g.strip() for g in args.group.split(",")] if args.group else None
            try:
                nonce = bytes.fromhex(args.nonce) if args.nonce else None
            except ValueError:
                raise ScenarioError("nonce must be hex", "--nonce") from None
            report = harness.cmd_order_group(args.out, advantage=args.advantage, group=group,
                                             scenario=scenario, seed=args.seed, nonce=nonce,
                                             run_keys=args.run_keys, overrides=overrides)
        else:
            scenario = _load(args)
            if args.command == "simulate":
                report = harness.cmd_simulate(scenario, args.out, overrides)
            elif args.command == "attack":
                report = harness.cmd_attack(scenario, args.out, overrides, traces=args.traces)
            elif args.command == "evaluate":
                report = harness.cmd_evaluate(scenario, args.out, overrides)
            else:
                report = harness.cmd_export(scenario, args.out, overrides)
    except ScenarioError as exc:
        print(f"pnscan: scenario error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (DependencyError, FileNotFoundError) as exc:
        print(f"pnscan: missing input: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except PnSError as exc:
        print(f"pnscan: simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    print(f"pnscan {args.command}: wrote {Path(args.out) / 'report.txt'}")
    if args.command == "order-group":
        print(f"tree order {' '.join(report['tree']['order'])}, max-edge d {report['tree']['max_edge_d']}")
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))
