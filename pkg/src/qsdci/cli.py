"""``qsdci`` command line: run one scenario subcommand and emit CSV."""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .scenario import COMMANDS, Scenario, ScenarioError, StageFailure, emit_csv, load_scenario, run_scenario

HELP = {
    "noise": "noise budget or FWM-versus-spacing curve",
    "skr": "secret key rate at one operating point",
    "plan": "exhaustive core allocation search",
    "curves": "SDM versus DWDM key rate against distance",
    "dsp": "receiver chain BER (optionally dump constellations)",
    "energy": "capacity versus power per transceiver scheme",
    "sweep": "expand the [sweep] axis over another subcommand",
}


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="override the scenario seed")
    p.add_argument("--out", default=d, help="output CSV path (default: stdout)")
    p.add_argument("--format", choices=("csv",), default=argparse.SUPPRESS if suppress else "csv")
    p.add_argument("--jobs", type=int, default=argparse.SUPPRESS if suppress else 1,
                   help="concurrent sweep points")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsdci", description=__doc__)
    parser.add_argument("--version", action="version", version=f"qsdci {__version__}")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("scenario", nargs="?", help="scenario TOML file (defaults apply when omitted)")
        _common(p, suppress=True)
        if name == "dsp":
            p.add_argument("--dump", help="write the constellation CSV (stage, pol, i, q) here")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario) if args.scenario else Scenario()
        table = run_scenario(scenario, args.command, seed=args.seed, dump_path=getattr(args, "dump", None),
                             jobs=args.jobs)
    except ScenarioError as exc:
        print(f"qsdci: config error: {exc}", file=sys.stderr)
        return 2
    except StageFailure as exc:
        print(f"qsdci: stage error {exc}", file=sys.stderr)
        return 1
    text = emit_csv(table, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
