"""Command line front end.

One subcommand per run mode; the subcommand overrides the mode stored in
the configuration file, and explicit flags override the corresponding
file values.  Exit codes: 0 success, 1 configuration or validation
error, 2 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from importlib import resources

from .config import check_run_controls, parse_config
from .model import EngineError, ValidationError
from .runner import run_scenario

_MODE_HELP = {
    "equilibrium": "solve the limiting class-level equilibrium on a "
                   "deterministic chain schedule",
    "simulate": "run finite-game replications and write path, "
                "equilibrium, and objective tables",
    "nash-gap": "measure the best-response gap against game size",
    "filter-demo": "simulate and write the posterior tracking tables",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfgexec",
        description="mean-field optimal execution engine")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode, help_text in _MODE_HELP.items():
        p = sub.add_parser(mode, help=help_text)
        p.add_argument("--config", default=None, metavar="PATH",
                       help="scenario file (default: the packaged "
                            "two-class benchmark)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the base seed")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="override the output directory")
        p.add_argument("--steps", type=int, default=None,
                       help="override the number of grid steps")
        p.add_argument("--reps", type=int, default=None,
                       help="override the replication count")
        fig = p.add_mutually_exclusive_group()
        fig.add_argument("--figures", dest="figures", action="store_true",
                         default=None, help="render figures (default: "
                         "per configuration)")
        fig.add_argument("--no-figures", dest="figures",
                         action="store_false", help="skip figure rendering")
    return parser


def _load_config(path):
    if path is not None:
        return parse_config(path)
    packaged = resources.files("mfgexec") / "configs" / "table1_table2.cfg"
    with resources.as_file(packaged) as real_path:
        return parse_config(real_path)


def _apply_overrides(cfg, args):
    updates = {"mode": args.mode}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.steps is not None:
        updates["n_steps"] = args.steps
    if args.reps is not None:
        updates["replications"] = args.reps
    if args.figures is not None:
        updates["figures"] = args.figures
    cfg = replace(cfg, **updates)
    check_run_controls(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(_load_config(args.config), args)
        written = run_scenario(cfg)
    except ValidationError as exc:
        print(f"mfgexec: {exc}", file=sys.stderr)
        return 1
    except EngineError as exc:
        print(f"mfgexec: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"mfgexec: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
