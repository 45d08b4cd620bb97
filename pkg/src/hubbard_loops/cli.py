"""Command-line entry point: one subcommand per campaign."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiments import CAMPAIGNS, ConfigError, parse_config, run_campaign


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hubbard-loops",
                                     description="Loop-expansion experiments for the one-hole U=∞ Hubbard model.")
    sub = parser.add_subparsers(dest="campaign", required=True)
    for name in CAMPAIGNS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value configuration file")
        p.add_argument("--seed", help="64-bit seed")
        p.add_argument("--samples", help="Monte Carlo samples per estimate")
        p.add_argument("--workers", help="worker processes")
        p.add_argument("--beta", help="inverse temperature")
        p.add_argument("--b", dest="fields", help='field vector(s), e.g. "0.4,0.1" or "0.4;0"')
        p.add_argument("--out", dest="output_dir", help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    text = args.config.read_text(encoding="utf-8") if args.config else ""
    overrides = {k: v for k, v in vars(args).items() if k not in ("config",) and v is not None}
    try:
        cfg = parse_config(text, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    rep = run_campaign(cfg)
    sys.stdout.write(rep.text())
    print(f"wall-clock: {rep.wall_clock:.2f} s", file=sys.stderr)
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
