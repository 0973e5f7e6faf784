#!/usr/bin/env python3
"""Acceptance-scale experiment battery through the CLI (tens of minutes).

Equivalent to running each `mobnet` subcommand on the shipped configs;
reports land in out/full/.  The per-criterion pytest suite is
tests/test_acceptance.py; this script exercises the same machinery through
the command-line surface.
"""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from mobnet.cli import main as cli_main

OUT = ROOT / "out" / "full"
RUNS = [
    ("mixing", "configs/base.toml"),
    ("simulate", "configs/base.toml"),
    ("homogenize", "configs/base.toml"),
    ("martingale-check", "configs/base.toml"),
    ("hitting", "configs/hitting.toml"),
    ("heavy-traffic", "configs/heavy_traffic.toml"),
    ("stationary", "configs/heavy_traffic.toml"),
    ("sojourn", "configs/heavy_traffic.toml"),
]


def main():
    codes = {}
    for command, config in RUNS:
        print(f"== mobnet {command} --config {config}")
        code = cli_main([
            command, "--config", str(ROOT / config), "--out", str(OUT), "--seed", "7",
        ])
        codes[command] = code
        print(f"   exit code {code}")
    print("\nsummary:")
    for command, code in codes.items():
        print(f"  {command}: {'ok' if code == 0 else f'exit {code}'}")
    return max(codes.values())


if __name__ == "__main__":
    sys.exit(main())
