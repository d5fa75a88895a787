#!/usr/bin/env python3
"""Run every config in configs/ through the CLI and list the artifacts.

Usage: python scripts/run_examples.py [--out DIR] [--no-obj] [config ...]
"""

import argparse
import sys
from pathlib import Path

from homsurf.cli import main as homsurf_main

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="*", type=Path)
    ap.add_argument("--out", type=Path, help="parent directory; each config gets a subdirectory")
    ap.add_argument("--no-obj", action="store_true")
    args = ap.parse_args()
    configs = args.configs or sorted((ROOT / "configs").glob("*.toml"))
    failed = 0
    for cfg in configs:
        argv = ["run", str(cfg)]
        if args.out:
            argv += ["--out", str(args.out / cfg.stem)]
        if args.no_obj:
            argv.append("--no-obj")
        print(f"== {cfg.name}", flush=True)
        code = homsurf_main(argv)
        failed += code != 0
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
