"""Run the CIFAR-10 figure presets in configs/ one after another.

Needs the binary CIFAR-10 batches (cifar-10-batches-bin); point FEDKCI_DATA at
that directory. Each preset takes hours on a CPU.

    FEDKCI_DATA=~/data/cifar-10-batches-bin python scripts/run_figures.py fig2 fig3
"""

import argparse
import sys
from pathlib import Path

from fedkci.cli import main as cli_main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    presets = sorted(p.stem for p in CONFIGS.glob("fig*.ini"))
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("figures", nargs="*", help=f"prefixes of {', '.join(presets)} (default: all)")
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    chosen = [p for p in presets if not args.figures or any(p.startswith(f) for f in args.figures)]
    if not chosen:
        parser.error("no preset matches")
    for name in chosen:
        print(f"== {name}", flush=True)
        code = cli_main(["run", str(CONFIGS / f"{name}.ini"), "--workers", str(args.workers)])
        if code:
            sys.exit(code)


if __name__ == "__main__":
    main()
