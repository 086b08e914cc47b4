"""Regenerate every result table from one config.

Writes, under ``--out``:
    simulate/          one default run (rounds, per-attack, ROC/PR, mode comparison)
    mode_comparison/   plaintext vs homomorphic vs secret-shared (+ centralized row)
    compression/       uncompressed vs the pruning/quantization grid
    noise_sweep/       F1 and costs across the DP sigma grid
    scaling/           costs across fleet sizes

    python3 scripts/reproduce_tables.py --config configs/default.cfg --out results/ [--workers 4]
"""

import argparse
import sys
from pathlib import Path

from fliot.cli import main as fliot

STEPS = (
    ("simulate", ["simulate"]),
    ("mode_comparison", ["sweep", "--axis", "aggregation_mode"]),
    ("compression", ["sweep", "--axis", "compression"]),
    ("noise_sweep", ["sweep", "--axis", "noise_sigma"]),
    ("scaling", ["sweep", "--axis", "n_devices"]),
)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/default.cfg")
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", choices=[name for name, _ in STEPS], action="append",
                    help="run just these steps (repeatable)")
    args = ap.parse_args(argv)
    extra = ["--config", args.config, "--workers", str(args.workers)]
    if args.seed is not None:
        extra += ["--seed", str(args.seed)]
    for name, cmd in STEPS:
        if args.only and name not in args.only:
            continue
        print(f"== {name}", flush=True)
        code = fliot([*cmd, *extra, "--out", str(Path(args.out) / name)])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
