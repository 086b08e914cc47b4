"""Per-round simulated latency and energy for each aggregation mode.

    python3 scripts/overhead_report.py [--config configs/default.cfg] [--rounds 2]
"""

import argparse

from fliot.config import load_config
from fliot.sim import AGGREGATION_MODES, build_fleet, run_experiment


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/default.cfg")
    ap.add_argument("--rounds", type=int, default=2)
    args = ap.parse_args(argv)
    cfg = load_config(args.config).experiment.with_(rounds=args.rounds, centralized_baseline=False)
    devices = build_fleet(cfg)
    base = None
    print(f"{'mode':<14} {'latency/round':>14} {'energy/round':>13} {'uplink/round':>13} {'vs plaintext':>12}")
    for mode in AGGREGATION_MODES:
        res = run_experiment(cfg.with_(aggregation_mode=mode), devices=devices)
        lat = res.total_latency / args.rounds
        base = base or lat
        print(f"{mode:<14} {lat:>13.4f}s {res.total_energy / args.rounds:>13.5g} "
              f"{res.total_uplink // args.rounds:>13d} {lat / base:>11.2f}x")


if __name__ == "__main__":
    main()
