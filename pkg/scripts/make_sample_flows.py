"""Regenerate data/sample_flows.csv, a small CICIDS2017-style flow file.

Only the column layout mirrors the public dataset; the values are synthetic.
"""

import csv
from pathlib import Path

import numpy as np

COLUMNS = ["Flow ID", "Destination Port", "Flow Duration", "Total Fwd Packets", "Total Backward Packets",
           "Flow Bytes/s", "Flow Packets/s", "Label"]


def main(path="data/sample_flows.csv", n=96, seed=11):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        attack = 60 <= i < 76
        pkts = rng.poisson(40 if attack else 8)
        rows.append([
            f"10.0.0.{i % 7 + 2}-10.0.1.1-{40000 + i}", int(rng.choice([80, 443, 8883])),
            int(rng.integers(2_000, 9_000) if attack else rng.integers(20_000, 90_000)),
            pkts, int(rng.poisson(2 if attack else 6)),
            round(float(rng.normal(9e5 if attack else 4e4, 5e3)), 2),
            round(float(rng.normal(6e3 if attack else 3e2, 30.0)), 2),
            "DDoS" if attack else "BENIGN",
        ])
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(rows)
    print(f"wrote {out} ({n} rows)")


if __name__ == "__main__":
    main()
