#!/usr/bin/env python3
"""Every experiment on MPI Sintel, one output directory each, then tables and figures.

    python3 scripts/run_sintel_suite.py --data-root /data/sintel --out out/sintel [--jobs 4]
"""

import argparse
import sys
from pathlib import Path

from iuq.cli import main as iuq

EXPERIMENTS = ("protocol_study", "split_gradient", "ablation", "main_table", "downstream", "channel_verify", "ood_probe")


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data-root", required=True)
    p.add_argument("--out", default="out/sintel")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--only", nargs="+", choices=EXPERIMENTS)
    args = p.parse_args()
    configs = Path(__file__).resolve().parent.parent / "configs"
    worst = 0
    for exp in args.only or EXPERIMENTS:
        out = str(Path(args.out) / exp)
        rc = iuq(["run", exp, "--config", str(configs / f"sintel_{exp}.json"), "--data-root", args.data_root,
                  "--out", out, "--jobs", str(args.jobs)])
        worst = max(worst, rc)
        if rc != 1:
            iuq(["figures", out])
    return worst


if __name__ == "__main__":
    sys.exit(main())
