"""Circular two-instance chain versus a single Wire instance.

Both instances run on their own worker thread and exchange packets over
shared rings; the frame count returned on the primary's device is reported.

    python3 scripts/chain_experiment.py --duration 2
"""

from __future__ import annotations

import argparse

from slick.bench import format_table, run_throughput


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="64,128,512,1518")
    ap.add_argument("--duration", type=float, default=1.0)
    args = ap.parse_args()
    reports = []
    for size in map(int, args.sizes.split(",")):
        wire = run_throughput("wire", size, args.duration)
        chain = run_throughput("chain", size, args.duration)
        reports += [wire, chain]
        ratio = chain.throughput_pps / wire.throughput_pps if wire.throughput_pps else 0.0
        print(f"size {size:>5}: chain/wire = {ratio:.2f}")
    print(format_table(reports))


if __name__ == "__main__":
    main()
