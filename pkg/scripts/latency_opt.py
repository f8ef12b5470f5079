"""Per-packet latency with and without the scheduler timer optimization.

    python3 scripts/latency_opt.py --samples 5000
"""

from __future__ import annotations

import argparse

from slick.bench import format_table, run_latency


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--app", default="ethermirror")
    ap.add_argument("--sizes", default="64,512,1518")
    ap.add_argument("--samples", type=int, default=5000)
    args = ap.parse_args()
    reports = []
    for size in map(int, args.sizes.split(",")):
        for opt in (True, False):
            reports.append(run_latency(args.app, size, args.samples, timer_optimization=opt))
    print(format_table(reports))
    for r in reports:
        print(f"size {r.packet_size:>5} optimized={r.timer_optimization!s:<5} "
              f"clock reads {r.clock_reads:>8}  p50 {r.latency_p50_ns:>9.0f} ns")


if __name__ == "__main__":
    main()
