"""Throughput of every single-instance app across frame sizes.

    python3 scripts/bench_sizes.py --duration 1 --out results/sizes.jsonl
"""

from __future__ import annotations

import argparse
from pathlib import Path

from slick.bench import format_table, run_throughput

APPS = ["wire", "ethermirror", "firewall", "toenclave", "seal", "iprouter", "ids"]
SIZES = [64, 128, 256, 512, 1024, 1518]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--apps", default=",".join(APPS))
    ap.add_argument("--sizes", default=",".join(map(str, SIZES)))
    ap.add_argument("--duration", type=float, default=1.0)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    reports = [run_throughput(app, int(size), args.duration)
               for app in args.apps.split(",") for size in args.sizes.split(",")]
    print(format_table(reports))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text("".join(r.to_json() + "\n" for r in reports))


if __name__ == "__main__":
    main()
