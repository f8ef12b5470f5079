"""Bootstrap phase timings against in-process CAS and LAS services.

    python3 scripts/attest_phases.py --runs 20
"""

from __future__ import annotations

import argparse
import statistics

from slick.attest import (CasServer, LasServer, PolicyStore, ProvisionedConfig,
                          enclave_bootstrap, measure)

CONFIG = "src :: FromTestDevice(d0); src -> ToTestDevice(d0);"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=20)
    args = ap.parse_args()
    phases: dict[str, list[int]] = {}
    with CasServer(PolicyStore(None)) as cas:
        cas.store.put_policy(measure("slick", CONFIG),
                             ProvisionedConfig(config_text=CONFIG, secrets={"sa0": bytes(32)}))
        with LasServer(cas.address) as las:
            for i in range(args.runs):
                rep = enclave_bootstrap(cas.address, las.address, identity="slick",
                                        config_text=CONFIG, instance_id=f"run{i}").report
                for k, v in rep.as_dict().items():
                    phases.setdefault(k, []).append(v)
    print(f"{'phase':<20}{'median ms':>12}{'max ms':>10}")
    for k, vs in phases.items():
        print(f"{k:<20}{statistics.median(vs) / 1e6:>12.3f}{max(vs) / 1e6:>10.3f}")


if __name__ == "__main__":
    main()
