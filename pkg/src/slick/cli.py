"""Command line: run, bench, pktgen, cas, las, measure."""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
import time
from pathlib import Path

from .attest import (AttestationError, AttestationRejected, CasServer, ConnectFailure, LasServer,
                     PolicyStore, enclave_bootstrap, measure, parse_addr)
from .chain import ChainError, RingRegistry
from .config import ConfigError, ParseError
from .elements.base import ElementInitError, FatalElementError
from .persist import PersistError
from .runtime import InstanceSettings, Role, StopCondition, clock_from_env, instantiate

log = logging.getLogger("slick")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_ATTEST = 3


def _err(msg: str) -> None:
    print(f"slick: {msg}", file=sys.stderr)


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from None
    if not sizes or any(s <= 0 for s in sizes):
        raise argparse.ArgumentTypeError("sizes must be positive")
    return sizes


def _settings_from(args, role: Role, ident: str, secrets: dict, base_dir: Path) -> InstanceSettings:
    from .runtime import HostClock, NicPtpClock
    clock = clock_from_env() if args.clock is None else (
        NicPtpClock() if args.clock == "nicptp" else HostClock())
    return InstanceSettings(id=ident, role=role, clock=clock, secrets=secrets,
                            timer_optimization=not args.no_timer_opt, base_dir=base_dir,
                            identity=args.identity, state_file=args.state_file)


def cmd_run(args) -> int:
    cas = args.cas or os.environ.get("SLICK_CAS_ADDR")
    las = args.las or os.environ.get("SLICK_LAS_ADDR")
    text = args.config.read_text(encoding="utf-8") if args.config else ""
    base_dir = args.config.parent if args.config else Path.cwd()
    secrets: dict[str, bytes] = {}
    measurement = None
    if cas:
        if not las:
            _err("--cas needs --las (or SLICK_LAS_ADDR)")
            return EXIT_CONFIG
        try:
            res = enclave_bootstrap(parse_addr(cas), parse_addr(las), identity=args.identity,
                                    config_text=text, instance_id=args.id)
        except AttestationRejected as exc:
            _err(f"attestation rejected: {exc.reason}" + (f" ({exc.detail})" if exc.detail else ""))
            return EXIT_ATTEST
        except (ConnectFailure, AttestationError) as exc:
            _err(str(exc))
            return EXIT_ATTEST
        measurement = res.measurement
        os.environ.update(res.config.env)
        secrets = dict(res.config.secrets)
        if res.config.config_text.strip():
            text = res.config.config_text
        log.info("attested; phases (ns): %s", json.dumps(res.report.as_dict()))
    else:
        log.warning("no CAS configured: running the local configuration unattested (dev mode)")
        if not text:
            _err("--config is required without --cas")
            return EXIT_CONFIG

    role = Role(args.role)
    try:
        settings = _settings_from(args, role, args.id, secrets, base_dir)
        settings.rings = RingRegistry()         # one shared ring space per invocation
        settings.measurement = measurement or measure(args.identity, text)
        inst = instantiate(text, settings)
        peer = None
        if args.peer:
            peer_settings = _settings_from(args, Role.SECONDARY, args.id + "-peer", secrets,
                                           args.peer.parent)
            peer_settings.state_file = None
            peer_settings.rings, peer_settings.space = inst.rings, inst.space
            peer = instantiate(args.peer.read_text(encoding="utf-8"), peer_settings)
    except ParseError as exc:
        _err(f"{args.config}: {exc}")
        return EXIT_CONFIG
    except (ConfigError, ElementInitError) as exc:
        _err(f"{args.config}: {exc}")
        return EXIT_CONFIG
    except ChainError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    except (PersistError, OSError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME

    if args.packets is not None:
        for dev in inst.devices.values():
            if dev.synth_remaining != 0:
                dev.synth_remaining = args.packets

    stop_ev = threading.Event()
    _on_signal(signal.SIGINT, stop_ev)
    stop = StopCondition(duration_ns=int(args.duration * 1e9) if args.duration else None,
                         until_idle=not args.duration, event=stop_ev)
    try:
        if peer is not None:
            from .bench import run_chain
            t0 = time.monotonic_ns()
            run_chain(inst, peer, threaded=False)
            stats = inst.stats(time.monotonic_ns() - t0)
        else:
            stats = inst.run(stop)
        for spec in inst.persist_specs:
            from .persist import seal_state
            seal_state(inst, spec)
    except (FatalElementError, PersistError) as exc:
        _err(f"runtime error: {exc}")
        return EXIT_RUNTIME
    out = stats.to_json()
    if args.stats_json:
        Path(args.stats_json).write_text(out + "\n", encoding="utf-8")
    else:
        print(out)
    if peer is not None:
        print(peer.stats().to_json())
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import APPS, format_table, run_latency, run_throughput
    if args.app not in APPS:
        _err(f"unknown app {args.app!r}; choose from {', '.join(APPS)}")
        return EXIT_CONFIG
    reports = []
    out = open(args.json, "w", encoding="utf-8") if args.json else None
    try:
        for size in args.sizes:
            if args.mode == "latency":
                r = run_latency(args.app, size, samples=args.samples,
                                timer_optimization=not args.no_timer_opt, duration=args.duration)
            else:
                r = run_throughput(args.app, size, args.duration,
                                   timer_optimization=not args.no_timer_opt)
            reports.append(r)
            line = r.to_json()
            print(line, file=out or sys.stdout)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    finally:
        if out:
            out.close()
    print(format_table(reports), file=sys.stderr)
    return EXIT_OK


def cmd_pktgen(args) -> int:
    from .pcap import write_pcap
    from .pktgen import paced, synth_frames
    try:
        frames = paced(synth_frames(args.size, args.count, args.seed), args.rate)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    t0 = time.monotonic()
    if args.out == "pcap":
        if not args.file:
            _err("--out pcap needs --file")
            return EXIT_CONFIG
        try:
            n = write_pcap(args.file, frames)
        except ValueError as exc:
            _err(str(exc))
            return EXIT_CONFIG
        sent, dropped = n, 0
    else:
        from .chain import SHARED_RINGS, RingStatus
        from .packet import HEADROOM, PacketPool, RegionTag
        ring = SHARED_RINGS.create(args.ring, args.ring_size) if args.ring not in SHARED_RINGS \
            else SHARED_RINGS.lookup(args.ring)
        pool = PacketPool(RegionTag.UNTRUSTED, args.ring_size, max(2048, args.size))
        sent = dropped = 0
        try:
            for f in frames:
                if pool.free_count == 0:
                    dropped += 1
                    continue
                h = pool.alloc(len(f))
                h.buf[HEADROOM:HEADROOM + len(f)] = f
                if ring.enqueue(h) is RingStatus.OK:
                    sent += 1
                else:
                    pool.free(h)
                    dropped += 1
        except ValueError as exc:
            _err(str(exc))
            return EXIT_CONFIG
    elapsed = time.monotonic() - t0
    print(json.dumps({"out": args.out, "sent": sent, "dropped": dropped, "size": args.size,
                      "elapsed_s": round(elapsed, 6)}))
    return EXIT_OK


def _on_signal(sig, ev: threading.Event) -> None:
    try:
        signal.signal(sig, lambda *_: ev.set())
    except ValueError:  # not the main thread
        pass


def _serve_forever(stop: threading.Event) -> None:
    _on_signal(signal.SIGINT, stop)
    _on_signal(signal.SIGTERM, stop)
    while not stop.wait(0.5):
        pass


def cmd_cas(args) -> int:
    admin = parse_addr(args.admin) if args.admin else None
    cas = CasServer(PolicyStore(args.store), parse_addr(args.listen), admin).start()
    info = {"cas": "%s:%d" % cas.address[:2], "public_key": cas.public_key.hex()}
    if admin:
        info["admin"] = "%s:%d" % cas.admin_address[:2]
    print(json.dumps(info), flush=True)
    try:
        _serve_forever(threading.Event())
    finally:
        cas.stop()
    return EXIT_OK


def cmd_las(args) -> int:
    las = LasServer(parse_addr(args.cas), parse_addr(args.listen), las_id=args.las_id).start()
    print(json.dumps({"las": "%s:%d" % las.address[:2], "las_id": las.las_id}), flush=True)
    try:
        _serve_forever(threading.Event())
    finally:
        las.stop()
    return EXIT_OK


def cmd_measure(args) -> int:
    text = args.config.read_text(encoding="utf-8") if args.config else ""
    print(measure(args.identity, text).hex())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slick", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run an instance")
    r.add_argument("--config", type=Path)
    r.add_argument("--role", choices=[x.value for x in Role], default="primary")
    r.add_argument("--peer", type=Path, help="secondary config to run alongside (chaining)")
    r.add_argument("--stats-json")
    r.add_argument("--state-file")
    r.add_argument("--cas")
    r.add_argument("--las")
    r.add_argument("--id", default="slick0")
    r.add_argument("--identity", default="slick")
    r.add_argument("--packets", type=int, help="override synthetic source packet counts")
    r.add_argument("--duration", type=float, help="seconds to run (default: until drained)")
    r.add_argument("--clock", choices=["host", "nicptp"])
    r.add_argument("--no-timer-opt", action="store_true")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="throughput or latency benchmark")
    b.add_argument("--app", required=True)
    b.add_argument("--sizes", type=_sizes, default=[64, 128, 256, 512, 1024, 1518])
    b.add_argument("--duration", type=float, default=1.0)
    b.add_argument("--mode", choices=["throughput", "latency"], default="throughput")
    b.add_argument("--samples", type=int, default=2000)
    b.add_argument("--no-timer-opt", action="store_true")
    b.add_argument("--json", help="write JSON lines here instead of stdout")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("pktgen", help="generate synthetic frames")
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--rate", type=float, help="frames per second (default: unpaced)")
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--out", choices=["ring", "pcap"], default="pcap")
    g.add_argument("--file")
    g.add_argument("--ring", default="pktgen")
    g.add_argument("--ring-size", type=int, default=1024)
    g.add_argument("--seed", type=int, default=1)
    g.set_defaults(func=cmd_pktgen)

    c = sub.add_parser("cas", help="configuration and attestation service")
    c.add_argument("--listen", default="127.0.0.1:7700")
    c.add_argument("--store", default="cas-store.jsonl")
    c.add_argument("--admin", help="HTTP admin listen address")
    c.set_defaults(func=cmd_cas)

    la = sub.add_parser("las", help="local attestation service")
    la.add_argument("--listen", default="127.0.0.1:7701")
    la.add_argument("--cas", required=True)
    la.add_argument("--las-id", default="las0")
    la.set_defaults(func=cmd_las)

    m = sub.add_parser("measure", help="print the measurement of a config")
    m.add_argument("--config", type=Path)
    m.add_argument("--identity", default="slick")
    m.set_defaults(func=cmd_measure)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
