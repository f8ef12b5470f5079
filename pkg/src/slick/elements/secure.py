"""Enclave-side elements: ToEnclave, Seal, Unseal and StateFile."""

from __future__ import annotations

import logging
from pathlib import Path

from ..crypto import (KEY_LEN, SEAL_HDR, TAG_LEN, AuthError, MalformedSealed, ReplayError,
                      SAExhausted, SecurityAssociation)
from ..packet import OversizeRequest, PoolExhausted, RegionTag, copy_to_trusted
from .base import (Element, FatalElementError, element_class, parse_duration_ns, split_keywords,
                   unquote)

log = logging.getLogger(__name__)

_HDR = SEAL_HDR.size


def resolve_key(elem: Element, spec: str | None, default_purpose: str) -> bytes:
    """Key material for an element.

    ``KEY secret:NAME`` names a provisioned secret.  Without ``KEY`` a
    provisioned secret called ``default_purpose`` is used if present, and
    otherwise a sealing key derived inside the enclave.  Literal key bytes
    in the configuration are refused: the configuration is not secret.
    """
    inst = elem.instance
    if spec is None:
        key = inst.secret(default_purpose)
        return key if key is not None else inst.seal_key(default_purpose)
    spec = unquote(spec)
    kind, sep, name = spec.partition(":")
    if not sep or kind != "secret" or not name:
        elem.fail("KEY must name a provisioned secret as 'secret:NAME'; "
                  "key bytes are never accepted from the configuration")
    key = inst.secret(name)
    if key is None:
        elem.fail(f"secret {name!r} was not provisioned")
    if len(key) != KEY_LEN:
        elem.fail(f"secret {name!r} must be {KEY_LEN} bytes, got {len(key)}")
    return key


@element_class("ToEnclave")
class ToEnclave(Element):
    """Copies an untrusted packet into the trusted pool and frees the original."""

    def push(self, port, pkt):
        if pkt.region is RegionTag.TRUSTED:
            self.counters["already_trusted"] += 1
            self.emit(0, pkt)
            return
        try:
            t = copy_to_trusted(pkt, self.instance.trusted)
        except (PoolExhausted, OversizeRequest):
            # copy_to_trusted has already released the source buffer
            self.counters["trusted_pool_exhausted"] += 1
            self.instance.drops += 1
            return
        self.emit(0, t)


class _SAElement(Element):
    def configure(self, args):
        pos, kw = split_keywords(args, {"KEY", "SPI"})
        if len(pos) != 1:
            self.fail("expects one security association name")
        name = unquote(pos[0])
        key = resolve_key(self, kw.get("KEY", [None])[-1], name)
        spi = None
        if "SPI" in kw:
            try:
                spi = int(kw["SPI"][-1], 0)
            except ValueError:
                self.fail("SPI must be an integer")
            if not 0 <= spi <= 0xFFFFFFFF:
                self.fail("SPI must fit in 32 bits")
        sas = self.instance.security_associations
        sa = sas.get(name)
        if sa is None:
            sa = sas[name] = SecurityAssociation(name, key, spi)
        elif not sa.same_key(key) or (spi is not None and spi != sa.spi):
            self.fail(f"conflicting definitions of security association {name!r}")
        self.sa = sa
        self.read_handlers.update(next_nonce=lambda: str(self.sa.next_nonce))


@element_class("Seal")
class Seal(_SAElement):
    """AES-256-GCM encapsulation; trusted packets only."""

    def push(self, port, pkt):
        if pkt.region is not RegionTag.TRUSTED:
            # never let key material near an untrusted buffer
            self.drop(pkt, "region_violation")
            return
        b, o, n = pkt.buf, pkt.off, pkt.len
        if o < _HDR or o + n + TAG_LEN > len(b):
            self.drop(pkt, "no_room")
            return
        try:
            sealed = self.sa.seal(bytes(b[o:o + n]))
        except SAExhausted as exc:
            pkt.pool.free(pkt)
            self.instance.drops += 1
            raise FatalElementError(str(exc)) from exc
        o -= _HDR
        b[o:o + len(sealed)] = sealed
        pkt.off = o
        pkt.len = len(sealed)
        self.emit(0, pkt)


@element_class("Unseal")
class Unseal(_SAElement):
    """Verifies and strips the sealing; bad tags, replays and runts are dropped."""

    def push(self, port, pkt):
        if pkt.region is not RegionTag.TRUSTED:
            self.drop(pkt, "region_violation")
            return
        b, o, n = pkt.buf, pkt.off, pkt.len
        try:
            pt = self.sa.open(bytes(b[o:o + n]))
        except MalformedSealed:
            self.drop(pkt, "malformed")
            return
        except ReplayError:
            self.drop(pkt, "replay")
            return
        except AuthError:
            self.drop(pkt, "auth_fail")
            return
        o += _HDR
        b[o:o + len(pt)] = pt
        pkt.off = o
        pkt.len = len(pt)
        self.emit(0, pkt)


@element_class("StateFile")
class StateFile(Element):
    """``StateFile(PATH p [, KEY secret:NAME] [, PERIOD 10ms])``.

    Restores element state once the graph is initialized and, with
    ``PERIOD``, persists it periodically.  Write handlers ``persist`` and
    ``restore`` trigger either step by hand.
    """

    ninputs = 0
    noutputs = 0

    def configure(self, args):
        from ..persist import StateFileSpec, seal_state, unseal_state
        pos, kw = split_keywords(args, {"PATH", "KEY", "PERIOD"})
        paths = pos + kw.get("PATH", [])
        if len(paths) != 1:
            self.fail("expects exactly one PATH")
        path = Path(unquote(paths[0]))
        if not path.is_absolute():
            path = self.instance.base_dir / path
        key = resolve_key(self, kw.get("KEY", [None])[-1], "statefile")
        period = None
        if "PERIOD" in kw:
            try:
                period = parse_duration_ns(kw["PERIOD"][-1])
            except ValueError as exc:
                self.fail(str(exc))
            if period <= 0:
                self.fail("PERIOD must be positive")
        self.spec = StateFileSpec(path, key, period)
        self.instance.persist_specs.append(self.spec)
        self.write_handlers.update(
            persist=lambda _v="": seal_state(self.instance, self.spec),
            restore=lambda _v="": unseal_state(self.instance, self.spec))
        self.read_handlers.update(seals=lambda: str(self.spec.seals))
