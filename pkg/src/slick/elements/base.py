from __future__ import annotations

import re
from collections import Counter
from typing import TYPE_CHECKING, Callable

if TYPE_CHECKING:
    from ..packet import PacketHandle
    from ..runtime import Instance, TimerEvent


class ElementInitError(Exception):
    def __init__(self, element: str, reason: str):
        super().__init__(f"{element}: {reason}")
        self.element = element
        self.reason = reason


class FatalElementError(Exception):
    """Raised from a data path when the instance must stop (not just drop)."""


REGISTRY: dict[str, type[Element]] = {}


def element_class(*names: str):
    def deco(cls):
        for n in names:
            if n in REGISTRY:
                raise ValueError(f"element class {n} registered twice")
            REGISTRY[n] = cls
        cls.class_name = names[0]
        return cls
    return deco


class Element:
    """An element: numbered push ports plus optional task, timers and handlers.

    Subclasses override ``configure`` (argument parsing), ``push`` and, for
    sources, ``run_task``.  Every packet received must be emitted or dropped.
    """

    class_name = "Element"
    ninputs = 1
    noutputs = 1
    optional: frozenset[int] = frozenset()
    task: bool | str = False
    has_state = False

    @classmethod
    def port_counts(cls, args: list[str]) -> tuple[int, int]:
        return cls.ninputs, cls.noutputs

    @classmethod
    def optional_outputs(cls, args: list[str]) -> frozenset[int]:
        return cls.optional

    @classmethod
    def is_task(cls, args: list[str], has_outputs: bool) -> bool:
        return cls.task is True or (cls.task == "if_output" and has_outputs)

    def __init__(self, name: str, args: list[str], instance: Instance):
        self.name = name
        self.instance = instance
        self.counters: Counter[str] = Counter()
        self.out: list[tuple[Element, int] | None] = []
        self.read_handlers: dict[str, Callable[[], str]] = {}
        self.write_handlers: dict[str, Callable[[str], object]] = {}
        self.configure(list(args))

    def configure(self, args: list[str]) -> None:
        if args:
            self.fail(f"takes no arguments, got {len(args)}")

    def initialize(self) -> None:
        pass

    def cleanup(self) -> None:
        pass

    def fail(self, reason: str):
        raise ElementInitError(self.name, reason)

    def push(self, port: int, pkt: PacketHandle) -> None:
        self.drop(pkt, "no_push")

    def emit(self, port: int, pkt: PacketHandle) -> None:
        t = self.out[port]
        if t is None:
            self.drop(pkt, "unconnected")
        else:
            t[0].push(t[1], pkt)

    def drop(self, pkt: PacketHandle, reason: str) -> None:
        pkt.pool.free(pkt)
        self.counters[reason] += 1
        self.instance.drops += 1

    def run_task(self, budget: int) -> int:
        return 0

    @property
    def exhausted(self) -> bool:
        """Sources report True once they will never produce again."""
        return True

    def run_timer(self, ev: TimerEvent) -> None:
        pass

    def state_write(self) -> bytes:
        raise NotImplementedError

    def state_read(self, data: bytes) -> None:
        raise NotImplementedError


_KEYWORD = re.compile(r"^([A-Z][A-Z0-9_]*)(?:\s+(.*))?$", re.S)


def split_keywords(args: list[str], keywords: set[str]) -> tuple[list[str], dict[str, list[str]]]:
    """Separate Click-style ``KEY value`` arguments from positional ones."""
    pos: list[str] = []
    kw: dict[str, list[str]] = {}
    for a in args:
        m = _KEYWORD.match(a)
        if m and m.group(1) in keywords:
            kw.setdefault(m.group(1), []).append((m.group(2) or "").strip())
        else:
            pos.append(a)
    return pos, kw


def unquote(s: str, raw: bool = False) -> str:
    """Strip one level of quotes; ``raw`` keeps backslashes except before the quote."""
    s = s.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        body = s[1:-1]
        if raw:
            return body.replace("\\" + s[0], s[0])
        return re.sub(r"\\(.)", r"\1", body)
    return s


_DURATION = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*(ns|us|ms|s|sec)?\s*$")
_UNITS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": 1_000_000_000, "sec": 1_000_000_000, None: 1_000_000_000}


def parse_duration_ns(text: str) -> int:
    m = _DURATION.match(text)
    if not m:
        raise ValueError(f"bad duration {text!r}")
    return int(round(float(m.group(1)) * _UNITS[m.group(2)]))


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"bad boolean {text!r}")
