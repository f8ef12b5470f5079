"""Multi-pattern payload matching (the HyperScan-style IDS element).

Each regex contributes its longest mandatory literal run to a shared
prefilter.  One pass of the prefilter over the payload yields the set of
literals present; only patterns whose literal was seen (or that have no
usable literal) are confirmed with their own regex.
"""

from __future__ import annotations

import re
from pathlib import Path

try:
    from re import _constants as _sre_c, _parser as _sre_parse
except ImportError:  # Python < 3.11
    import sre_constants as _sre_c
    import sre_parse as _sre_parse

from ..netutil import l4_payload_span
from .base import Element, element_class, split_keywords, unquote


def required_literal(pattern: bytes) -> bytes:
    """Longest run of literal bytes every match of ``pattern`` must contain."""
    parsed = _sre_parse.parse(pattern)
    if parsed.state.flags & (_sre_c.SRE_FLAG_IGNORECASE | _sre_c.SRE_FLAG_VERBOSE):
        return b""
    best = b""
    run = bytearray()

    def walk(seq):
        nonlocal best, run
        for op, av in seq:
            if op is _sre_c.LITERAL:
                run.append(av)
                continue
            if op is _sre_c.SUBPATTERN and not (av[1] or av[2]):
                # plain group (no inline flag changes): its body is mandatory
                walk(av[3])
                continue
            if len(run) > len(best):
                best = bytes(run)
            run = bytearray()

    walk(parsed)
    if len(run) > len(best):
        best = bytes(run)
    return best


class MultiPatternMatcher:
    def __init__(self, patterns: list[bytes]):
        self.patterns = list(patterns)
        self.regexes = [re.compile(p) for p in self.patterns]
        self.literals = [required_literal(p) for p in self.patterns]
        self.always = [i for i, lit in enumerate(self.literals) if not lit]
        by_lit: dict[bytes, list[int]] = {}
        for i, lit in enumerate(self.literals):
            if lit:
                by_lit.setdefault(lit, []).append(i)
        self._by_lit = by_lit
        lits = sorted(by_lit, key=len, reverse=True)
        # a literal found at some position implies every literal that is its prefix
        self._implied = {a: [b for b in lits if a.startswith(b)] for a in lits}
        self._scan = (re.compile(b"(?=(" + b"|".join(re.escape(x) for x in lits) + b"))")
                      if lits else None)

    def __len__(self):
        return len(self.patterns)

    def candidates(self, data) -> list[int]:
        found: set[bytes] = set()
        if self._scan is not None:
            implied = self._implied
            for m in self._scan.finditer(data):
                lit = m.group(1)
                if lit not in found:
                    found.update(implied[lit])
        cand = list(self.always)
        for lit in found:
            cand.extend(self._by_lit[lit])
        cand.sort()
        return cand

    def match(self, data) -> list[int]:
        """Indices of every pattern with at least one match in ``data``."""
        regexes = self.regexes
        return [i for i in self.candidates(data) if regexes[i].search(data)]


def load_patterns(text: str) -> list[bytes]:
    out = []
    for line in text.splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            out.append(line.rstrip("\r\n").encode("latin-1"))
    return out


@element_class("PatternMatch", "HyperScan")
class PatternMatch(Element):
    """Port 0: no pattern matched; port 1: at least one matched.

    ``PatternMatch(PATTERNFILE)`` reads one regex per line;
    ``PATTERN "regex"`` adds patterns inline.
    """

    noutputs = 2

    def configure(self, args):
        pos, kw = split_keywords(args, {"FILE", "PATTERN"})
        patterns: list[bytes] = []
        try:
            for f in pos + kw.get("FILE", []):
                path = Path(unquote(f))
                if not path.is_absolute():
                    path = self.instance.base_dir / path
                patterns += load_patterns(path.read_text(encoding="latin-1"))
            patterns += [unquote(p, raw=True).encode("latin-1") for p in kw.get("PATTERN", [])]
        except OSError as exc:
            self.fail(str(exc))
        if not patterns:
            self.fail("no patterns given")
        try:
            self.matcher = MultiPatternMatcher(patterns)
        except re.error as exc:
            self.fail(f"invalid pattern: {exc}")
        self.hits = [0] * len(patterns)
        self.read_handlers["hits"] = lambda: " ".join(map(str, self.hits))

    def push(self, port, pkt):
        b = pkt.buf
        start, end = l4_payload_span(b, pkt.off, pkt.len)
        if start >= end:
            self.emit(0, pkt)
            return
        matched = self.matcher.match(bytes(b[start:end]))
        if matched:
            for i in matched:
                self.hits[i] += 1
            self.counters["matched"] += 1
            self.emit(1, pkt)
        else:
            self.emit(0, pkt)
