"""Parser and validator for the Click-subset configuration language.

Supported forms::

    name :: Class(arg, arg);            // declaration
    a [1] -> [0] b -> c;                /* connection chain */
    src :: FromTestDevice(eth0) -> Discard_it;

Ports default to 0.  Argument strings are kept verbatim (quotes included)
and split on top-level commas only.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class ConfigError(Exception):
    pass


class ParseError(ConfigError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class UnknownClass(ConfigError):
    pass


class PortOutOfRange(ConfigError):
    pass


class DuplicatePortUse(ConfigError):
    pass


class DanglingMandatoryPort(ConfigError):
    pass


@dataclass
class ElementDecl:
    name: str
    cls: str
    args: list[str] = field(default_factory=list)
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass
class Connection:
    src: str
    src_port: int
    dst: str
    dst_port: int
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass
class ConfigGraph:
    decls: list[ElementDecl] = field(default_factory=list)
    connections: list[Connection] = field(default_factory=list)

    def decl(self, name: str) -> ElementDecl:
        for d in self.decls:
            if d.name == name:
                return d
        raise KeyError(name)


def _is_ident_start(c: str) -> bool:
    return c.isalpha() or c == "_"


def _is_ident_char(c: str) -> bool:
    return c.isalnum() or c in "_@"


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.i = 0
        self.line = 1
        self.col = 1

    def _advance(self, n: int = 1) -> None:
        for _ in range(n):
            if self.i >= len(self.text):
                return
            if self.text[self.i] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.i += 1

    def skip_ws(self) -> None:
        t = self.text
        while self.i < len(t):
            c = t[self.i]
            if c.isspace():
                self._advance()
            elif t.startswith("//", self.i):
                while self.i < len(t) and t[self.i] != "\n":
                    self._advance()
            elif t.startswith("/*", self.i):
                line, col = self.line, self.col
                end = t.find("*/", self.i + 2)
                if end < 0:
                    raise ParseError("unterminated comment", line, col)
                self._advance(end + 2 - self.i)
            else:
                return

    def peek(self) -> tuple[str, str, int, int]:
        """Next token as (kind, value, line, col) without consuming it."""
        self.skip_ws()
        if self.i >= len(self.text):
            return "eof", "", self.line, self.col
        t, i = self.text, self.i
        c = t[i]
        if t.startswith("::", i):
            return "::", "::", self.line, self.col
        if t.startswith("->", i):
            return "->", "->", self.line, self.col
        if c in "[];(":
            return c, c, self.line, self.col
        if _is_ident_start(c):
            j = i + 1
            while j < len(t) and _is_ident_char(t[j]):
                j += 1
            return "ident", t[i:j], self.line, self.col
        if c.isdigit():
            j = i + 1
            while j < len(t) and t[j].isdigit():
                j += 1
            return "number", t[i:j], self.line, self.col
        return "char", c, self.line, self.col

    def next(self) -> tuple[str, str, int, int]:
        tok = self.peek()
        self._advance(len(tok[1]))
        return tok

    def expect(self, kind: str, what: str) -> tuple[str, str, int, int]:
        tok = self.peek()
        if tok[0] != kind:
            found = "end of input" if tok[0] == "eof" else repr(tok[1])
            raise ParseError(f"expected {what}, found {found}", tok[2], tok[3])
        return self.next()

    def raw_args(self) -> str:
        """Consume ``( ... )`` and return the inside, comments removed."""
        line, col = self.line, self.col
        self._advance()  # '('
        t = self.text
        out = []
        depth = 0
        quote = None
        while True:
            if self.i >= len(t):
                raise ParseError("unterminated argument list", line, col)
            c = t[self.i]
            if quote:
                out.append(c)
                if c == "\\" and self.i + 1 < len(t):
                    out.append(t[self.i + 1])
                    self._advance(2)
                    continue
                if c == quote:
                    quote = None
                self._advance()
                continue
            if c in "\"'":
                quote = c
            elif t.startswith("//", self.i) or t.startswith("/*", self.i):
                self.skip_ws()
                out.append(" ")
                continue
            elif c == "(":
                depth += 1
            elif c == ")":
                if depth == 0:
                    self._advance()
                    return "".join(out)
                depth -= 1
            out.append(c)
            self._advance()


def split_args(raw: str) -> list[str]:
    """Split on commas outside quotes and parentheses; strip each piece."""
    args, cur = [], []
    depth = 0
    quote = None
    i = 0
    while i < len(raw):
        c = raw[i]
        if quote:
            cur.append(c)
            if c == "\\" and i + 1 < len(raw):
                cur.append(raw[i + 1])
                i += 2
                continue
            if c == quote:
                quote = None
        elif c in "\"'":
            quote = c
            cur.append(c)
        elif c == "(":
            depth += 1
            cur.append(c)
        elif c == ")":
            depth -= 1
            cur.append(c)
        elif c == "," and depth == 0:
            args.append("".join(cur).strip())
            cur = []
        else:
            cur.append(c)
        i += 1
    last = "".join(cur).strip()
    if args or last:
        args.append(last)
    return args


def parse_config(text: str) -> ConfigGraph:
    lx = _Lexer(text)
    g = ConfigGraph()
    declared: dict[str, ElementDecl] = {}
    refs: list[tuple[str, int, int]] = []

    def endpoint():
        in_port = None
        tok = lx.peek()
        if tok[0] == "[":
            in_port = port()
        kind, name, line, col = lx.expect("ident", "element name")
        if lx.peek()[0] == "::":
            lx.next()
            _, cls, cline, ccol = lx.expect("ident", "element class")
            args: list[str] = []
            if lx.peek()[0] == "(":
                args = split_args(lx.raw_args())
            if name in declared:
                raise ParseError(f"element '{name}' declared twice", line, col)
            d = ElementDecl(name, cls, args, line, col)
            declared[name] = d
            g.decls.append(d)
            is_decl = True
        elif lx.peek()[0] == "(" or (name not in declared and name[0].isupper()):
            # anonymous element: ``-> Discard`` or ``-> Counter()``
            args = split_args(lx.raw_args()) if lx.peek()[0] == "(" else []
            cls = name
            name = f"{cls}@{len(g.decls) + 1}"
            d = ElementDecl(name, cls, args, line, col)
            declared[name] = d
            g.decls.append(d)
            is_decl = True
        else:
            refs.append((name, line, col))
            is_decl = False
        out_port = None
        if lx.peek()[0] == "[":
            out_port = port()
        return name, in_port, out_port, is_decl, line, col

    def port() -> int:
        lx.next()
        _, num, line, col = lx.expect("number", "port number")
        if int(num) > 0xFFFF:
            raise ParseError(f"port {num} out of range", line, col)
        lx.expect("]", "']'")
        return int(num)

    while True:
        tok = lx.peek()
        if tok[0] == "eof":
            break
        if tok[0] == ";":
            lx.next()
            continue
        chain = [endpoint()]
        while lx.peek()[0] == "->":
            lx.next()
            chain.append(endpoint())
        if len(chain) == 1:
            name, in_port, out_port, is_decl, line, col = chain[0]
            if not is_decl:
                nxt = lx.peek()
                raise ParseError(f"expected '::' or '->' after '{name}'", nxt[2], nxt[3])
            if in_port is not None or out_port is not None:
                raise ParseError("port on an unconnected declaration", line, col)
        else:
            if chain[0][1] is not None:
                raise ParseError("input port before the first element of a chain",
                                 chain[0][4], chain[0][5])
            if chain[-1][2] is not None:
                raise ParseError("output port after the last element of a chain",
                                 chain[-1][4], chain[-1][5])
            for a, b in zip(chain, chain[1:]):
                g.connections.append(Connection(a[0], a[2] or 0, b[0], b[1] or 0, b[4], b[5]))
        end = lx.peek()
        if end[0] == ";":
            lx.next()
        elif end[0] != "eof":
            found = repr(end[1])
            raise ParseError(f"expected ';' or '->', found {found}", end[2], end[3])

    for name, line, col in refs:
        if name not in declared:
            raise ParseError(f"undeclared element '{name}'", line, col)
    return g


def format_config(g: ConfigGraph) -> str:
    """Canonical text for a graph; ``parse_config(format_config(g)) == g``."""
    lines = [f"{d.name} :: {d.cls}({', '.join(d.args)});" for d in g.decls]
    for c in g.connections:
        lines.append(f"{c.src} [{c.src_port}] -> [{c.dst_port}] {c.dst};")
    return "\n".join(lines) + ("\n" if lines else "")


def canonicalize(text: str) -> str:
    """Normalised config text used for measurement; unparsable text is kept stripped."""
    try:
        return format_config(parse_config(text))
    except ParseError:
        return text.strip()


@dataclass
class CheckedGraph:
    graph: ConfigGraph
    ports: dict[str, tuple[int, int]]
    outputs: dict[str, dict[int, tuple[str, int]]]
    inputs: dict[str, dict[int, list[tuple[str, int]]]]
    tasks: list[str]
    sources: list[str]

    @property
    def decls(self) -> list[ElementDecl]:
        return self.graph.decls


def validate_graph(g: ConfigGraph, registry) -> CheckedGraph:
    """Check classes and port usage against ``registry`` (name -> element class)."""
    ports: dict[str, tuple[int, int]] = {}
    classes = {}
    for d in g.decls:
        cls = registry.get(d.cls)
        if cls is None:
            raise UnknownClass(f"line {d.line}: unknown element class '{d.cls}' for '{d.name}'")
        classes[d.name] = cls
        ports[d.name] = cls.port_counts(d.args)

    outputs: dict[str, dict[int, tuple[str, int]]] = {d.name: {} for d in g.decls}
    # push inputs may be fed by several outputs; each output has exactly one peer
    inputs: dict[str, dict[int, list[tuple[str, int]]]] = {d.name: {} for d in g.decls}
    for c in g.connections:
        nout = ports[c.src][1]
        nin = ports[c.dst][0]
        if c.src_port >= nout:
            raise PortOutOfRange(
                f"line {c.line}: '{c.src}' has {nout} output(s), port {c.src_port} used")
        if c.dst_port >= nin:
            raise PortOutOfRange(
                f"line {c.line}: '{c.dst}' has {nin} input(s), port {c.dst_port} used")
        if c.src_port in outputs[c.src]:
            raise DuplicatePortUse(f"line {c.line}: output {c.src_port} of '{c.src}' used twice")
        outputs[c.src][c.src_port] = (c.dst, c.dst_port)
        inputs[c.dst].setdefault(c.dst_port, []).append((c.src, c.src_port))

    tasks, sources = [], []
    for d in g.decls:
        cls = classes[d.name]
        optional = cls.optional_outputs(d.args)
        for p in range(ports[d.name][1]):
            if p not in outputs[d.name] and p not in optional:
                raise DanglingMandatoryPort(
                    f"line {d.line}: output {p} of '{d.name}' ({d.cls}) is not connected")
        if cls.is_task(d.args, bool(outputs[d.name])):
            tasks.append(d.name)
            if not inputs[d.name]:
                sources.append(d.name)
    return CheckedGraph(g, ports, outputs, inputs, tasks, sources)
