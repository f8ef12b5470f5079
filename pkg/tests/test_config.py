from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from slick.config import (ConfigGraph, Connection, DanglingMandatoryPort, DuplicatePortUse,
                          ElementDecl, ParseError, PortOutOfRange, UnknownClass, canonicalize,
                          format_config, parse_config, split_args)
from slick.runtime import load_graph

names = st.from_regex(r"[a-z_][a-z0-9_]{0,8}", fullmatch=True)
classes = st.from_regex(r"[A-Z][A-Za-z0-9]{0,8}", fullmatch=True)
plain_arg = st.from_regex(r"[A-Za-z0-9._][A-Za-z0-9 ._-]{0,12}[A-Za-z0-9._]", fullmatch=True)
quoted_arg = st.from_regex(r'"[A-Za-z0-9 ,()]{0,10}"', fullmatch=True)
args = st.lists(st.one_of(plain_arg, quoted_arg), max_size=4)


@st.composite
def graphs(draw):
    ns = draw(st.lists(names, min_size=1, max_size=6, unique=True))
    decls = [ElementDecl(n, draw(classes), draw(args)) for n in ns]
    conns = draw(st.lists(st.builds(Connection, st.sampled_from(ns), st.integers(0, 5),
                                    st.sampled_from(ns), st.integers(0, 5)), max_size=8))
    return ConfigGraph(decls, conns)


@given(graphs())
def test_format_parse_roundtrip(g):
    assert parse_config(format_config(g)) == g


@given(graphs())
def test_canonicalize_idempotent(g):
    text = format_config(g)
    assert canonicalize(canonicalize(text)) == canonicalize(text)


def test_chain_declaration_and_ports():
    g = parse_config("""
        // comment
        src :: FromTestDevice(d0, SIZE 64) -> c :: Counter;
        c [0] -> [0] sink :: Discard; /* trailing */
    """)
    assert [d.name for d in g.decls] == ["src", "c", "sink"]
    assert g.decl("src").args == ["d0", "SIZE 64"]
    assert [(c.src, c.src_port, c.dst, c.dst_port) for c in g.connections] == [
        ("src", 0, "c", 0), ("c", 0, "sink", 0)]


def test_anonymous_elements_get_unique_names():
    g = parse_config("a :: Wire; a -> Discard; b :: Wire; b -> Discard;")
    anon = [d for d in g.decls if d.cls == "Discard"]
    assert len(anon) == 2 and anon[0].name != anon[1].name


def test_split_args_respects_quotes_and_parens():
    assert split_args('a, "b, c", f(x, y), \'d\\\'e\'') == ["a", '"b, c"', "f(x, y)", "'d\\'e'"]
    assert split_args("") == []


@pytest.mark.parametrize("text, line, col", [
    ("a :: Wire\nb :: Wire;", 2, 1),
    ("a :: Wire;\n  a -> ;", 2, 8),
    ("a :: Wire;\na -> nope;", 2, 6),
    ("a :: Wire(;\n", 1, 10),
    ("a :: Wire;\na :: Wire;", 2, 1),
    ("a :: Wire; a [99999] -> a;", 1, 15),
])
def test_parse_errors_are_positioned(text, line, col):
    with pytest.raises(ParseError) as ei:
        parse_config(text)
    assert (ei.value.line, ei.value.col) == (line, col)


def test_validation_errors():
    with pytest.raises(UnknownClass):
        load_graph("a :: NoSuchThing;")
    with pytest.raises(PortOutOfRange):
        load_graph("a :: Wire; b :: Discard; a [3] -> b;")
    with pytest.raises(DuplicatePortUse):
        load_graph("a :: Wire; b :: Discard; c :: Discard; a -> b; a -> c;")
    with pytest.raises(DanglingMandatoryPort):
        load_graph("src :: FromTestDevice(d0); src -> Wire;")


def test_multiple_feeders_allowed():
    cg = load_graph("a :: FromTestDevice(d0); b :: FromTestDevice(d1); w :: Wire;"
                    "a -> w; b -> w; w -> Discard;")
    assert len(cg.inputs["w"][0]) == 2
