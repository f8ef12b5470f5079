from __future__ import annotations

import logging
import struct

import pytest
from hypothesis import given, strategies as st

from conftest import assert_conserved, build
from slick.elements.base import ElementInitError
from slick.packet import pack_word
from slick.pcap import PcapError, read_pcap, write_pcap
from slick.pktgen import paced, synth_frames
from slick.runtime import InstrumentedTestClock, StopCondition


@given(st.lists(st.binary(min_size=1, max_size=300), max_size=20))
def test_pcap_roundtrip(tmp_path_factory, frames):
    path = tmp_path_factory.mktemp("pcap") / "t.pcap"
    write_pcap(path, frames)
    assert read_pcap(path) == frames


def test_pcap_big_endian_and_errors(tmp_path):
    frames = [b"\x01" * 60, b"\x02" * 70]
    body = struct.pack(">IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    for f in frames:
        body += struct.pack(">IIII", 0, 0, len(f), len(f)) + f
    p = tmp_path / "be.pcap"
    p.write_bytes(body)
    assert read_pcap(p) == frames
    (tmp_path / "bad.pcap").write_bytes(b"nope")
    with pytest.raises(PcapError):
        read_pcap(tmp_path / "bad.pcap")
    p.write_bytes(body[:-5])
    with pytest.raises(PcapError):
        read_pcap(p)


def test_pcap_replay_in_order(tmp_path):
    frames = list(synth_frames(60 + 4, 3, seed=4))
    write_pcap(tmp_path / "three.pcap", frames)
    inst = build("src :: FromTestDevice(d0, PCAP three.pcap);"
                 "src -> ToTestDevice(d0, RECORD true);", base_dir=tmp_path)
    inst.run()
    assert inst.device("d0").recorded == frames
    assert inst.rx == inst.tx == 3


def test_missing_pcap_is_init_error(tmp_path):
    with pytest.raises(ElementInitError):
        build("src :: FromTestDevice(d0, PCAP nope.pcap); src -> Discard;", base_dir=tmp_path)


def test_synthetic_100k_frames_of_128_bytes():
    inst = build("src :: FromTestDevice(d0, SIZE 128, LIMIT 100000);"
                 "c :: Counter; src -> c -> ToTestDevice(d0);")
    inst.run()
    assert inst.rx == inst.tx == 100_000
    assert inst.read_handler("c.byte_count") == str(128 * 100_000)
    assert inst.device("d0").tx_bytes == 128 * 100_000
    assert_conserved(inst)


def test_synthetic_frames_deterministic():
    assert list(synth_frames(128, 50, seed=3)) == list(synth_frames(128, 50, seed=3))
    assert list(synth_frames(128, 50, seed=3)) != list(synth_frames(128, 50, seed=4))
    assert {len(f) for f in synth_frames(1518, 20)} == {1518}
    with pytest.raises(ValueError):
        list(synth_frames(20, 1))


def test_rate_limited_source_on_virtual_clock():
    clock = InstrumentedTestClock(tick_ns=10_000)          # 10 us per iteration
    inst = build("src :: FromTestDevice(d0, SIZE 64, RATE 100000); src -> Discard;",
                 clock=clock)
    inst.run(StopCondition(duration_ns=10_000_000))        # 10 ms
    assert 900 <= inst.rx <= 1100


def test_paced_generator_respects_rate():
    t = [0.0]
    sleeps = []

    def sleep(d):
        sleeps.append(d)
        t[0] += d

    out = list(paced(range(100), 1000.0, sleep=sleep, clock=lambda: t[0]))
    assert out == list(range(100))
    assert abs(t[0] - 0.099) < 1e-6


def test_forged_in_enclave_word_counted_and_logged(caplog):
    inst = build("src :: FromTestDevice(d0); src -> ToTestDevice(d0);")
    dev = inst.device("d0")
    b = inst.bounds
    words = [pack_word(b.base + 4096, 64), pack_word(b.end - 1, 1),
             pack_word(b.base - 64, 128), pack_word(0xDEAD0000, 64)]
    for w in words:
        assert dev.inject_word(w)
    dev.inject(synth_frames(64, 5))
    with caplog.at_level(logging.WARNING):
        inst.run()
    assert inst.read_handler("src.attacks") == "4"
    assert inst.rx == inst.tx == 5
    assert sum("rejected slot word" in r.message for r in caplog.records) == 4
    assert_conserved(inst)


def test_rx_pool_exhaustion_is_backpressure():
    inst = build("src :: FromTestDevice(d0, SIZE 64, LIMIT 2000); src -> ToTestDevice(d0);",
                 untrusted_capacity=8)
    inst.run()
    assert inst.rx == inst.tx == 2000
    assert inst.device("d0").rx_nobuf > 0


def test_source_argument_errors():
    with pytest.raises(ElementInitError):
        build("src :: FromTestDevice(d0, LIMIT 5); src -> Discard;")
    with pytest.raises(ElementInitError):
        build("src :: FromTestDevice(); src -> Discard;")
    with pytest.raises(ElementInitError):
        build("src :: FromTestDevice(d0); src -> ToTestDevice(d0, BURST 0);")
