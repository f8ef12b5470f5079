from __future__ import annotations

import os
import signal
import subprocess
import sys
import textwrap

import pytest
from hypothesis import given, strategies as st

from conftest import build
from slick.elements.base import Element, element_class
from slick.persist import (HEADER_LEN, AuthFailure, HandlerError, MissingFile, StateFileSpec,
                           StateIOError, VersionMismatch, decode_records, decrypt_blob,
                           encode_records, encrypt_blob, seal_state, unseal_state)
from slick.pktgen import synth_frames
from slick.runtime import InstrumentedTestClock, StopCondition


@element_class("BrokenState")
class BrokenState(Element):
    has_state = True
    noutputs = 0

    def configure(self, args):
        self.fail_write = False
        self.value = b"ok"

    def push(self, port, pkt):
        self.drop(pkt, "sink")

    def state_write(self):
        if self.fail_write:
            raise RuntimeError("cannot serialize")
        return self.value

    def state_read(self, data):
        if data == b"poison":
            raise ValueError("refused")
        self.value = data


def counting(path, extra="", period=""):
    return (f"src :: FromTestDevice(d0); c :: Counter; StateFile({path}{period});"
            f"src -> c -> Discard; {extra}")


def _count(inst) -> tuple[int, int]:
    c = inst.elements["c"]
    return c.count, c.byte_count


@given(st.lists(st.tuples(st.text(max_size=20), st.binary(max_size=100)), max_size=10))
def test_record_codec_roundtrip(records):
    assert decode_records(encode_records(records)) == records


def test_restart_restores_counter(tmp_path):
    path = tmp_path / "state.bin"
    a = build(counting(path))
    a.device("d0").inject(synth_frames(64, 5))
    a.run()
    a.write_handler("StateFile@3.persist")
    b = build(counting(path))                      # restart: state restored at init
    assert _count(b) == (5, 320)
    assert b.elements["c"].state_write() == a.elements["c"].state_write()


def test_kill_and_restart_in_fresh_process(tmp_path):
    path = tmp_path / "state.bin"
    script = textwrap.dedent(f"""
        import os, signal
        from slick.runtime import InstanceSettings, instantiate
        from slick.pktgen import synth_frames
        inst = instantiate({counting(str(path))!r}, InstanceSettings())
        inst.device("d0").inject(synth_frames(64, 5))
        inst.run()
        inst.write_handler("StateFile@3.persist")
        os.kill(os.getpid(), signal.SIGKILL)
    """)
    proc = subprocess.run([sys.executable, "-c", script], capture_output=True)
    assert proc.returncode == -signal.SIGKILL, proc.stderr.decode()
    check = textwrap.dedent(f"""
        from slick.runtime import InstanceSettings, instantiate
        inst = instantiate({counting(str(path))!r}, InstanceSettings())
        print(inst.read_handler("c.count"), inst.read_handler("c.byte_count"))
    """)
    out = subprocess.run([sys.executable, "-c", check], capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["5", "320"]


def test_every_flipped_byte_is_auth_failure_without_restore(tmp_path):
    path = tmp_path / "state.bin"
    a = build(counting(path))
    a.device("d0").inject(synth_frames(64, 5))
    a.run()
    a.write_handler("StateFile@3.persist")
    good = path.read_bytes()
    b = build(counting(tmp_path / "other.bin"))
    spec = b.persist_specs[0]
    spec.path = path
    for i in range(len(good)):
        bad = bytearray(good)
        bad[i] ^= 0x01
        path.write_bytes(bad)
        with pytest.raises(AuthFailure):
            unseal_state(b, spec)
        assert _count(b) == (0, 0)
    path.write_bytes(good[:-1])
    with pytest.raises(AuthFailure):
        unseal_state(b, spec)
    path.write_bytes(good)
    assert unseal_state(b, spec) == 1 and _count(b) == (5, 320)


def test_corrupt_file_fails_startup(tmp_path):
    path = tmp_path / "state.bin"
    a = build(counting(path))
    a.write_handler("StateFile@3.persist")
    data = bytearray(path.read_bytes())
    data[-3] ^= 0x80
    path.write_bytes(data)
    with pytest.raises(AuthFailure):
        build(counting(path))


def test_version_mismatch_is_auth_failure():
    key = bytes(32)
    blob = bytearray(encrypt_blob(key, b"x"))
    blob[4] = 9
    with pytest.raises(VersionMismatch):
        decrypt_blob(key, bytes(blob))
    assert issubclass(VersionMismatch, AuthFailure)


def test_wrong_key_is_auth_failure():
    with pytest.raises(AuthFailure):
        decrypt_blob(bytes(range(32)), encrypt_blob(bytes(32), b"state"))


def test_plaintext_never_on_disk(tmp_path):
    path = tmp_path / "state.bin"
    inst = build(f"src :: FromTestDevice(d0); distinctive_counter_name :: Counter;"
                 f"StateFile({path}); src -> distinctive_counter_name -> Discard;")
    e = inst.elements["distinctive_counter_name"]
    e.count, e.byte_count = 0x1122334455667788, 0x0102030405060708
    inst.write_handler("StateFile@3.persist")
    data = path.read_bytes()
    assert e.state_write() not in data
    assert b"distinctive_counter_name" not in data
    assert (0x1122334455667788).to_bytes(8, "little") not in data
    spec = inst.persist_specs[0]
    assert spec._stage is not None and not any(spec._stage)   # staging zeroed


def test_fresh_nonce_per_seal(tmp_path):
    path = tmp_path / "state.bin"
    inst = build(counting(path))
    inst.write_handler("StateFile@3.persist")
    first = path.read_bytes()
    inst.write_handler("StateFile@3.persist")
    second = path.read_bytes()
    assert first[6:HEADER_LEN] != second[6:HEADER_LEN] and first != second


def test_handler_error_keeps_previous_file(tmp_path):
    path = tmp_path / "state.bin"
    inst = build(counting(path, "b :: BrokenState; src2 :: FromTestDevice(d1); src2 -> b;"))
    inst.write_handler("StateFile@3.persist")
    before = path.read_bytes()
    inst.elements["b"].fail_write = True
    with pytest.raises(HandlerError) as ei:
        inst.write_handler("StateFile@3.persist")
    assert ei.value.element == "b"
    assert path.read_bytes() == before


def test_restore_failure_rolls_back(tmp_path):
    text = counting(tmp_path / "s.bin", "b :: BrokenState; src2 :: FromTestDevice(d1); src2 -> b;")
    inst = build(text)
    spec = inst.persist_specs[0]
    inst.elements["c"].count = 42
    inst.elements["b"].value = b"poison"
    seal_state(inst, spec)
    inst.elements["c"].count = 7
    inst.elements["b"].value = b"fine"
    with pytest.raises(HandlerError):
        unseal_state(inst, spec)
    assert inst.elements["c"].count == 7 and inst.elements["b"].value == b"fine"


def test_crash_during_replace_keeps_old_file(tmp_path, monkeypatch):
    path = tmp_path / "state.bin"
    inst = build(counting(path))
    inst.write_handler("StateFile@3.persist")
    before = path.read_bytes()
    inst.elements["c"].count = 99

    def crash(src, dst):
        raise OSError("simulated power loss")

    monkeypatch.setattr(os, "replace", crash)
    with pytest.raises(StateIOError):
        inst.write_handler("StateFile@3.persist")
    assert path.read_bytes() == before


def test_periodic_persistence_on_virtual_time(tmp_path):
    clock = InstrumentedTestClock(tick_ns=1_000_000)
    inst = build(counting(tmp_path / "p.bin", period=", PERIOD 10ms"), clock=clock)
    inst.run(StopCondition(duration_ns=50_000_000))
    assert 4 <= int(inst.read_handler("StateFile@3.seals")) <= 6


def test_no_period_means_no_timer(tmp_path):
    inst = build(counting(tmp_path / "p.bin"))
    assert inst.persist_specs[0].timer is None
    assert inst.timers.periodic_count() == 0


def test_unknown_element_record_is_skipped(tmp_path, caplog):
    path = tmp_path / "s.bin"
    key = bytes(range(32))
    path.write_bytes(encrypt_blob(key, encode_records([("ghost", b"zz"),
                                                       ("c", (3).to_bytes(8, "little") * 2)])))
    inst = build(counting(path, period="").replace(f"StateFile({path})",
                                                   f"StateFile({path}, KEY secret:sk)"),
                 secrets={"sk": key})
    assert inst.elements["c"].count == 3
    assert "ghost" in caplog.text


def test_missing_file_is_not_fatal_at_startup(tmp_path):
    inst = build(counting(tmp_path / "absent.bin"))
    with pytest.raises(MissingFile):
        unseal_state(inst, inst.persist_specs[0])


def test_state_key_must_be_32_bytes(tmp_path):
    with pytest.raises(ValueError):
        StateFileSpec(tmp_path / "x", b"short")
