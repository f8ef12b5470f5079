from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from conftest import assert_conserved, build
from oracles import gcm_oracle
from vectors import VECTORS
from slick.crypto import (REPLAY_WINDOW, SEAL_HDR, AuthError, MalformedSealed, ReplayError,
                          SAExhausted, SealError, SecurityAssociation, derive_seal_key,
                          gcm_decrypt, gcm_encrypt, seq_nonce)
from slick.elements.base import ElementInitError, FatalElementError
from slick.pktgen import synth_frames

SEAL = ("src :: FromTestDevice(d0); sink :: ToTestDevice(d0, RECORD true);"
        "s :: Seal(sa0); src -> ToEnclave -> s -> Unseal(sa0) -> sink;")
SECRETS = {"sa0": bytes(range(32))}


@pytest.mark.parametrize("name", sorted(VECTORS))
def test_known_answer_vectors(name):
    key, iv, pt, aad, ct, tag = VECTORS[name]
    assert gcm_encrypt(key, iv, pt, aad) == ct + tag
    assert gcm_decrypt(key, iv, ct + tag, aad) == pt


@pytest.mark.parametrize("name", sorted(VECTORS))
def test_reference_gcm_reproduces_vectors(name):
    key, iv, pt, aad, ct, tag = VECTORS[name]
    assert gcm_oracle(key, iv, pt, aad) == (ct, tag)


@given(st.binary(min_size=32, max_size=32), st.integers(1, 2 ** 40), st.binary(max_size=200))
def test_sealed_format_matches_reference(key, seq, frame):
    sa = SecurityAssociation("x", key, spi=0x1234, next_nonce=seq)
    sealed = sa.seal(frame)
    hdr = SEAL_HDR.pack(0x1234, seq)
    ct, tag = gcm_oracle(key, seq_nonce(seq), frame, hdr)
    assert sealed == hdr + ct + tag


def test_seq_nonce_layout():
    # 4 zero bytes followed by the big-endian 64-bit sequence number
    assert seq_nonce(0) == bytes(12)
    assert seq_nonce(0x0102) == bytes(10) + b"\x01\x02"


@given(st.lists(st.binary(max_size=1500), min_size=1, max_size=20))
def test_roundtrip_identity(frames):
    tx = SecurityAssociation("a", bytes(32))
    rx = SecurityAssociation("a", bytes(32))
    assert [rx.open(tx.seal(f)) for f in frames] == frames


def test_every_single_bit_flip_rejected():
    rng = random.Random(5)
    key = bytes(rng.getrandbits(8) for _ in range(32))
    tx = SecurityAssociation("flip", key)
    for _ in range(100):
        frame = bytes(rng.getrandbits(8) for _ in range(rng.randrange(0, 64)))
        sealed = tx.seal(frame)
        rx = SecurityAssociation("flip", key)
        for bit in range(len(sealed) * 8):
            bad = bytearray(sealed)
            bad[bit // 8] ^= 1 << (bit % 8)
            with pytest.raises(SealError):
                rx.open(bytes(bad))
        assert rx.open(sealed) == frame


def test_replay_window():
    tx = SecurityAssociation("r", bytes(32))
    rx = SecurityAssociation("r", bytes(32))
    sealed = [tx.seal(b"%d" % i) for i in range(200)]
    rx.open(sealed[5])
    with pytest.raises(ReplayError):
        rx.open(sealed[5])
    rx.open(sealed[3])                       # older but inside the window and unseen
    with pytest.raises(ReplayError):
        rx.open(sealed[3])
    rx.open(sealed[5 + REPLAY_WINDOW + 10])
    with pytest.raises(ReplayError):
        rx.open(sealed[4])                   # fell out of the window
    with pytest.raises(ReplayError):
        rx.open(SEAL_HDR.pack(rx.spi, 0) + bytes(16))


@given(st.lists(st.integers(1, 300), max_size=80))
def test_replay_window_model(seqs):
    """Each sequence number is accepted at most once; accepted ones are never too old."""
    key = bytes(32)
    rx = SecurityAssociation("m", key)
    accepted: set[int] = set()
    for s in seqs:
        data = SecurityAssociation("m", key, next_nonce=s).seal(b"p")
        highest = max(accepted, default=0)
        try:
            rx.open(data)
        except ReplayError:
            assert s in accepted or s <= highest - REPLAY_WINDOW
            continue
        assert s not in accepted and s > highest - REPLAY_WINDOW
        accepted.add(s)


def test_wrong_spi_and_runt_are_malformed():
    tx = SecurityAssociation("a", bytes(32))
    rx = SecurityAssociation("b", bytes(32))
    with pytest.raises(MalformedSealed):
        rx.open(tx.seal(b"x"))
    with pytest.raises(MalformedSealed):
        rx.open(b"short")
    with pytest.raises(AuthError):
        SecurityAssociation("a", bytes(range(32))).open(tx.seal(b"x"))


def test_sa_exhaustion():
    sa = SecurityAssociation("e", bytes(32), next_nonce=2 ** 64 - 1)
    sa.seal(b"last")
    with pytest.raises(SAExhausted):
        sa.seal(b"one too many")


def test_seal_unseal_graph_roundtrip_1000_frames():
    rng = random.Random(9)
    frames = [bytes(rng.getrandbits(8) for _ in range(rng.randrange(14, 1500)))
              for _ in range(1000)]
    inst = build(SEAL, secrets=SECRETS)
    inst.device("d0").inject(frames)
    inst.run()
    assert inst.device("d0").recorded == frames
    assert inst.read_handler("s.next_nonce") == "1001"
    assert_conserved(inst)


def test_seal_drops_untrusted_without_touching_key():
    inst = build("src :: FromTestDevice(d0); s :: Seal(sa0); src -> s -> Discard;",
                 secrets=SECRETS)
    sa = inst.security_associations["sa0"]
    inst.device("d0").inject(synth_frames(64, 20))
    inst.run()
    assert inst.elements["s"].counters["region_violation"] == 20
    assert sa.key_uses == 0 and sa.next_nonce == 1
    assert_conserved(inst)


def test_unseal_counts_bad_input():
    text = ("src :: FromTestDevice(d0); u :: Unseal(sa0);"
            "src -> ToEnclave -> u -> ToTestDevice(d0, RECORD true);")
    inst = build(text, secrets=SECRETS)
    tx = SecurityAssociation("sa0", SECRETS["sa0"])
    good = tx.seal(b"hello world....")
    tampered = bytearray(tx.seal(b"another frame.."))
    tampered[-1] ^= 1
    inst.device("d0").inject([good, good, bytes(tampered), b"runt"])
    inst.run()
    c = inst.elements["u"].counters
    assert (c["replay"], c["auth_fail"], c["malformed"]) == (1, 1, 1)
    assert inst.device("d0").recorded == [b"hello world...."]
    assert_conserved(inst)


def test_seal_exhaustion_is_fatal():
    inst = build(SEAL, secrets=SECRETS)
    inst.security_associations["sa0"].next_nonce = 2 ** 64
    inst.device("d0").inject(synth_frames(64, 1))
    with pytest.raises(FatalElementError):
        inst.run()


def test_plaintext_keys_refused():
    with pytest.raises(ElementInitError):
        build("s :: Seal(sa0, KEY 000102030405060708090a0b0c0d0e0f000102030405060708090a0b0c0d0e0f);"
              " s -> Discard;")
    with pytest.raises(ElementInitError):
        build("s :: Seal(sa0, KEY secret:missing); s -> Discard;")
    build("s :: Seal(sa0, KEY secret:k); s -> Discard;", secrets={"k": bytes(32)})


def test_conflicting_sa_definitions_fail():
    with pytest.raises(ElementInitError):
        build("a :: Seal(sa0, KEY secret:k1); b :: Unseal(sa0, KEY secret:k2);"
              "a -> b -> Discard;",
              secrets={"k1": bytes(32), "k2": bytes(range(32))})


@given(st.binary(min_size=32, max_size=32), st.text(max_size=10), st.text(max_size=10))
def test_derived_keys_are_bound_to_inputs(meas, p1, p2):
    k1 = derive_seal_key(meas, p1)
    assert len(k1) == 32 and k1 == derive_seal_key(meas, p1)
    if p1 != p2:
        assert k1 != derive_seal_key(meas, p2)
    assert k1 != derive_seal_key(bytes(32) if meas != bytes(32) else b"\x01" * 32, p1)
    assert k1 != derive_seal_key(meas, p1, secret=b"other platform")
