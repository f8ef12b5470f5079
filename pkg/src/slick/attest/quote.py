"""Measurements, simulated quotes and the shared protocol vocabulary."""

from __future__ import annotations

import enum
import hashlib
import hmac
from dataclasses import dataclass, field

from ..config import canonicalize
from ..crypto import hw_secret
from .codec import ProtocolError, check, message

QUOTE_NONCE_LEN = 16
MAC_LEN = 32
LAS_IDENTITY = "slick-las"


def measure(identity: str, config_text: str = "") -> bytes:
    """Digest of the code identity and the canonical form of its configuration."""
    h = hashlib.sha256()
    h.update(identity.encode())
    h.update(b"\x00")
    h.update(canonicalize(config_text).encode())
    return h.digest()


LAS_MEASUREMENT = measure(LAS_IDENTITY)


class RejectReason(str, enum.Enum):
    BAD_MAC = "BadMac"
    STALE_NONCE = "StaleNonce"
    SGX_FLAG_FALSE = "SgxFlagFalse"
    UNKNOWN_MEASUREMENT = "UnknownMeasurement"
    UNATTESTED_LAS = "UnattestedLas"
    PROTOCOL = "ProtocolError"


class AttestationError(Exception):
    pass


class AttestationRejected(AttestationError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"attestation rejected: {reason}" + (f" ({detail})" if detail else ""))
        self.reason = reason
        self.detail = detail


class ConnectFailure(AttestationError):
    pass


def quote_mac(hw_key: bytes, measurement: bytes, nonce: bytes, sgx_flag: bool) -> bytes:
    return hmac.new(hw_key, b"slick quote\x00" + measurement + nonce + bytes([sgx_flag]),
                    hashlib.sha256).digest()


@dataclass(frozen=True)
class AttestationQuote:
    measurement: bytes
    nonce: bytes
    sgx_flag: bool
    mac: bytes
    las_id: str = ""

    @classmethod
    def issue(cls, hw_key: bytes, measurement: bytes, nonce: bytes, sgx_flag: bool,
              las_id: str = "") -> AttestationQuote:
        return cls(measurement, nonce, sgx_flag, quote_mac(hw_key, measurement, nonce, sgx_flag),
                   las_id)

    def verify_mac(self, hw_key: bytes) -> bool:
        return hmac.compare_digest(self.mac, quote_mac(hw_key, self.measurement, self.nonce,
                                                       self.sgx_flag))

    def to_msg(self, type_: str = "Quote") -> dict:
        return message(type_, measurement=self.measurement, nonce=self.nonce,
                       sgx_flag=self.sgx_flag, mac=self.mac, las_id=self.las_id)

    @classmethod
    def from_msg(cls, msg: dict, type_: str = "Quote") -> AttestationQuote:
        check(msg, type_, measurement=bytes, nonce=bytes, sgx_flag=bool, mac=bytes, las_id=str)
        if len(msg["measurement"]) != 32 or len(msg["mac"]) != MAC_LEN:
            raise ProtocolError("quote fields have wrong sizes")
        return cls(msg["measurement"], msg["nonce"], msg["sgx_flag"], msg["mac"], msg["las_id"])


@dataclass
class ProvisionedConfig:
    config_text: str = ""
    env: dict[str, str] = field(default_factory=dict)
    args: list[str] = field(default_factory=list)
    secrets: dict[str, bytes] = field(default_factory=dict)

    def to_msg(self) -> dict:
        return message("Config", config_text=self.config_text, env=dict(self.env),
                       args=list(self.args), secrets=dict(self.secrets))

    @classmethod
    def from_msg(cls, msg: dict) -> ProvisionedConfig:
        check(msg, "Config", config_text=str, env=dict, args=list, secrets=dict)
        if not all(isinstance(v, str) for v in msg["env"].values()):
            raise ProtocolError("Config.env values must be text")
        if not all(isinstance(v, str) for v in msg["args"]):
            raise ProtocolError("Config.args must be text")
        if not all(isinstance(v, bytes) for v in msg["secrets"].values()):
            raise ProtocolError("Config.secrets values must be bytes")
        return cls(msg["config_text"], msg["env"], msg["args"], msg["secrets"])

    def to_json(self) -> dict:
        return {"config_text": self.config_text, "env": self.env, "args": self.args,
                "secrets": {k: v.hex() for k, v in self.secrets.items()}}

    @classmethod
    def from_json(cls, d: dict) -> ProvisionedConfig:
        return cls(d.get("config_text", ""), dict(d.get("env", {})), list(d.get("args", [])),
                   {k: bytes.fromhex(v) for k, v in d.get("secrets", {}).items()})


def default_hw_key() -> bytes:
    return hw_secret()
