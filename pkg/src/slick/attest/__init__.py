"""Remote attestation and configuration provisioning (CAS, LAS, enclave library)."""

from .cas import CasServer, PolicyStore
from .channel import SessionIntegrityError
from .client import (BootstrapResult, CasSession, PhaseReport, connect_with_retry,
                     enclave_bootstrap, request_quote)
from .codec import ProtocolError, parse_addr
from .las import LasServer
from .quote import (LAS_MEASUREMENT, AttestationError, AttestationQuote, AttestationRejected,
                    ConnectFailure, ProvisionedConfig, RejectReason, measure, quote_mac)

__all__ = [
    "CasServer", "PolicyStore", "LasServer", "SessionIntegrityError", "BootstrapResult",
    "CasSession", "PhaseReport", "connect_with_retry", "enclave_bootstrap", "request_quote",
    "ProtocolError", "parse_addr", "LAS_MEASUREMENT", "AttestationError", "AttestationQuote",
    "AttestationRejected", "ConnectFailure", "ProvisionedConfig", "RejectReason", "measure",
    "quote_mac",
]
