"""Simulated attestation authority.

Stands in for the hardware vendor's attestation service: it signs a
verification report over each enclave quote, and its public key is the
trust root every validator is configured with.
"""

from __future__ import annotations

import threading
from typing import Iterable

from . import crypto
from .records import Quote, VerificationReport, report_message

INTERPRETER_VERSION = "pdo-scheme/1.0"
DEFAULT_BUILD_ID = "release"


def enclave_measurement(build_id: str = DEFAULT_BUILD_ID) -> bytes:
    """Code identity of a simulated enclave build."""
    return crypto.hash(f"{INTERPRETER_VERSION}+{build_id}".encode())


class AttestationService:
    """Signs verification reports; verdict is OK only for known-good builds."""

    def __init__(self, root: crypto.SigningKeyPair | None = None, known_good: Iterable[bytes] = ()):
        self.root = root or crypto.SigningKeyPair.generate()
        self.known_good = set(known_good) or {enclave_measurement()}
        self._lock = threading.Lock()

    @property
    def root_pub(self) -> bytes:
        return self.root.public

    def ias_verify(self, quote: Quote) -> VerificationReport:
        verdict = "OK" if quote.measurement in self.known_good else "FAILED"
        with self._lock:
            nonce = crypto.random_bytes(16)
        sig = self.root.sign(report_message(quote, verdict, nonce))
        return VerificationReport(quote=quote, verdict=verdict, nonce=nonce, sig=sig)


def check_report(report: VerificationReport, root_pub: bytes, expected_measurement: bytes) -> bool:
    msg = report_message(report.quote, report.verdict, report.nonce)
    return (
        crypto.verify_quietly(root_pub, msg, report.sig)
        and report.verdict == "OK"
        and report.quote.measurement == expected_measurement
    )
