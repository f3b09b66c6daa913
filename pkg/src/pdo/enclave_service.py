"""Enclave hosting service.

The untrusted host.  It owns a simulated platform (its sealing key), launches
enclaves, registers them on the ledger and relays requests to them.  Callers
never rely on it for integrity: every output it forwards is signed inside
the enclave.  It never submits CCL transactions.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from . import crypto
from .attestation import DEFAULT_BUILD_ID, AttestationService
from .enclave import Compromise, ContractEnclave, InvocationRequest, InvocationResult
from .interpreter import DEFAULT_MAX_STEPS
from .ledger import LedgerView, TransactionRejected
from .records import Dependency, EnclaveRegister, SealedSecret, StateUpdate, Transaction

log = logging.getLogger(__name__)


class Adversarial(str, Enum):
    TAMPER_INPUT_STATE = "tamper-input-state"
    TAMPER_RESULT = "tamper-result"
    TAMPER_UPDATE = "tamper-update"
    DROP_RESPONSE = "drop-response"
    REPLAY_RESPONSE = "replay-response"


class UnknownEnclave(Exception):
    pass


class ServiceUnavailable(Exception):
    """The service dropped the response; indistinguishable from a network failure."""


class RegistrationAborted(Exception):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


def flip_byte(data: bytes, index: int = 0) -> bytes:
    buf = bytearray(data)
    buf[index % len(buf)] ^= 0x01
    return bytes(buf)


@dataclass
class HostedEnclave:
    enclave: ContractEnclave
    sealed_path: Optional[Path]
    owner_pub: bytes
    build_id: str


class EnclaveService:
    def __init__(
        self,
        ledger: LedgerView,
        ias: AttestationService,
        *,
        storage_dir: str | Path | None = None,
        platform_key: bytes | None = None,
        adversarial: Adversarial | str | None = None,
        max_steps: int = DEFAULT_MAX_STEPS,
        name: str = "es",
    ):
        self.ledger = ledger
        self.ias = ias
        self.name = name
        self.max_steps = max_steps
        self.adversarial = Adversarial(adversarial) if adversarial else None
        self._dir = Path(storage_dir) if storage_dir else None
        self.platform_key = platform_key or self._load_platform_key()
        self._hosted: dict[bytes, HostedEnclave] = {}
        self._sealed: dict[bytes, bytes] = {}
        self._state_cache: dict[bytes, bytes] = {}
        self._last_response: dict[bytes, InvocationResult] = {}
        self._lock = threading.Lock()

    def _load_platform_key(self) -> bytes:
        if self._dir is None:
            return crypto.random_bytes(crypto.KEY_SIZE)
        self._dir.mkdir(parents=True, exist_ok=True)
        path = self._dir / "platform.key"
        if path.exists():
            return bytes.fromhex(path.read_text().strip())
        key = crypto.random_bytes(crypto.KEY_SIZE)
        path.write_text(key.hex())
        return key

    # -- launching ------------------------------------------------------------

    def launch_and_register(
        self,
        owner: crypto.SigningKeyPair,
        *,
        build_id: str = DEFAULT_BUILD_ID,
        compromise: Compromise | None = None,
    ) -> bytes:
        enclave, quote, sealed = ContractEnclave.create(
            self.platform_key, build_id=build_id, max_steps=self.max_steps, compromise=compromise)
        report = self.ias.ias_verify(quote)
        if report.verdict != "OK":
            raise RegistrationAborted(f"attestation verdict {report.verdict}")
        payload = EnclaveRegister(
            enclave_id=enclave.enclave_id, verif_pub=enclave.verif_pub, enc_pub=enclave.enc_pub,
            owner_pub=owner.public, report=report,
        )
        try:
            self.ledger.submit(Transaction.build(payload, owner))
        except TransactionRejected as exc:
            raise RegistrationAborted(f"ledger rejected registration: {exc}") from None
        path = None
        if self._dir is not None:
            path = self._dir / f"{enclave.enclave_id.hex()}.sealed"
            path.write_bytes(sealed)
        with self._lock:
            self._sealed[enclave.enclave_id] = sealed
            self._hosted[enclave.enclave_id] = HostedEnclave(enclave, path, owner.public, build_id)
        log.info("%s launched enclave %s", self.name, enclave.enclave_id.hex()[:16])
        return enclave.enclave_id

    def enclave_ids(self) -> list[bytes]:
        with self._lock:
            return list(self._hosted)

    def enclave(self, enclave_id: bytes) -> ContractEnclave:
        with self._lock:
            hosted = self._hosted.get(enclave_id)
        if hosted is None:
            raise UnknownEnclave(enclave_id.hex())
        return hosted.enclave

    def delete_sealed_keys(self, enclave_id: bytes) -> None:
        """Simulate loss of the sealed storage for one enclave."""
        with self._lock:
            self._sealed.pop(enclave_id, None)
            hosted = self._hosted.get(enclave_id)
        if hosted and hosted.sealed_path and hosted.sealed_path.exists():
            hosted.sealed_path.unlink()

    def restart(self) -> None:
        """Drop every live enclave and reload the ones whose sealed keys survive."""
        with self._lock:
            previous = self._hosted
            self._hosted = {}
            for eid, hosted in previous.items():
                sealed = self._sealed.get(eid)
                if sealed is None and hosted.sealed_path and hosted.sealed_path.exists():
                    sealed = hosted.sealed_path.read_bytes()
                if sealed is None:
                    log.warning("%s lost sealed keys for %s", self.name, eid.hex()[:16])
                    continue
                enclave = ContractEnclave.from_sealed(
                    self.platform_key, sealed, build_id=hosted.build_id, max_steps=self.max_steps)
                self._hosted[eid] = HostedEnclave(enclave, hosted.sealed_path, hosted.owner_pub, hosted.build_id)

    # -- relaying -------------------------------------------------------------

    def relay_provisioning(
        self, enclave_id: bytes, contract_id: bytes, ps_list: Sequence[bytes], bundles: Sequence[SealedSecret]
    ) -> bytes:
        return self.enclave(enclave_id).accept_provisioning(contract_id, ps_list, bundles)

    def relay_invoke(
        self, enclave_id: bytes, req: InvocationRequest, deps: Sequence[Dependency] = ()
    ) -> InvocationResult:
        enclave = self.enclave(enclave_id)
        mode = self.adversarial
        if mode is Adversarial.TAMPER_INPUT_STATE and req.encrypted_state:
            req = req.model_copy(update={"encrypted_state": flip_byte(req.encrypted_state, 7)})
        out = enclave.invoke(req, deps)
        with self._lock:
            self._state_cache[out.update.new_state_hash] = out.encrypted_state
            previous = self._last_response.get(enclave_id)
            self._last_response[enclave_id] = out
        if mode is Adversarial.TAMPER_RESULT:
            out = out.model_copy(update={"encrypted_state": flip_byte(out.encrypted_state, 20)})
        elif mode is Adversarial.TAMPER_UPDATE:
            su = out.signed_update
            bad = StateUpdate(**{**su.update.model_dump(), "message_hash": flip_byte(su.update.message_hash)})
            out = out.model_copy(update={"signed_update": su.model_copy(update={"update": bad})})
        elif mode is Adversarial.DROP_RESPONSE:
            raise ServiceUnavailable(f"{self.name} dropped the response")
        elif mode is Adversarial.REPLAY_RESPONSE and previous is not None:
            out = previous
        return out

    def fetch_state(self, state_hash: bytes) -> Optional[bytes]:
        """Best-effort cache of state blobs this service has produced."""
        with self._lock:
            return self._state_cache.get(state_hash)
