"""Provisioning service.

Issues one 32-byte secret per contract, sealed separately to each enclave
the contract owner asks about.  It only participates once the ledger shows
the contract and the enclave are registered, unrevoked and properly
attested, and that this service is on the contract's list.
"""

from __future__ import annotations

import json
import threading
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from . import crypto
from .attestation import check_report
from .ledger import LedgerView
from .records import SealedSecret, secret_message

_STORE_AAD = b"pdo/ps-store/v1"


class ProvisioningRefused(Exception):
    """Codes: unknown-contract, unknown-enclave, not-listed, revoked, bad-attestation."""

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)


@dataclass(frozen=True)
class SecretRecord:
    contract_id: bytes
    enclave_id: bytes
    secret: crypto.Secret
    issued_at: int


class ProvisioningService:
    def __init__(
        self,
        ledger: LedgerView,
        keys: crypto.SigningKeyPair | None = None,
        store_dir: str | Path | None = None,
    ):
        self.ledger = ledger
        self._store_dir = Path(store_dir) if store_dir else None
        self._local_key: bytes | None = None
        self._secrets: dict[bytes, bytes] = {}
        self.issued: list[SecretRecord] = []
        self._locks: dict[bytes, threading.Lock] = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()
        if self._store_dir is not None:
            keys = self._load_store(keys)
        self.keys = keys or crypto.SigningKeyPair.generate()

    @property
    def ps_id(self) -> bytes:
        return self.keys.public

    def provision(self, contract_id: bytes, enclave_id: bytes) -> SealedSecret:
        contract = self.ledger.get_contract(contract_id)
        if contract is None:
            raise ProvisioningRefused("unknown-contract", contract_id.hex())
        if contract.revoked:
            raise ProvisioningRefused("revoked", "contract revoked")
        if self.ps_id not in contract.ps_list:
            raise ProvisioningRefused("not-listed", "this service is not in the contract's ps_list")
        enclave = self.ledger.get_enclave(enclave_id)
        if enclave is None:
            raise ProvisioningRefused("unknown-enclave", enclave_id.hex())
        if enclave.revoked:
            raise ProvisioningRefused("revoked", "enclave revoked")
        genesis = self.ledger.genesis
        if not check_report(enclave.report, genesis.attestation_root, genesis.expected_measurement):
            raise ProvisioningRefused("bad-attestation", "enclave report does not check out")

        with self._locks_guard:
            lock = self._locks[contract_id]
        with lock:
            value = self._secrets.get(contract_id)
            if value is None:
                value = crypto.random_bytes(crypto.SECRET_SIZE)
                self._secrets[contract_id] = value
                self._save_store()
            self.issued.append(SecretRecord(contract_id, enclave_id, crypto.Secret(value, self.ps_id),
                                            self.ledger.height()))
        sealed = crypto.seal_to(enclave.enc_pub, value)
        sig = self.keys.sign(secret_message(contract_id, enclave_id, sealed))
        return SealedSecret(ps_id=self.ps_id, sealed=sealed, ps_sig=sig)

    def leak_secret(self, contract_id: bytes) -> crypto.Secret:
        """Hand the raw secret to an adversary simulator.  Test use only."""
        return crypto.Secret(self._secrets[contract_id], self.ps_id)

    # -- local store ----------------------------------------------------------

    def _load_store(self, keys: crypto.SigningKeyPair | None) -> crypto.SigningKeyPair:
        assert self._store_dir is not None
        self._store_dir.mkdir(parents=True, exist_ok=True)
        key_file = self._store_dir / "ps.key"
        if key_file.exists():
            meta = json.loads(key_file.read_text())
            keys = crypto.SigningKeyPair.from_seed(bytes.fromhex(meta["signing_seed"]))
            self._local_key = bytes.fromhex(meta["store_key"])
        else:
            keys = keys or crypto.SigningKeyPair.generate()
            self._local_key = crypto.random_bytes(crypto.KEY_SIZE)
            key_file.write_text(json.dumps({
                "signing_seed": keys.seed().hex(),
                "store_key": self._local_key.hex(),
            }))
        store = self._store_dir / f"secrets-{keys.public.hex()[:16]}.json"
        if store.exists():
            for cid, blob in json.loads(store.read_text()).items():
                self._secrets[bytes.fromhex(cid)] = crypto.unseal_symmetric(
                    self._local_key, bytes.fromhex(blob), _STORE_AAD + bytes.fromhex(cid))
        return keys

    def _save_store(self) -> None:
        if self._store_dir is None or self._local_key is None:
            return
        data = {
            cid.hex(): crypto.seal_symmetric(self._local_key, v, _STORE_AAD + cid).hex()
            for cid, v in sorted(self._secrets.items())
        }
        path = self._store_dir / f"secrets-{self.ps_id.hex()[:16]}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(data, indent=1))
        tmp.replace(path)
