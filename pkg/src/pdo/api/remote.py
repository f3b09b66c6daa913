"""HTTP proxies with the same surface as the in-process objects.

Each proxy takes either a base URL or a ready ``httpx.Client`` (tests pass
FastAPI's ``TestClient``, which is one).  Errors coming back over the wire
are turned into the exceptions the local objects would have raised, so the
client code does not care which side of a socket a party lives on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import httpx

from ..enclave import ENCLAVE_ERRORS, EnclaveError, InvocationRequest, InvocationResult
from ..enclave_service import RegistrationAborted, ServiceUnavailable, UnknownEnclave
from ..ledger import Genesis, TransactionRejected
from ..provisioning import ProvisioningRefused
from ..records import (
    CclEntry,
    ContractRecord,
    Dependency,
    EnclaveRecord,
    Quote,
    SealedSecret,
    Transaction,
    VerificationReport,
)

DEFAULT_TIMEOUT = 30.0


def base_url(addr: str) -> str:
    """``host:port`` or a full URL."""
    return addr if "://" in addr else f"http://{addr}"


def _client(target: str | httpx.Client) -> httpx.Client:
    if isinstance(target, httpx.Client):
        return target
    return httpx.Client(base_url=base_url(target), timeout=DEFAULT_TIMEOUT)


class RemoteError(Exception):
    """The service answered with something this proxy does not understand."""


def _check(resp: httpx.Response) -> httpx.Response:
    if resp.status_code >= 400:
        raise RemoteError(f"{resp.request.method} {resp.request.url.path}: HTTP {resp.status_code} {resp.text[:200]}")
    return resp


class RemoteLedger:
    def __init__(self, target: str | httpx.Client):
        self.http = _client(target)
        self._genesis: Genesis | None = None

    @property
    def genesis(self) -> Genesis:
        if self._genesis is None:
            self._genesis = Genesis.from_json(_check(self.http.get("/genesis")).json())
        return self._genesis

    def submit(self, txn: Transaction) -> bytes:
        body = _check(self.http.post("/submit", json=txn.to_json())).json()
        if not body["accepted"]:
            raise TransactionRejected(body["code"], body.get("detail") or "")
        return bytes.fromhex(body["txn_id"])

    def _optional(self, path: str):
        resp = self.http.get(path)
        if resp.status_code == 404:
            return None
        return _check(resp).json()

    def get_enclave(self, enclave_id: bytes) -> Optional[EnclaveRecord]:
        data = self._optional(f"/enclaves/{enclave_id.hex()}")
        return EnclaveRecord.from_json(data) if data is not None else None

    def get_contract(self, contract_id: bytes) -> Optional[ContractRecord]:
        data = self._optional(f"/contracts/{contract_id.hex()}")
        return ContractRecord.from_json(data) if data is not None else None

    def get_head(self, contract_id: bytes) -> Optional[bytes]:
        head = _check(self.http.get(f"/heads/{contract_id.hex()}")).json()["head"]
        return bytes.fromhex(head) if head else None

    def get_entry(self, contract_id: bytes, state_hash: bytes) -> Optional[CclEntry]:
        data = self._optional(f"/entries/{contract_id.hex()}/{state_hash.hex()}")
        return CclEntry.from_json(data) if data is not None else None

    def height(self) -> int:
        return _check(self.http.get("/height")).json()["height"]

    def transactions(self, start: int = 0) -> list[Transaction]:
        body = _check(self.http.get("/log", params={"start": start})).json()
        return [Transaction.from_canonical(bytes.fromhex(t)) for t in body["transactions"]]


class RemoteAttestation:
    def __init__(self, target: str | httpx.Client):
        self.http = _client(target)

    @property
    def root_pub(self) -> bytes:
        return bytes.fromhex(_check(self.http.get("/root")).json()["root_pub"])

    def ias_verify(self, quote: Quote) -> VerificationReport:
        return VerificationReport.from_json(_check(self.http.post("/verify", json=quote.to_json())).json())


class RemoteProvisioning:
    def __init__(self, target: str | httpx.Client):
        self.http = _client(target)
        self._ps_id: bytes | None = None

    @property
    def ps_id(self) -> bytes:
        if self._ps_id is None:
            self._ps_id = bytes.fromhex(_check(self.http.get("/info")).json()["ps_id"])
        return self._ps_id

    def provision(self, contract_id: bytes, enclave_id: bytes) -> SealedSecret:
        body = _check(self.http.post("/provision", json={
            "contract_id": contract_id.hex(), "enclave_id": enclave_id.hex(),
        })).json()
        if body.get("refusal_code"):
            raise ProvisioningRefused(body["refusal_code"], body.get("detail") or "")
        return SealedSecret(ps_id=body["ps_id"], sealed=body["sealed_secret_hex"], ps_sig=body["ps_sig_hex"])


class RemoteEnclaveService:
    def __init__(self, target: str | httpx.Client):
        self.http = _client(target)

    def _raise_for(self, resp: httpx.Response) -> None:
        if resp.status_code < 400:
            return
        try:
            body = resp.json()
        except ValueError:
            body = {}
        code = body.get("code") if isinstance(body, dict) else None
        detail = body.get("detail", "") if isinstance(body, dict) else ""
        if resp.status_code == 404 and code == "unknown-enclave":
            raise UnknownEnclave(detail)
        if resp.status_code == 503:
            raise ServiceUnavailable(detail)
        if code in ENCLAVE_ERRORS:
            raise ENCLAVE_ERRORS[code](detail)
        if resp.status_code == 409:
            raise RegistrationAborted(str(detail))
        _check(resp)

    def enclaves(self) -> list[dict]:
        resp = self.http.get("/enclaves")
        self._raise_for(resp)
        return resp.json()["enclaves"]

    def enclave_ids(self) -> list[bytes]:
        return [bytes.fromhex(e["enclave_id"]) for e in self.enclaves()]

    def launch(self) -> bytes:
        resp = self.http.post("/launch")
        self._raise_for(resp)
        return bytes.fromhex(resp.json()["enclave_id"])

    def relay_provisioning(
        self, enclave_id: bytes, contract_id: bytes, ps_list: Sequence[bytes], bundles: Sequence[SealedSecret]
    ) -> bytes:
        resp = self.http.post("/provision", json={
            "enclave_id": enclave_id.hex(),
            "contract_id": contract_id.hex(),
            "ps_list": [p.hex() for p in ps_list],
            "bundles": [b.to_json() for b in bundles],
        })
        self._raise_for(resp)
        return bytes.fromhex(resp.json()["provisioning_proof"])

    def relay_invoke(
        self, enclave_id: bytes, req: InvocationRequest, deps: Sequence[Dependency] = ()
    ) -> InvocationResult:
        resp = self.http.post("/invoke", json={
            "enclave_id": enclave_id.hex(),
            "request": req.to_json(),
            "deps": [d.to_json() for d in deps],
        })
        self._raise_for(resp)
        return InvocationResult.from_json(resp.json())

    def fetch_state(self, state_hash: bytes) -> Optional[bytes]:
        resp = self.http.get(f"/state/{state_hash.hex()}")
        self._raise_for(resp)
        blob = resp.json()["encrypted_state"]
        return bytes.fromhex(blob) if blob else None


@dataclass
class HttpNetwork:
    """Client wiring over HTTP; proxies are created on first use per address."""

    ledger: RemoteLedger
    services: dict[str, RemoteEnclaveService] = field(default_factory=dict)
    provisioners: dict[str, RemoteProvisioning] = field(default_factory=dict)

    @classmethod
    def connect(cls, ledger_addr: str) -> HttpNetwork:
        return cls(RemoteLedger(ledger_addr))

    def es(self, addr: str) -> RemoteEnclaveService:
        if addr not in self.services:
            self.services[addr] = RemoteEnclaveService(addr)
        return self.services[addr]

    def ps(self, addr: str) -> RemoteProvisioning:
        if addr not in self.provisioners:
            self.provisioners[addr] = RemoteProvisioning(addr)
        return self.provisioners[addr]


__all__ = [
    "EnclaveError", "HttpNetwork", "RemoteAttestation", "RemoteEnclaveService", "RemoteError",
    "RemoteLedger", "RemoteProvisioning", "base_url",
]
