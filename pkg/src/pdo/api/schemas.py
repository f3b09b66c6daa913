"""Request/response bodies for the HTTP services.

Domain records (transactions, reports, updates) are already pydantic
models and are used as bodies directly; only the envelopes live here.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel

from ..enclave import InvocationRequest
from ..records import Dependency, Digest, HexBytes, PublicKey, SealedSecret


class SubmitResponse(BaseModel):
    accepted: bool
    txn_id: Optional[str] = None
    code: Optional[str] = None
    detail: Optional[str] = None


class HeadResponse(BaseModel):
    contract_id: str
    head: Optional[str] = None


class HeightResponse(BaseModel):
    height: int


class LogResponse(BaseModel):
    start: int
    transactions: list[str]


class RootResponse(BaseModel):
    root_pub: str


class PsInfo(BaseModel):
    ps_id: str


class ProvisionRequest(BaseModel):
    contract_id: Digest
    enclave_id: Digest


class ProvisionResponse(BaseModel):
    ps_id: Optional[str] = None
    sealed_secret_hex: Optional[str] = None
    ps_sig_hex: Optional[str] = None
    refusal_code: Optional[str] = None
    detail: Optional[str] = None


class EnclaveInfo(BaseModel):
    enclave_id: str
    verif_pub: str
    enc_pub: str


class EnclaveList(BaseModel):
    enclaves: list[EnclaveInfo]


class RelayProvisioningRequest(BaseModel):
    enclave_id: Digest
    contract_id: Digest
    ps_list: list[PublicKey]
    bundles: list[SealedSecret]


class RelayProvisioningResponse(BaseModel):
    provisioning_proof: str


class RelayInvokeRequest(BaseModel):
    enclave_id: Digest
    request: InvocationRequest
    deps: list[Dependency] = []


class StateResponse(BaseModel):
    state_hash: str
    encrypted_state: Optional[str] = None


class ErrorBody(BaseModel):
    code: str
    detail: str = ""


__all__ = [
    "EnclaveInfo", "EnclaveList", "ErrorBody", "HeadResponse", "HeightResponse", "HexBytes",
    "LogResponse", "ProvisionRequest", "ProvisionResponse", "PsInfo", "RelayInvokeRequest",
    "RelayProvisioningRequest", "RelayProvisioningResponse", "RootResponse", "StateResponse",
    "SubmitResponse",
]
