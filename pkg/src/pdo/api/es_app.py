from __future__ import annotations

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import crypto
from ..enclave import EnclaveError, InvocationResult
from ..enclave_service import EnclaveService, RegistrationAborted, ServiceUnavailable, UnknownEnclave
from .schemas import (
    EnclaveInfo,
    EnclaveList,
    RelayInvokeRequest,
    RelayProvisioningRequest,
    RelayProvisioningResponse,
    StateResponse,
)


def create_app(es: EnclaveService, owner: crypto.SigningKeyPair) -> FastAPI:
    """``owner`` is the enclave owner key this service registers enclaves under."""
    app = FastAPI(title="pdo enclave service")

    @app.exception_handler(EnclaveError)
    def _enclave_error(request, exc: EnclaveError):
        return JSONResponse(status_code=400, content={"code": exc.code, "detail": exc.detail})

    @app.exception_handler(UnknownEnclave)
    def _unknown(request, exc: UnknownEnclave):
        return JSONResponse(status_code=404, content={"code": "unknown-enclave", "detail": str(exc)})

    @app.exception_handler(ServiceUnavailable)
    def _dropped(request, exc: ServiceUnavailable):
        return JSONResponse(status_code=503, content={"code": "unavailable", "detail": str(exc)})

    def _info(eid: bytes) -> EnclaveInfo:
        e = es.enclave(eid)
        return EnclaveInfo(enclave_id=eid.hex(), verif_pub=e.verif_pub.hex(), enc_pub=e.enc_pub.hex())

    @app.get("/enclaves", response_model=EnclaveList)
    def enclaves() -> EnclaveList:
        return EnclaveList(enclaves=[_info(eid) for eid in es.enclave_ids()])

    @app.post("/launch", response_model=EnclaveInfo)
    def launch() -> EnclaveInfo:
        try:
            eid = es.launch_and_register(owner)
        except RegistrationAborted as exc:
            raise HTTPException(status_code=409, detail=exc.reason) from None
        return _info(eid)

    @app.post("/provision", response_model=RelayProvisioningResponse)
    def provision(body: RelayProvisioningRequest) -> RelayProvisioningResponse:
        proof = es.relay_provisioning(body.enclave_id, body.contract_id, body.ps_list, body.bundles)
        return RelayProvisioningResponse(provisioning_proof=proof.hex())

    @app.post("/invoke", response_model=InvocationResult)
    def invoke(body: RelayInvokeRequest) -> InvocationResult:
        return es.relay_invoke(body.enclave_id, body.request, body.deps)

    @app.get("/state/{state_hash}", response_model=StateResponse)
    def state(state_hash: str) -> StateResponse:
        try:
            key = bytes.fromhex(state_hash)
        except ValueError:
            raise HTTPException(status_code=400, detail="expected hex") from None
        blob = es.fetch_state(key)
        return StateResponse(state_hash=state_hash, encrypted_state=blob.hex() if blob else None)

    return app
