from __future__ import annotations

from fastapi import FastAPI

from ..provisioning import ProvisioningRefused, ProvisioningService
from .schemas import ProvisionRequest, ProvisionResponse, PsInfo


def create_app(ps: ProvisioningService) -> FastAPI:
    app = FastAPI(title="pdo provisioning service")

    @app.get("/info", response_model=PsInfo)
    def info() -> PsInfo:
        return PsInfo(ps_id=ps.ps_id.hex())

    @app.post("/provision", response_model=ProvisionResponse)
    def provision(body: ProvisionRequest) -> ProvisionResponse:
        try:
            s = ps.provision(body.contract_id, body.enclave_id)
        except ProvisioningRefused as exc:
            return ProvisionResponse(refusal_code=exc.code, detail=exc.detail)
        return ProvisionResponse(ps_id=s.ps_id.hex(), sealed_secret_hex=s.sealed.hex(), ps_sig_hex=s.ps_sig.hex())

    return app
