from __future__ import annotations

from fastapi import FastAPI

from ..attestation import AttestationService
from ..records import Quote, VerificationReport
from .schemas import RootResponse


def create_app(ias: AttestationService) -> FastAPI:
    app = FastAPI(title="pdo attestation simulator")

    @app.get("/root", response_model=RootResponse)
    def root() -> RootResponse:
        return RootResponse(root_pub=ias.root_pub.hex())

    @app.post("/verify", response_model=VerificationReport)
    def verify(quote: Quote) -> VerificationReport:
        return ias.ias_verify(quote)

    return app
