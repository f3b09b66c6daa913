from __future__ import annotations

from fastapi import FastAPI, HTTPException

from ..ledger import Ledger, TransactionRejected
from ..records import CclEntry, ContractRecord, EnclaveRecord, Transaction
from .schemas import HeadResponse, HeightResponse, LogResponse, SubmitResponse


def _hex(value: str) -> bytes:
    try:
        return bytes.fromhex(value)
    except ValueError:
        raise HTTPException(status_code=400, detail="expected hex") from None


def create_app(ledger: Ledger) -> FastAPI:
    app = FastAPI(title="pdo ledger")
    app.state.ledger = ledger

    @app.get("/genesis")
    def genesis() -> dict:
        return ledger.genesis.to_json()

    @app.post("/submit", response_model=SubmitResponse)
    def submit(txn: Transaction) -> SubmitResponse:
        try:
            txn_id = ledger.submit(txn)
        except TransactionRejected as exc:
            return SubmitResponse(accepted=False, code=exc.code.value, detail=exc.detail)
        return SubmitResponse(accepted=True, txn_id=txn_id.hex())

    @app.get("/enclaves/{enclave_id}", response_model=EnclaveRecord)
    def get_enclave(enclave_id: str) -> EnclaveRecord:
        rec = ledger.get_enclave(_hex(enclave_id))
        if rec is None:
            raise HTTPException(status_code=404, detail="unknown enclave")
        return rec

    @app.get("/contracts/{contract_id}", response_model=ContractRecord)
    def get_contract(contract_id: str) -> ContractRecord:
        rec = ledger.get_contract(_hex(contract_id))
        if rec is None:
            raise HTTPException(status_code=404, detail="unknown contract")
        return rec

    @app.get("/heads/{contract_id}", response_model=HeadResponse)
    def get_head(contract_id: str) -> HeadResponse:
        head = ledger.get_head(_hex(contract_id))
        return HeadResponse(contract_id=contract_id, head=head.hex() if head else None)

    @app.get("/entries/{contract_id}/{state_hash}", response_model=CclEntry)
    def get_entry(contract_id: str, state_hash: str) -> CclEntry:
        entry = ledger.get_entry(_hex(contract_id), _hex(state_hash))
        if entry is None:
            raise HTTPException(status_code=404, detail="no such entry")
        return entry

    @app.get("/height", response_model=HeightResponse)
    def height() -> HeightResponse:
        return HeightResponse(height=ledger.height())

    @app.get("/log", response_model=LogResponse)
    def get_log(start: int = 0) -> LogResponse:
        return LogResponse(start=start, transactions=[t.canonical().hex() for t in ledger.transactions(start)])

    return app
