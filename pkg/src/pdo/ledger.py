"""The authoritative log.

A single logical validator for the three transaction families (enclave
registry, contract registry, coordination-and-commit log).  Submissions are
serialized through one lock; each is validated completely before any state
changes, so a rejected transaction leaves no trace.

Persistence is an append-only text file, one lowercase-hex canonical
transaction per line.  Loading a log replays every line through the same
validation rules.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

from pydantic import ValidationError

from . import crypto
from .attestation import check_report
from .encoding import EncodingError, encode
from .records import (
    EMPTY,
    AddEnclave,
    CclEntry,
    CclUpdate,
    ContractRecord,
    ContractRegister,
    ContractRevoke,
    EnclaveRecord,
    EnclaveRegister,
    EnclaveRevoke,
    EvidenceRevoke,
    FAMILY_OF_OP,
    RejectCode,
    RemoveEnclave,
    SignedUpdate,
    Transaction,
    contract_id_for,
    key_binding,
    provisioning_proof_message,
    secret_message,
)

log = logging.getLogger(__name__)

_LOG_LINE = re.compile(r"(?:[0-9a-f]{2})+\Z")


class TransactionRejected(Exception):
    def __init__(self, code: RejectCode, detail: str = ""):
        self.code = RejectCode(code)
        self.detail = detail
        super().__init__(f"{self.code.value}: {detail}" if detail else self.code.value)


class LogCorrupt(Exception):
    """Replay stopped at a line that does not decode or does not validate."""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"log line {line}: {reason}")


@dataclass(frozen=True)
class Genesis:
    attestation_root: bytes
    expected_measurement: bytes

    def to_json(self) -> dict:
        return {
            "attestation_root": self.attestation_root.hex(),
            "expected_measurement": self.expected_measurement.hex(),
        }

    @classmethod
    def from_json(cls, data: dict) -> Genesis:
        return cls(bytes.fromhex(data["attestation_root"]), bytes.fromhex(data["expected_measurement"]))

    @classmethod
    def load(cls, path: str | Path) -> Genesis:
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


class LedgerView(Protocol):
    """What other parties need from a ledger, local or remote."""

    @property
    def genesis(self) -> Genesis: ...

    def submit(self, txn: Transaction) -> bytes: ...

    def get_enclave(self, enclave_id: bytes) -> Optional[EnclaveRecord]: ...

    def get_contract(self, contract_id: bytes) -> Optional[ContractRecord]: ...

    def get_head(self, contract_id: bytes) -> Optional[bytes]: ...

    def get_entry(self, contract_id: bytes, state_hash: bytes) -> Optional[CclEntry]: ...

    def height(self) -> int: ...


@dataclass
class LedgerState:
    enclaves: dict[bytes, EnclaveRecord] = field(default_factory=dict)
    contracts: dict[bytes, ContractRecord] = field(default_factory=dict)
    ccl_heads: dict[bytes, bytes] = field(default_factory=dict)
    ccl_entries: dict[tuple[bytes, bytes], CclEntry] = field(default_factory=dict)
    log: list[Transaction] = field(default_factory=list)
    txn_ids: set[bytes] = field(default_factory=set)

    def canonical(self) -> bytes:
        return encode({
            "enclaves": [self.enclaves[k].model_dump() for k in sorted(self.enclaves)],
            "contracts": [self.contracts[k].model_dump() for k in sorted(self.contracts)],
            "heads": [[k, self.ccl_heads[k]] for k in sorted(self.ccl_heads)],
            "entries": [self.ccl_entries[k].model_dump() for k in sorted(self.ccl_entries)],
            "log": [t.txn_id for t in self.log],
        })


def _reject(code: RejectCode, detail: str = "") -> TransactionRejected:
    return TransactionRejected(code, detail)


def _check_sig(pub: bytes, msg: bytes, sig: bytes, what: str) -> None:
    try:
        ok = crypto.verify(pub, msg, sig)
    except crypto.DecodeError as exc:
        raise _reject(RejectCode.MALFORMED, f"{what}: {exc}") from None
    if not ok:
        raise _reject(RejectCode.BAD_SIGNATURE, what)


class Ledger:
    def __init__(self, genesis: Genesis, log_path: str | Path | None = None):
        self.genesis = genesis
        self.state = LedgerState()
        self._lock = threading.RLock()
        self._log_path = Path(log_path) if log_path else None
        if self._log_path and self._log_path.exists():
            self._replay_into(self._log_path)

    # -- submission -----------------------------------------------------------

    def submit(self, txn: Transaction) -> bytes:
        """Validate and apply ``txn``; return its id or raise :class:`TransactionRejected`."""
        with self._lock:
            self._apply(txn)
            if self._log_path is not None:
                with self._log_path.open("a") as fh:
                    fh.write(txn.canonical().hex() + "\n")
            log.debug("accepted %s %s", txn.payload.op, txn.txn_id.hex()[:16])
            return txn.txn_id

    def submit_bytes(self, data: bytes) -> bytes:
        try:
            txn = Transaction.from_canonical(data)
        except (EncodingError, ValidationError) as exc:
            raise _reject(RejectCode.MALFORMED, f"undecodable transaction: {exc}") from None
        return self.submit(txn)

    def _apply(self, txn: Transaction) -> None:
        st = self.state
        if FAMILY_OF_OP[txn.payload.op] != txn.family:
            raise _reject(RejectCode.MALFORMED, f"op {txn.payload.op} not in family {txn.family}")
        _check_sig(txn.submitter_pub, txn.signing_message(), txn.submitter_sig, "submitter signature")
        txn_id = txn.txn_id
        if txn_id in st.txn_ids:
            raise _reject(RejectCode.DUPLICATE, "transaction already in log")
        handler = getattr(self, "_do_" + txn.payload.op.replace("-", "_"))
        handler(txn, txn.payload)
        st.log.append(txn)
        st.txn_ids.add(txn_id)

    # -- enclave registry -----------------------------------------------------

    def _do_enclave_register(self, txn: Transaction, p: EnclaveRegister) -> None:
        st = self.state
        if p.enclave_id != crypto.hash(p.verif_pub):
            raise _reject(RejectCode.MALFORMED, "enclave_id is not hash(verif_pub)")
        try:
            crypto.load_verification_key(p.verif_pub)
        except crypto.DecodeError as exc:
            raise _reject(RejectCode.MALFORMED, f"bad verification key: {exc}") from None
        if p.owner_pub != txn.submitter_pub:
            raise _reject(RejectCode.NOT_OWNER, "registration must be signed by the enclave owner")
        if not check_report(p.report, self.genesis.attestation_root, self.genesis.expected_measurement):
            raise _reject(RejectCode.BAD_ATTESTATION, "report not valid for the expected measurement")
        if p.report.quote.report_data != key_binding(p.verif_pub, p.enc_pub):
            raise _reject(RejectCode.BAD_ATTESTATION, "report does not bind these keys")
        if p.enclave_id in st.enclaves:
            raise _reject(RejectCode.DUPLICATE, "enclave already registered")
        st.enclaves[p.enclave_id] = EnclaveRecord(
            enclave_id=p.enclave_id, verif_pub=p.verif_pub, enc_pub=p.enc_pub,
            owner_pub=p.owner_pub, report=p.report,
        )

    def _do_enclave_revoke(self, txn: Transaction, p: EnclaveRevoke) -> None:
        rec = self.state.enclaves.get(p.enclave_id)
        if rec is None:
            raise _reject(RejectCode.UNKNOWN_ENCLAVE)
        if txn.submitter_pub != rec.owner_pub:
            raise _reject(RejectCode.NOT_OWNER)
        if rec.revoked:
            raise _reject(RejectCode.DUPLICATE, "enclave already revoked")
        self.state.enclaves[p.enclave_id] = rec.model_copy(update={"revoked": True})

    def _do_evidence_revoke(self, txn: Transaction, p: EvidenceRevoke) -> None:
        a, b = p.first, p.second
        if a.enclave_id != b.enclave_id:
            raise _reject(RejectCode.MALFORMED, "updates signed by different enclaves")
        rec = self.state.enclaves.get(a.enclave_id)
        if rec is None:
            raise _reject(RejectCode.UNKNOWN_ENCLAVE)
        for su in (a, b):
            _check_sig(rec.verif_pub, su.update.signing_message(), su.enclave_sig, "enclave signature")
        ua, ub = a.update, b.update
        same_input = (ua.contract_id, ua.prev_state_hash, ua.message_hash) == (
            ub.contract_id, ub.prev_state_hash, ub.message_hash)
        if not same_input or ua.new_state_hash == ub.new_state_hash:
            raise _reject(RejectCode.MALFORMED, "updates do not constitute equivocation")
        if rec.revoked:
            raise _reject(RejectCode.DUPLICATE, "enclave already revoked")
        self.state.enclaves[rec.enclave_id] = rec.model_copy(update={"revoked": True})

    # -- contract registry ----------------------------------------------------

    def _owned_contract(self, txn: Transaction, contract_id: bytes) -> ContractRecord:
        rec = self.state.contracts.get(contract_id)
        if rec is None:
            raise _reject(RejectCode.UNKNOWN_CONTRACT)
        if txn.submitter_pub != rec.owner_pub:
            raise _reject(RejectCode.NOT_OWNER)
        if rec.revoked:
            raise _reject(RejectCode.REVOKED, "contract revoked")
        return rec

    def _do_contract_register(self, txn: Transaction, p: ContractRegister) -> None:
        if not p.ps_list or len(set(p.ps_list)) != len(p.ps_list):
            raise _reject(RejectCode.MALFORMED, "ps_list must be non-empty and duplicate-free")
        for ps in p.ps_list:
            try:
                crypto.load_verification_key(ps)
            except crypto.DecodeError as exc:
                raise _reject(RejectCode.MALFORMED, f"bad provisioning service key: {exc}") from None
        contract_id = contract_id_for(p.code_hash, txn.submitter_pub, p.nonce)
        if contract_id in self.state.contracts:
            raise _reject(RejectCode.DUPLICATE, "contract already registered")
        self.state.contracts[contract_id] = ContractRecord(
            contract_id=contract_id, code_hash=p.code_hash, owner_pub=txn.submitter_pub,
            nonce=p.nonce, ps_list=p.ps_list,
        )

    def _do_add_enclave(self, txn: Transaction, p: AddEnclave) -> None:
        rec = self._owned_contract(txn, p.contract_id)
        pe = p.enclave
        enc = self.state.enclaves.get(pe.enclave_id)
        if enc is None:
            raise _reject(RejectCode.UNKNOWN_ENCLAVE)
        if enc.revoked:
            raise _reject(RejectCode.REVOKED, "enclave revoked")
        if rec.provisioned(pe.enclave_id) is not None:
            raise _reject(RejectCode.DUPLICATE, "enclave already provisioned for contract")
        ps_ids = [s.ps_id for s in pe.sealed_secrets]
        if len(set(ps_ids)) != len(ps_ids) or set(ps_ids) != set(rec.ps_list):
            raise _reject(RejectCode.MALFORMED, "sealed secrets do not match ps_list")
        for s in pe.sealed_secrets:
            _check_sig(s.ps_id, secret_message(rec.contract_id, pe.enclave_id, s.sealed), s.ps_sig,
                       "provisioning service signature")
        proof_msg = provisioning_proof_message(rec.contract_id, rec.ps_list, pe.sealed_secrets)
        _check_sig(enc.verif_pub, proof_msg, pe.provisioning_proof, "provisioning proof")
        self.state.contracts[rec.contract_id] = rec.model_copy(update={"enclaves": rec.enclaves + (pe,)})

    def _do_remove_enclave(self, txn: Transaction, p: RemoveEnclave) -> None:
        rec = self._owned_contract(txn, p.contract_id)
        if rec.provisioned(p.enclave_id) is None:
            raise _reject(RejectCode.UNKNOWN_ENCLAVE, "enclave not provisioned for contract")
        kept = tuple(pe for pe in rec.enclaves if pe.enclave_id != p.enclave_id)
        self.state.contracts[rec.contract_id] = rec.model_copy(update={"enclaves": kept})

    def _do_contract_revoke(self, txn: Transaction, p: ContractRevoke) -> None:
        rec = self.state.contracts.get(p.contract_id)
        if rec is None:
            raise _reject(RejectCode.UNKNOWN_CONTRACT)
        if txn.submitter_pub != rec.owner_pub:
            raise _reject(RejectCode.NOT_OWNER)
        if rec.revoked:
            raise _reject(RejectCode.DUPLICATE, "contract already revoked")
        self.state.contracts[rec.contract_id] = rec.model_copy(update={"revoked": True})

    # -- coordination and commit log ------------------------------------------

    def _do_ccl_update(self, txn: Transaction, p: CclUpdate) -> None:
        st = self.state
        u = p.update
        rec = st.contracts.get(u.contract_id)
        if rec is None:
            raise _reject(RejectCode.UNKNOWN_CONTRACT)
        if rec.revoked:
            raise _reject(RejectCode.REVOKED, "contract revoked")
        if rec.provisioned(p.enclave_id) is None:
            raise _reject(RejectCode.UNKNOWN_ENCLAVE, "enclave not provisioned for contract")
        enc = st.enclaves[p.enclave_id]
        if enc.revoked:
            raise _reject(RejectCode.REVOKED, "enclave revoked")
        _check_sig(enc.verif_pub, u.signing_message(), p.enclave_sig, "enclave signature")
        if txn.submitter_pub != u.channel_pub:
            raise _reject(RejectCode.BAD_SIGNATURE, "not signed by the channel key")
        head = st.ccl_heads.get(u.contract_id)
        if head is None:
            if u.prev_state_hash != EMPTY:
                raise _reject(RejectCode.STALE_STATE, "contract has no committed state")
        elif u.prev_state_hash != head:
            raise _reject(RejectCode.STALE_STATE, "prev_state_hash is not the current head")
        if u.new_state_hash == EMPTY or (u.contract_id, u.new_state_hash) in st.ccl_entries:
            raise _reject(RejectCode.MALFORMED, "new state already on the chain")
        for dep in u.dependencies:
            if (dep.contract_id, dep.state_hash) not in st.ccl_entries:
                raise _reject(RejectCode.MISSING_DEPENDENCY,
                              f"{dep.contract_id.hex()[:16]}@{dep.state_hash.hex()[:16]} not committed")
        st.ccl_entries[(u.contract_id, u.new_state_hash)] = CclEntry(
            contract_id=u.contract_id, prev_state_hash=u.prev_state_hash,
            new_state_hash=u.new_state_hash, message_hash=u.message_hash,
            dependencies=u.dependencies, enclave_id=p.enclave_id, enclave_sig=p.enclave_sig,
            channel_pub=u.channel_pub, channel_sig=txn.submitter_sig,
        )
        st.ccl_heads[u.contract_id] = u.new_state_hash

    # -- queries --------------------------------------------------------------

    def get_enclave(self, enclave_id: bytes) -> Optional[EnclaveRecord]:
        with self._lock:
            return self.state.enclaves.get(enclave_id)

    def get_contract(self, contract_id: bytes) -> Optional[ContractRecord]:
        with self._lock:
            return self.state.contracts.get(contract_id)

    def get_head(self, contract_id: bytes) -> Optional[bytes]:
        with self._lock:
            return self.state.ccl_heads.get(contract_id)

    def get_entry(self, contract_id: bytes, state_hash: bytes) -> Optional[CclEntry]:
        with self._lock:
            return self.state.ccl_entries.get((contract_id, state_hash))

    def height(self) -> int:
        with self._lock:
            return len(self.state.log)

    def transactions(self, start: int = 0) -> list[Transaction]:
        with self._lock:
            return list(self.state.log[start:])

    def chain(self, contract_id: bytes) -> list[CclEntry]:
        """Committed entries of one contract, oldest first."""
        with self._lock:
            entries = []
            h = self.state.ccl_heads.get(contract_id)
            while h is not None and h != EMPTY:
                e = self.state.ccl_entries[(contract_id, h)]
                entries.append(e)
                h = e.prev_state_hash
            return entries[::-1]

    def state_digest(self) -> bytes:
        with self._lock:
            return crypto.hash(self.state.canonical())

    # -- persistence ----------------------------------------------------------

    def persist_log(self, path: str | Path) -> None:
        with self._lock:
            lines = "".join(t.canonical().hex() + "\n" for t in self.state.log)
        Path(path).write_text(lines)

    @classmethod
    def replay_log(cls, path: str | Path, genesis: Genesis) -> Ledger:
        ledger = cls(genesis)
        ledger._replay_into(Path(path))
        return ledger

    def _replay_into(self, path: Path) -> None:
        data = path.read_bytes()
        # every complete line ends with a newline; a missing one means truncation
        complete = not data or data.endswith(b"\n")
        lines = data.split(b"\n")
        if complete:
            lines.pop()
        for n, raw in enumerate(lines, start=1):
            if n == len(lines) and not complete:
                raise LogCorrupt(n, "truncated line (no terminator)")
            try:
                text = raw.decode("ascii")
            except UnicodeDecodeError:
                raise LogCorrupt(n, "non-ascii bytes") from None
            if not _LOG_LINE.match(text):
                raise LogCorrupt(n, "not lowercase hex")
            try:
                with self._lock:
                    self._apply(Transaction.from_canonical(bytes.fromhex(text)))
            except (EncodingError, ValidationError) as exc:
                raise LogCorrupt(n, f"undecodable transaction: {exc}") from None
            except TransactionRejected as exc:
                raise LogCorrupt(n, f"rejected on replay: {exc}") from None
