"""Contract owner and user flows.

A user talks to enclaves through untrusted enclave services and to the
ledger directly.  Each invocation runs in three phases:

1. send a request signed with a fresh channel key;
2. check everything the enclave returned against the ledger;
3. sign the resulting CCL transaction with the channel key and submit it.

Nothing is submitted unless phase 2 passes.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Optional, Protocol, Sequence

from . import crypto
from .attestation import check_report
from .enclave import InvocationRequest, InvocationResult, invocation_message, message_bytes
from .interpreter import encode_value, parse
from .ledger import LedgerView, TransactionRejected
from .records import (
    EMPTY,
    AddEnclave,
    CclUpdate,
    ContractRecord,
    ContractRegister,
    Dependency,
    EvidenceRevoke,
    ProvisionedEnclave,
    RejectCode,
    SealedSecret,
    SignedUpdate,
    Transaction,
    contract_id_for,
    provisioning_proof_message,
    result_message,
    secret_message,
)

log = logging.getLogger(__name__)

DEFAULT_RETRIES = 3


class EnclaveServiceLike(Protocol):
    def enclave_ids(self) -> list[bytes]: ...

    def relay_provisioning(self, enclave_id: bytes, contract_id: bytes, ps_list: Sequence[bytes],
                           bundles: Sequence[SealedSecret]) -> bytes: ...

    def relay_invoke(self, enclave_id: bytes, req: InvocationRequest,
                     deps: Sequence[Dependency] = ()) -> InvocationResult: ...

    def fetch_state(self, state_hash: bytes) -> Optional[bytes]: ...


class ProvisioningLike(Protocol):
    @property
    def ps_id(self) -> bytes: ...

    def provision(self, contract_id: bytes, enclave_id: bytes) -> SealedSecret: ...


class Network(Protocol):
    ledger: LedgerView

    def es(self, addr: str) -> EnclaveServiceLike: ...

    def ps(self, addr: str) -> ProvisioningLike: ...


@dataclass
class LocalNetwork:
    """In-process wiring: addresses are just names."""

    ledger: LedgerView
    services: dict[str, EnclaveServiceLike] = field(default_factory=dict)
    provisioners: dict[str, ProvisioningLike] = field(default_factory=dict)

    def es(self, addr: str) -> EnclaveServiceLike:
        return self.services[addr]

    def ps(self, addr: str) -> ProvisioningLike:
        return self.provisioners[addr]


# -- errors -------------------------------------------------------------------

class VerificationFailed(Exception):
    """Phase-2 check failed; the result was not submitted."""

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)


class CreationAborted(Exception):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


class StateUnavailable(Exception):
    """The committed head is known but no reachable party holds its blob."""


class StaleStateConflict(Exception):
    """Lost the race for the contract head more often than the retry budget allows."""


class NoMajority(Exception):
    def __init__(self, outputs: dict[bytes, InvocationResult]):
        self.outputs = outputs
        super().__init__(f"no majority among {len(outputs)} enclave outputs")


# -- handles ------------------------------------------------------------------

@dataclass(frozen=True)
class PdoHandle:
    contract_id: bytes
    code: str
    owner_pub: bytes
    nonce: bytes
    state_hash: Optional[bytes] = None
    encrypted_state: Optional[bytes] = None
    ledger: str = "local"
    enclaves: dict[bytes, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "contract_id": self.contract_id.hex(),
            "code": self.code,
            "owner_pub": self.owner_pub.hex(),
            "nonce": self.nonce.hex(),
            "state_hash": self.state_hash.hex() if self.state_hash else None,
            "encrypted_state": self.encrypted_state.hex() if self.encrypted_state else None,
            "ledger": self.ledger,
            "enclaves": {eid.hex(): addr for eid, addr in self.enclaves.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> PdoHandle:
        def opt(v):
            return bytes.fromhex(v) if v else None
        return cls(
            contract_id=bytes.fromhex(d["contract_id"]),
            code=d["code"],
            owner_pub=bytes.fromhex(d["owner_pub"]),
            nonce=bytes.fromhex(d["nonce"]),
            state_hash=opt(d.get("state_hash")),
            encrypted_state=opt(d.get("encrypted_state")),
            ledger=d.get("ledger", "local"),
            enclaves={bytes.fromhex(k): v for k, v in d.get("enclaves", {}).items()},
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> PdoHandle:
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class ProvisioningReport:
    ps_ids: list[bytes]
    count: int
    minimum: int
    proof_checks: dict[bytes, bool]
    ps_signature_checks: dict[bytes, bool]
    attestation_checks: dict[bytes, bool]
    ok: bool


@dataclass(frozen=True)
class MisbehaviorEvidence:
    first: SignedUpdate
    second: SignedUpdate

    @property
    def enclave_id(self) -> bytes:
        return self.first.enclave_id

    def payload(self) -> EvidenceRevoke:
        return EvidenceRevoke(first=self.first, second=self.second)


@dataclass
class Prepared:
    """Outcome of phases 1 and 2, ready to commit."""

    handle: PdoHandle
    channel: crypto.SigningKeyPair
    enclave_id: bytes
    deps: tuple[Dependency, ...]
    output: InvocationResult
    result: Any


@dataclass
class ReplicatedOutcome:
    result: Any
    handle: PdoHandle
    agreeing: list[bytes]
    suspects: list[bytes]
    evidence: list[MisbehaviorEvidence]


def _as_deps(deps: Iterable[Dependency | tuple[bytes, bytes]]) -> tuple[Dependency, ...]:
    out = []
    for d in deps:
        out.append(d if isinstance(d, Dependency) else Dependency(contract_id=d[0], state_hash=d[1]))
    return tuple(out)


def verify_provisioning(contract: ContractRecord, ledger: LedgerView, minimum: int = 1) -> ProvisioningReport:
    genesis = ledger.genesis
    proofs: dict[bytes, bool] = {}
    ps_sigs: dict[bytes, bool] = {}
    attest: dict[bytes, bool] = {}
    for pe in contract.enclaves:
        enc = ledger.get_enclave(pe.enclave_id)
        if enc is None:
            proofs[pe.enclave_id] = ps_sigs[pe.enclave_id] = attest[pe.enclave_id] = False
            continue
        msg = provisioning_proof_message(contract.contract_id, contract.ps_list, pe.sealed_secrets)
        proofs[pe.enclave_id] = crypto.verify_quietly(enc.verif_pub, msg, pe.provisioning_proof)
        ps_sigs[pe.enclave_id] = {s.ps_id for s in pe.sealed_secrets} == set(contract.ps_list) and all(
            crypto.verify_quietly(s.ps_id, secret_message(contract.contract_id, pe.enclave_id, s.sealed), s.ps_sig)
            for s in pe.sealed_secrets
        )
        attest[pe.enclave_id] = check_report(enc.report, genesis.attestation_root, genesis.expected_measurement)
    count = len(contract.ps_list)
    ok = (
        count >= minimum
        and all(proofs.values())
        and all(ps_sigs.values())
        and all(attest.values())
    )
    return ProvisioningReport(list(contract.ps_list), count, minimum, proofs, ps_sigs, attest, ok)


class PdoClient:
    def __init__(
        self,
        network: Network,
        *,
        min_ps: int = 1,
        retries: int = DEFAULT_RETRIES,
        identity: crypto.SigningKeyPair | None = None,
    ):
        self.network = network
        self.ledger = network.ledger
        self.min_ps = min_ps
        self.retries = retries
        # long-term identity; deliberately never sent anywhere by the protocol
        self.identity = identity or crypto.SigningKeyPair.generate()
        self.channel_keys_used: list[bytes] = []

    # -- owner: creation ------------------------------------------------------

    def create_pdo(
        self,
        owner: crypto.SigningKeyPair,
        code: str,
        ps_addrs: Sequence[str],
        enclaves: Sequence[tuple[str, bytes]],
        *,
        init_method: str = "init",
        init_args: Sequence[Any] = (),
    ) -> PdoHandle:
        if not ps_addrs or not enclaves:
            raise ValueError("need at least one provisioning service and one enclave")
        program = parse(code)
        nonce = crypto.random_bytes(16)
        try:
            services = [self.network.ps(a) for a in ps_addrs]
            ps_list = tuple(p.ps_id for p in services)
        except Exception as exc:
            raise CreationAborted("contact-provisioning-services", exc) from exc

        reg = ContractRegister(code_hash=program.code_hash, ps_list=ps_list, nonce=nonce)
        try:
            self.ledger.submit(Transaction.build(reg, owner))
        except TransactionRejected as exc:
            raise CreationAborted("register-contract", exc) from exc
        contract_id = contract_id_for(program.code_hash, owner.public, nonce)

        # collect every secret before touching any enclave, so a refusal adds nothing
        bundles: dict[bytes, list[SealedSecret]] = {}
        try:
            for _, eid in enclaves:
                bundles[eid] = [p.provision(contract_id, eid) for p in services]
        except Exception as exc:
            raise CreationAborted("provision", exc) from exc

        for es_addr, eid in enclaves:
            try:
                proof = self.network.es(es_addr).relay_provisioning(eid, contract_id, ps_list, bundles[eid])
                pe = ProvisionedEnclave(enclave_id=eid, sealed_secrets=tuple(bundles[eid]), provisioning_proof=proof)
                self.ledger.submit(Transaction.build(AddEnclave(contract_id=contract_id, enclave=pe), owner))
            except Exception as exc:
                raise CreationAborted("add-enclave", exc) from exc

        handle = PdoHandle(
            contract_id=contract_id, code=code, owner_pub=owner.public, nonce=nonce,
            enclaves={eid: addr for addr, eid in enclaves},
        )
        _, handle = self.invoke(handle, init_method, init_args)
        return handle

    # -- user: invocation -----------------------------------------------------

    def refresh(self, handle: PdoHandle) -> PdoHandle:
        head = self.ledger.get_head(handle.contract_id)
        if head == handle.state_hash:
            return handle
        if head is None:
            return replace(handle, state_hash=None, encrypted_state=None)
        for addr in dict.fromkeys(handle.enclaves.values()):
            try:
                blob = self.network.es(addr).fetch_state(head)
            except Exception:  # an unreachable cache is just a miss
                blob = None
            if blob is not None and crypto.hash(blob) == head:
                return replace(handle, state_hash=head, encrypted_state=blob)
        raise StateUnavailable(f"no reachable copy of state {head.hex()[:16]}")

    def choose_enclave(self, handle: PdoHandle) -> bytes:
        contract = self.ledger.get_contract(handle.contract_id)
        if contract is None:
            raise VerificationFailed("unknown-contract")
        for pe in contract.enclaves:
            rec = self.ledger.get_enclave(pe.enclave_id)
            if pe.enclave_id in handle.enclaves and rec is not None and not rec.revoked:
                return pe.enclave_id
        raise VerificationFailed("no-usable-enclave")

    def _request(
        self, handle: PdoHandle, method: str, args: Sequence[Any], deps: tuple[Dependency, ...],
        channel: crypto.SigningKeyPair,
    ) -> InvocationRequest:
        args_enc = encode_value(tuple(args))
        code_hash = parse(handle.code).code_hash
        msg = message_bytes(method, args_enc)
        sig = channel.sign(invocation_message(
            handle.contract_id, code_hash, handle.owner_pub, handle.nonce, msg, channel.public, deps))
        return InvocationRequest(
            contract_id=handle.contract_id, code=handle.code, owner_pub=handle.owner_pub,
            contract_nonce=handle.nonce, encrypted_state=handle.encrypted_state,
            method=method, args=args_enc, channel_pub=channel.public, channel_sig=sig,
        )

    def check_output(
        self, handle: PdoHandle, req: InvocationRequest, deps: tuple[Dependency, ...],
        enclave_id: bytes, out: InvocationResult,
    ) -> None:
        """Phase 2.  Raises :class:`VerificationFailed` on the first failing check."""
        contract = self.ledger.get_contract(handle.contract_id)
        if contract is None or contract.revoked:
            raise VerificationFailed("contract-unusable")
        if contract.provisioned(enclave_id) is None:
            raise VerificationFailed("enclave-not-authorized", enclave_id.hex()[:16])
        rec = self.ledger.get_enclave(enclave_id)
        if rec is None or rec.revoked:
            raise VerificationFailed("enclave-revoked", enclave_id.hex()[:16])
        su = out.signed_update
        u = su.update
        if su.enclave_id != enclave_id:
            raise VerificationFailed("wrong-enclave")
        if not crypto.verify_quietly(rec.verif_pub, u.signing_message(), su.enclave_sig):
            raise VerificationFailed("bad-enclave-signature")
        if not crypto.verify_quietly(rec.verif_pub, result_message(u, out.result), out.result_sig):
            raise VerificationFailed("bad-result-signature")
        if u.contract_id != handle.contract_id:
            raise VerificationFailed("contract-mismatch")
        if u.channel_pub != req.channel_pub:
            raise VerificationFailed("channel-mismatch")
        if u.prev_state_hash != (handle.state_hash or EMPTY):
            raise VerificationFailed("prev-state-mismatch")
        if u.message_hash != crypto.hash(req.message()):
            raise VerificationFailed("message-mismatch")
        if tuple(u.dependencies) != deps:
            raise VerificationFailed("dependency-mismatch")
        if crypto.hash(out.encrypted_state) != u.new_state_hash:
            raise VerificationFailed("state-hash-mismatch")
        report = verify_provisioning(contract, self.ledger, self.min_ps)
        if not (report.ok and report.proof_checks.get(enclave_id)):
            raise VerificationFailed("provisioning-unverified")

    def prepare(
        self,
        handle: PdoHandle,
        method: str,
        args: Sequence[Any] = (),
        deps: Iterable[Dependency | tuple[bytes, bytes]] = (),
        enclave_id: bytes | None = None,
    ) -> Prepared:
        """Phases 1 and 2 against the handle's current state."""
        deps_t = _as_deps(deps)
        eid = enclave_id or self.choose_enclave(handle)
        channel = crypto.SigningKeyPair.generate()
        self.channel_keys_used.append(channel.public)
        req = self._request(handle, method, args, deps_t, channel)
        out = self.network.es(handle.enclaves[eid]).relay_invoke(eid, req, deps_t)
        self.check_output(handle, req, deps_t, eid, out)
        return Prepared(handle, channel, eid, deps_t, out, out.result_value())

    def commit(self, prepared: Prepared) -> PdoHandle:
        """Phase 3: submit under the channel key; return the advanced handle."""
        su = prepared.output.signed_update
        payload = CclUpdate(update=su.update, enclave_id=su.enclave_id, enclave_sig=su.enclave_sig)
        self.ledger.submit(Transaction.build(payload, prepared.channel))
        return replace(prepared.handle, state_hash=su.update.new_state_hash,
                       encrypted_state=prepared.output.encrypted_state)

    def invoke(
        self,
        handle: PdoHandle,
        method: str,
        args: Sequence[Any] = (),
        deps: Iterable[Dependency | tuple[bytes, bytes]] = (),
        enclave_id: bytes | None = None,
        *,
        commit: bool = True,
    ) -> tuple[Any, PdoHandle]:
        deps_t = _as_deps(deps)
        for attempt in range(self.retries + 1):
            handle = self.refresh(handle)
            prepared = self.prepare(handle, method, args, deps_t, enclave_id)
            if not commit:
                return prepared.result, handle
            try:
                return prepared.result, self.commit(prepared)
            except TransactionRejected as exc:
                if exc.code is not RejectCode.STALE_STATE:
                    raise
                log.info("stale head for %s (attempt %d), retrying", handle.contract_id.hex()[:16], attempt + 1)
        raise StaleStateConflict(f"head moved {self.retries + 1} times in a row")

    def verify_provisioning(self, contract_id: bytes, minimum: int | None = None) -> ProvisioningReport:
        contract = self.ledger.get_contract(contract_id)
        if contract is None:
            raise VerificationFailed("unknown-contract")
        return verify_provisioning(contract, self.ledger, self.min_ps if minimum is None else minimum)

    # -- replication and misbehaviour -----------------------------------------

    def replicated_invoke(
        self,
        handle: PdoHandle,
        method: str,
        args: Sequence[Any] = (),
        deps: Iterable[Dependency | tuple[bytes, bytes]] = (),
        enclave_ids: Sequence[bytes] | None = None,
        k: int = 3,
        *,
        probe: bool = True,
    ) -> ReplicatedOutcome:
        """Run the same request on ``k`` enclaves and commit the majority output.

        Enclaves in the minority are re-asked the identical request when
        ``probe`` is set; one that signs two different successors for it
        yields :class:`MisbehaviorEvidence`.
        """
        deps_t = _as_deps(deps)
        chosen = list(enclave_ids) if enclave_ids is not None else list(handle.enclaves)
        chosen = chosen[:k]
        if len(chosen) < 2:
            raise ValueError("replication needs at least two enclaves")
        handle = self.refresh(handle)
        channel = crypto.SigningKeyPair.generate()
        self.channel_keys_used.append(channel.public)
        req = self._request(handle, method, args, deps_t, channel)

        outputs: dict[bytes, InvocationResult] = {}
        suspects: list[bytes] = []
        for eid in chosen:
            try:
                out = self.network.es(handle.enclaves[eid]).relay_invoke(eid, req, deps_t)
                self.check_output(handle, req, deps_t, eid, out)
            except Exception as exc:
                log.warning("enclave %s output rejected: %s", eid.hex()[:16], exc)
                suspects.append(eid)
                continue
            outputs[eid] = out

        votes = Counter(o.update.new_state_hash for o in outputs.values())
        winner, count = votes.most_common(1)[0] if votes else (None, 0)
        if count * 2 <= len(chosen):
            raise NoMajority(outputs)
        agreeing = [eid for eid, o in outputs.items() if o.update.new_state_hash == winner]
        minority = [eid for eid, o in outputs.items() if o.update.new_state_hash != winner]
        suspects.extend(minority)

        evidence = []
        if probe:
            for eid in minority:
                try:
                    again = self.network.es(handle.enclaves[eid]).relay_invoke(eid, req, deps_t)
                except Exception:
                    continue
                first, second = outputs[eid].signed_update, again.signed_update
                if first.update.new_state_hash != second.update.new_state_hash and first.enclave_id == second.enclave_id:
                    evidence.append(MisbehaviorEvidence(first, second))

        best = outputs[agreeing[0]]
        prepared = Prepared(handle, channel, agreeing[0], deps_t, best, best.result_value())
        new_handle = self.commit(prepared)
        return ReplicatedOutcome(prepared.result, new_handle, agreeing, suspects, evidence)

    def submit_revocation(self, evidence: MisbehaviorEvidence, key: crypto.SigningKeyPair | None = None) -> bytes:
        """Anyone may submit equivocation evidence; a fresh key keeps it unlinkable."""
        return self.ledger.submit(Transaction.build(evidence.payload(), key or crypto.SigningKeyPair.generate()))
