"""Records exchanged between parties and stored on the ledger.

Every record is a frozen pydantic model.  Two renderings exist:

* canonical bytes (``record.canonical()``), used for hashing and signing;
* JSON (``record.to_json()``), used on the wire, with binary fields as
  lowercase hex.

The byte strings that get signed are built by the ``*_message`` helpers at
the bottom of this module so that signers and verifiers share one
definition.
"""

from __future__ import annotations

import re
from enum import Enum
from typing import Annotated, Any, Literal, Optional, Union

from pydantic import AfterValidator, BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer

from . import crypto
from .encoding import EncodingError, decode, encode

EMPTY = bytes(32)

_HEX_RE = re.compile(r"(?:[0-9a-f]{2})*\Z")


def _from_hex(v: Any) -> Any:
    if isinstance(v, str):
        if not _HEX_RE.match(v):
            raise ValueError("expected lowercase hex")
        return bytes.fromhex(v)
    return v


def _sized(n: int):
    def check(v: bytes) -> bytes:
        if len(v) != n:
            raise ValueError(f"expected {n} bytes, got {len(v)}")
        return v
    return check


_hex_ser = PlainSerializer(lambda b: b.hex(), return_type=str, when_used="json")

HexBytes = Annotated[bytes, BeforeValidator(_from_hex), _hex_ser]
Digest = Annotated[bytes, BeforeValidator(_from_hex), AfterValidator(_sized(32)), _hex_ser]
PublicKey = Annotated[bytes, BeforeValidator(_from_hex), AfterValidator(_sized(32)), _hex_ser]
Signature = Annotated[bytes, BeforeValidator(_from_hex), AfterValidator(_sized(64)), _hex_ser]


class Record(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    def canonical(self) -> bytes:
        return encode(self.model_dump())

    @classmethod
    def from_canonical(cls, data: bytes):
        obj = cls.model_validate(decode(data))
        if obj.canonical() != data:
            raise EncodingError(f"non-canonical {cls.__name__} encoding")
        return obj

    def to_json(self) -> dict[str, Any]:
        return self.model_dump(mode="json")

    @classmethod
    def from_json(cls, data: dict[str, Any]):
        return cls.model_validate(data)


class RejectCode(str, Enum):
    BAD_SIGNATURE = "bad-signature"
    UNKNOWN_ENCLAVE = "unknown-enclave"
    UNKNOWN_CONTRACT = "unknown-contract"
    STALE_STATE = "stale-state"
    MISSING_DEPENDENCY = "missing-dependency"
    REVOKED = "revoked"
    DUPLICATE = "duplicate"
    MALFORMED = "malformed"
    BAD_ATTESTATION = "bad-attestation"
    NOT_OWNER = "not-owner"


# -- attestation --------------------------------------------------------------

class Quote(Record):
    measurement: Digest
    report_data: Digest


class VerificationReport(Record):
    quote: Quote
    verdict: Literal["OK", "FAILED"]
    nonce: HexBytes
    sig: Signature


def key_binding(verif_pub: bytes, enc_pub: bytes) -> bytes:
    """The report_data an enclave quote must carry for its two public keys."""
    return crypto.hash(verif_pub + enc_pub)


def report_message(quote: Quote, verdict: str, nonce: bytes) -> bytes:
    return encode(["pdo/ias-report/v1", quote.model_dump(), verdict, nonce])


# -- state updates ------------------------------------------------------------

class Dependency(Record):
    contract_id: Digest
    state_hash: Digest


class StateUpdate(Record):
    contract_id: Digest
    prev_state_hash: Digest
    new_state_hash: Digest
    message_hash: Digest
    dependencies: tuple[Dependency, ...] = ()
    channel_pub: PublicKey

    def signing_message(self) -> bytes:
        return encode(["pdo/state-update/v1", self.model_dump()])


class SignedUpdate(Record):
    update: StateUpdate
    enclave_id: Digest
    enclave_sig: Signature


def result_message(update: StateUpdate, result_encoding: bytes) -> bytes:
    return encode(["pdo/invocation-result/v1", crypto.hash(update.signing_message()), result_encoding])


# -- provisioning -------------------------------------------------------------

class SealedSecret(Record):
    ps_id: PublicKey
    sealed: HexBytes
    ps_sig: Signature


class ProvisionedEnclave(Record):
    enclave_id: Digest
    sealed_secrets: tuple[SealedSecret, ...]
    provisioning_proof: Signature


def secret_message(contract_id: bytes, enclave_id: bytes, sealed: bytes) -> bytes:
    return encode(["pdo/ps-secret/v1", contract_id, enclave_id, sealed])


def provisioning_proof_message(contract_id: bytes, ps_list, sealed_secrets) -> bytes:
    bundle_hash = crypto.hash(encode([s.model_dump() for s in sealed_secrets]))
    return encode(["pdo/provisioning-proof/v1", contract_id, list(ps_list), bundle_hash])


def contract_id_for(code_hash: bytes, owner_pub: bytes, nonce: bytes) -> bytes:
    return crypto.hash(code_hash + owner_pub + nonce)


# -- ledger registries --------------------------------------------------------

class EnclaveRecord(Record):
    enclave_id: Digest
    verif_pub: PublicKey
    enc_pub: PublicKey
    owner_pub: PublicKey
    report: VerificationReport
    revoked: bool = False


class ContractRecord(Record):
    contract_id: Digest
    code_hash: Digest
    owner_pub: PublicKey
    nonce: HexBytes
    ps_list: tuple[PublicKey, ...]
    enclaves: tuple[ProvisionedEnclave, ...] = ()
    revoked: bool = False

    def provisioned(self, enclave_id: bytes) -> Optional[ProvisionedEnclave]:
        for pe in self.enclaves:
            if pe.enclave_id == enclave_id:
                return pe
        return None


class CclEntry(Record):
    contract_id: Digest
    prev_state_hash: Digest
    new_state_hash: Digest
    message_hash: Digest
    dependencies: tuple[Dependency, ...] = ()
    enclave_id: Digest
    enclave_sig: Signature
    channel_pub: PublicKey
    channel_sig: Signature

    def state_update(self) -> StateUpdate:
        return StateUpdate(
            contract_id=self.contract_id,
            prev_state_hash=self.prev_state_hash,
            new_state_hash=self.new_state_hash,
            message_hash=self.message_hash,
            dependencies=self.dependencies,
            channel_pub=self.channel_pub,
        )


# -- transaction payloads -----------------------------------------------------

class EnclaveRegister(Record):
    op: Literal["enclave-register"] = "enclave-register"
    enclave_id: Digest
    verif_pub: PublicKey
    enc_pub: PublicKey
    owner_pub: PublicKey
    report: VerificationReport


class EnclaveRevoke(Record):
    op: Literal["enclave-revoke"] = "enclave-revoke"
    enclave_id: Digest


class EvidenceRevoke(Record):
    op: Literal["evidence-revoke"] = "evidence-revoke"
    first: SignedUpdate
    second: SignedUpdate


class ContractRegister(Record):
    op: Literal["contract-register"] = "contract-register"
    code_hash: Digest
    ps_list: tuple[PublicKey, ...]
    nonce: HexBytes


class AddEnclave(Record):
    op: Literal["add-enclave"] = "add-enclave"
    contract_id: Digest
    enclave: ProvisionedEnclave


class RemoveEnclave(Record):
    op: Literal["remove-enclave"] = "remove-enclave"
    contract_id: Digest
    enclave_id: Digest


class ContractRevoke(Record):
    op: Literal["contract-revoke"] = "contract-revoke"
    contract_id: Digest


class CclUpdate(Record):
    op: Literal["ccl-update"] = "ccl-update"
    update: StateUpdate
    enclave_id: Digest
    enclave_sig: Signature


Payload = Annotated[
    Union[
        EnclaveRegister, EnclaveRevoke, EvidenceRevoke,
        ContractRegister, AddEnclave, RemoveEnclave, ContractRevoke,
        CclUpdate,
    ],
    Field(discriminator="op"),
]

Family = Literal["enclave-registry", "contract-registry", "ccl"]

FAMILY_OF_OP: dict[str, str] = {
    "enclave-register": "enclave-registry",
    "enclave-revoke": "enclave-registry",
    "evidence-revoke": "enclave-registry",
    "contract-register": "contract-registry",
    "add-enclave": "contract-registry",
    "remove-enclave": "contract-registry",
    "contract-revoke": "contract-registry",
    "ccl-update": "ccl",
}


def transaction_message(family: str, payload: BaseModel) -> bytes:
    return encode(["pdo/txn/v1", family, payload.model_dump()])


class Transaction(Record):
    family: Family
    payload: Payload
    submitter_pub: PublicKey
    submitter_sig: Signature

    @classmethod
    def build(cls, payload: BaseModel, key: crypto.SigningKeyPair) -> Transaction:
        family = FAMILY_OF_OP[payload.op]  # type: ignore[attr-defined]
        sig = key.sign(transaction_message(family, payload))
        return cls(family=family, payload=payload, submitter_pub=key.public, submitter_sig=sig)

    @property
    def txn_id(self) -> bytes:
        return crypto.hash(self.canonical())

    def signing_message(self) -> bytes:
        return transaction_message(self.family, self.payload)
