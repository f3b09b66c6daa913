"""Simulated contract enclave.

Everything inside :class:`ContractEnclave` is the trusted computing base:
private keys, provisioned contract keys and plaintext state never leave it.
The only plaintext that crosses the boundary is a method's declared result.

The ``Compromise`` hooks exist for adversarial tests only.  An honest
deployment never sets them.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, Optional, Sequence

from . import crypto
from .attestation import DEFAULT_BUILD_ID, enclave_measurement
from .encoding import decode, encode
from .interpreter import (
    DEFAULT_MAX_STEPS,
    EMPTY_STATE,
    Assoc,
    EvalError,
    ParseError,
    StepBudget,
    ValueEncodingError,
    decode_value,
    encode_value,
    eval_method,
    parse,
)
from .records import (
    EMPTY,
    Dependency,
    Digest,
    HexBytes,
    PublicKey,
    Quote,
    Record,
    SealedSecret,
    Signature,
    SignedUpdate,
    StateUpdate,
    contract_id_for,
    key_binding,
    provisioning_proof_message,
    result_message,
    secret_message,
)

SEALED_IDENTITY_AAD = b"pdo/sealed-identity/v1"


class EnclaveError(Exception):
    code = "enclave-error"

    def __init__(self, detail: str = ""):
        self.detail = detail
        super().__init__(f"{self.code}: {detail}" if detail else self.code)


class BadRequest(EnclaveError):
    code = "bad-request"


class NotProvisioned(EnclaveError):
    code = "not-provisioned"


class TamperedState(EnclaveError):
    code = "tampered-state"


class ExecutionFailed(EnclaveError):
    code = "execution-failed"


class ProvisioningFailed(EnclaveError):
    code = "provisioning-failed"


ENCLAVE_ERRORS = {cls.code: cls for cls in (BadRequest, NotProvisioned, TamperedState, ExecutionFailed, ProvisioningFailed)}


def message_bytes(method: str, args_encoding: bytes) -> bytes:
    return encode(["pdo/message/v1", method, args_encoding])


def invocation_message(
    contract_id: bytes,
    code_hash: bytes,
    owner_pub: bytes,
    contract_nonce: bytes,
    message: bytes,
    channel_pub: bytes,
    deps: Sequence[Dependency],
) -> bytes:
    """What the invoking user signs with the channel key."""
    return encode([
        "pdo/invocation/v1", contract_id, code_hash, owner_pub, contract_nonce,
        message, channel_pub, [d.model_dump() for d in deps],
    ])


class InvocationRequest(Record):
    contract_id: Digest
    code: str
    owner_pub: PublicKey
    contract_nonce: HexBytes
    encrypted_state: Optional[HexBytes] = None
    method: str
    args: HexBytes
    channel_pub: PublicKey
    channel_sig: Signature

    def message(self) -> bytes:
        return message_bytes(self.method, self.args)


class InvocationResult(Record):
    encrypted_state: HexBytes
    result: HexBytes
    result_sig: Signature
    signed_update: SignedUpdate

    @property
    def update(self) -> StateUpdate:
        return self.signed_update.update

    def result_value(self) -> Any:
        return decode_value(self.result)


@dataclass(frozen=True)
class EnclaveIdentity:
    verif: crypto.SigningKeyPair
    enc: crypto.EncryptionKeyPair

    @property
    def enclave_id(self) -> bytes:
        return crypto.hash(self.verif.public)

    @classmethod
    def generate(cls) -> EnclaveIdentity:
        return cls(crypto.SigningKeyPair.generate(), crypto.EncryptionKeyPair.generate())


def seal_identity(platform_key: bytes, identity: EnclaveIdentity) -> bytes:
    body = encode([identity.verif.seed(), identity.enc.seed()])
    return crypto.seal_symmetric(platform_key, body, SEALED_IDENTITY_AAD)


def unseal_identity(platform_key: bytes, sealed: bytes) -> EnclaveIdentity:
    body = crypto.unseal_symmetric(platform_key, sealed, SEALED_IDENTITY_AAD)
    verif_seed, enc_seed = decode(body)
    return EnclaveIdentity(crypto.SigningKeyPair.from_seed(verif_seed), crypto.EncryptionKeyPair.from_seed(enc_seed))


@dataclass
class Compromise:
    """Test-only misbehaviour switches."""

    exfiltrate_keys: bool = False
    tamper_state: bool = False


class ContractEnclave:
    def __init__(
        self,
        identity: EnclaveIdentity,
        *,
        build_id: str = DEFAULT_BUILD_ID,
        max_steps: int = DEFAULT_MAX_STEPS,
        compromise: Compromise | None = None,
    ):
        self._identity = identity
        self.build_id = build_id
        self.max_steps = max_steps
        self.compromise = compromise
        self._keys: dict[bytes, bytes] = {}
        self._lock = threading.Lock()
        self._tamper_counter = 0

    @classmethod
    def create(cls, platform_key: bytes, **kwargs) -> tuple[ContractEnclave, Quote, bytes]:
        """Fresh enclave: returns the live instance, its quote and its sealed keys."""
        identity = EnclaveIdentity.generate()
        enclave = cls(identity, **kwargs)
        return enclave, enclave.quote(), seal_identity(platform_key, identity)

    @classmethod
    def from_sealed(cls, platform_key: bytes, sealed: bytes, **kwargs) -> ContractEnclave:
        return cls(unseal_identity(platform_key, sealed), **kwargs)

    @property
    def enclave_id(self) -> bytes:
        return self._identity.enclave_id

    @property
    def verif_pub(self) -> bytes:
        return self._identity.verif.public

    @property
    def enc_pub(self) -> bytes:
        return self._identity.enc.public

    @property
    def measurement(self) -> bytes:
        return enclave_measurement(self.build_id)

    def quote(self) -> Quote:
        return Quote(measurement=self.measurement, report_data=key_binding(self.verif_pub, self.enc_pub))

    def is_provisioned(self, contract_id: bytes) -> bool:
        with self._lock:
            return contract_id in self._keys

    # -- provisioning ---------------------------------------------------------

    def accept_provisioning(
        self, contract_id: bytes, ps_list: Sequence[bytes], bundles: Sequence[SealedSecret]
    ) -> bytes:
        """Verify and unseal every secret, derive the contract key, sign a proof.

        All-or-nothing: on any failure no key is stored.
        """
        ids = [b.ps_id for b in bundles]
        if len(set(ids)) != len(ids) or set(ids) != set(ps_list) or len(ids) != len(ps_list):
            raise ProvisioningFailed("bundles do not match the contract's provisioning services")
        secrets = []
        for b in bundles:
            if not crypto.verify_quietly(b.ps_id, secret_message(contract_id, self.enclave_id, b.sealed), b.ps_sig):
                raise ProvisioningFailed(f"bad signature from {b.ps_id.hex()[:16]}")
            try:
                value = crypto.unseal(self._identity.enc, b.sealed)
                secrets.append(crypto.Secret(value, b.ps_id))
            except (crypto.AuthenticationError, ValueError):
                raise ProvisioningFailed(f"secret from {b.ps_id.hex()[:16]} does not unseal") from None
        key = crypto.derive_state_key(secrets, contract_id)
        proof = self._identity.verif.sign(provisioning_proof_message(contract_id, ps_list, bundles))
        with self._lock:
            self._keys[contract_id] = key
        return proof

    # -- invocation -----------------------------------------------------------

    def invoke(self, req: InvocationRequest, deps: Sequence[Dependency] = ()) -> InvocationResult:
        deps = tuple(deps)
        with self._lock:
            return self._invoke(req, deps)

    def _invoke(self, req: InvocationRequest, deps: tuple[Dependency, ...]) -> InvocationResult:
        try:
            program = parse(req.code)
        except ParseError as exc:
            raise BadRequest(f"contract code does not parse: {exc}") from None
        signed = invocation_message(req.contract_id, program.code_hash, req.owner_pub, req.contract_nonce,
                                    req.message(), req.channel_pub, deps)
        if not crypto.verify_quietly(req.channel_pub, signed, req.channel_sig):
            raise BadRequest("channel signature does not verify")
        if contract_id_for(program.code_hash, req.owner_pub, req.contract_nonce) != req.contract_id:
            raise BadRequest("code does not belong to this contract")
        key = self._keys.get(req.contract_id)
        if key is None:
            raise NotProvisioned(req.contract_id.hex())

        if req.encrypted_state is None:
            prev_hash, state = EMPTY, EMPTY_STATE
        else:
            prev_hash = crypto.hash(req.encrypted_state)
            try:
                plain = crypto.decrypt_state(key, req.encrypted_state, req.contract_id)
                state = decode_value(plain[32:])
            except (crypto.AuthenticationError, ValueEncodingError):
                raise TamperedState("state does not authenticate") from None
        try:
            args = decode_value(req.args)
        except ValueEncodingError:
            raise BadRequest("arguments are not a canonical value") from None
        if type(args) is not tuple:
            raise BadRequest("arguments must be a list")

        try:
            new_state, result = eval_method(
                program, req.method, state, args,
                StepBudget(self.max_steps), caller=req.channel_pub.hex(),
            )
        except EvalError as exc:
            raise ExecutionFailed(f"{type(exc).__name__}: {exc}") from None

        if self.compromise and self.compromise.tamper_state:
            self._tamper_counter += 1
            if type(new_state) is Assoc:
                new_state = new_state.set("__tampered__", self._tamper_counter)

        # binding the predecessor into the blob keeps every chain position unique
        blob = crypto.encrypt_state(key, prev_hash + encode_value(new_state), req.contract_id)
        update = StateUpdate(
            contract_id=req.contract_id,
            prev_state_hash=prev_hash,
            new_state_hash=crypto.hash(blob),
            message_hash=crypto.hash(req.message()),
            dependencies=deps,
            channel_pub=req.channel_pub,
        )
        sig = self._identity.verif.sign(update.signing_message())
        result_enc = encode_value(result)
        return InvocationResult(
            encrypted_state=blob,
            result=result_enc,
            result_sig=self._identity.verif.sign(result_message(update, result_enc)),
            signed_update=SignedUpdate(update=update, enclave_id=self.enclave_id, enclave_sig=sig),
        )

    # -- test-only ------------------------------------------------------------

    def export_state_key(self, contract_id: bytes) -> bytes:
        if not (self.compromise and self.compromise.exfiltrate_keys):
            raise PermissionError("key export is only possible on a compromised enclave")
        with self._lock:
            return self._keys[contract_id]
