"""Cryptographic primitives shared by every party.

Ed25519 signatures, X25519 + AES-256-GCM public-key sealing, deterministic
(synthetic-nonce) AES-256-GCM for contract state, and the derivation of a
contract state key from provisioned secrets.

All randomness flows through :func:`random_bytes`.  By default that is the
OS CSPRNG; :func:`seeded` swaps in a reproducible stream so scenarios can be
replayed bit for bit.  Seeded mode is for simulations only.
"""

from __future__ import annotations

import contextlib
import hashlib
import os
import random
import threading
from dataclasses import dataclass, field
from typing import Iterator, Sequence

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

DIGEST_SIZE = 32
KEY_SIZE = 32
SECRET_SIZE = 32
SIGNATURE_SIZE = 64
NONCE_SIZE = 12
MAX_SEAL_SIZE = 64 * 1024

STATE_KEY_LABEL = b"pdo/state-key/v1"
SEAL_LABEL = b"pdo/seal/v1"

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw
_RAW_PRIV = serialization.PrivateFormat.Raw
_NO_ENC = serialization.NoEncryption()


class CryptoError(Exception):
    """Base class for crypto failures."""


class DecodeError(CryptoError):
    """A key or signature does not have a valid encoding."""


class AuthenticationError(CryptoError):
    """Authenticated decryption failed; no plaintext is released."""


# -- randomness ---------------------------------------------------------------

_rng_local = threading.local()


def random_bytes(n: int) -> bytes:
    rng = getattr(_rng_local, "rng", None)
    if rng is None:
        return os.urandom(n)
    return rng.randbytes(n)


@contextlib.contextmanager
def seeded(seed: int) -> Iterator[None]:
    """Make :func:`random_bytes` deterministic on this thread (NOT secure)."""
    previous = getattr(_rng_local, "rng", None)
    _rng_local.rng = random.Random(seed)
    try:
        yield
    finally:
        _rng_local.rng = previous


# -- hashing ------------------------------------------------------------------

def hash(data: bytes) -> bytes:  # noqa: A001 - mirrors the protocol vocabulary
    return hashlib.sha256(data).digest()


def hexdigest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# -- signatures ---------------------------------------------------------------

@dataclass(frozen=True)
class SigningKeyPair:
    private: Ed25519PrivateKey = field(repr=False)
    public: bytes

    @classmethod
    def generate(cls) -> SigningKeyPair:
        return cls.from_seed(random_bytes(32))

    @classmethod
    def from_seed(cls, seed: bytes) -> SigningKeyPair:
        if len(seed) != 32:
            raise DecodeError("signing key seed must be 32 bytes")
        priv = Ed25519PrivateKey.from_private_bytes(seed)
        return cls(priv, priv.public_key().public_bytes(_RAW, _RAW_PUB))

    def seed(self) -> bytes:
        return self.private.private_bytes(_RAW, _RAW_PRIV, _NO_ENC)

    def sign(self, msg: bytes) -> bytes:
        return self.private.sign(msg)


def sign(key: SigningKeyPair, msg: bytes) -> bytes:
    return key.sign(msg)


def load_verification_key(pub: bytes) -> Ed25519PublicKey:
    if len(pub) != 32:
        raise DecodeError(f"verification key must be 32 bytes, got {len(pub)}")
    try:
        return Ed25519PublicKey.from_public_bytes(pub)
    except ValueError as exc:
        raise DecodeError(str(exc)) from exc


def verify(pub: bytes, msg: bytes, sig: bytes) -> bool:
    """Check ``sig`` over ``msg``.  Malformed encodings raise :class:`DecodeError`."""
    key = load_verification_key(pub)
    if len(sig) != SIGNATURE_SIZE:
        raise DecodeError(f"signature must be {SIGNATURE_SIZE} bytes, got {len(sig)}")
    try:
        key.verify(sig, msg)
    except InvalidSignature:
        return False
    return True


def verify_quietly(pub: bytes, msg: bytes, sig: bytes) -> bool:
    """Like :func:`verify` but treats malformed encodings as a failed check."""
    try:
        return verify(pub, msg, sig)
    except DecodeError:
        return False


# -- public-key sealing -------------------------------------------------------

@dataclass(frozen=True)
class EncryptionKeyPair:
    private: X25519PrivateKey = field(repr=False)
    public: bytes

    @classmethod
    def generate(cls) -> EncryptionKeyPair:
        return cls.from_seed(random_bytes(32))

    @classmethod
    def from_seed(cls, seed: bytes) -> EncryptionKeyPair:
        if len(seed) != 32:
            raise DecodeError("encryption key seed must be 32 bytes")
        priv = X25519PrivateKey.from_private_bytes(seed)
        return cls(priv, priv.public_key().public_bytes(_RAW, _RAW_PUB))

    def seed(self) -> bytes:
        return self.private.private_bytes(_RAW, _RAW_PRIV, _NO_ENC)


def _seal_key(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(SHA256(), KEY_SIZE, salt=None, info=SEAL_LABEL + eph_pub + recipient_pub).derive(shared)


def seal_to(pub: bytes, msg: bytes) -> bytes:
    """Hybrid-encrypt ``msg`` to an X25519 public key.  Output: eph_pub || nonce || ct."""
    if not 0 < len(msg) <= MAX_SEAL_SIZE:
        raise ValueError(f"sealed message must be 1..{MAX_SEAL_SIZE} bytes")
    if len(pub) != 32:
        raise DecodeError("encryption key must be 32 bytes")
    try:
        recipient = X25519PublicKey.from_public_bytes(pub)
    except ValueError as exc:
        raise DecodeError(str(exc)) from exc
    eph = EncryptionKeyPair.generate()
    key = _seal_key(eph.private.exchange(recipient), eph.public, pub)
    nonce = random_bytes(NONCE_SIZE)
    return eph.public + nonce + AESGCM(key).encrypt(nonce, msg, eph.public + pub)


def unseal(key: EncryptionKeyPair, ct: bytes) -> bytes:
    if len(ct) < 32 + NONCE_SIZE + 16:
        raise AuthenticationError("sealed blob too short")
    eph_pub, nonce, body = ct[:32], ct[32:32 + NONCE_SIZE], ct[32 + NONCE_SIZE:]
    try:
        shared = key.private.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        sym = _seal_key(shared, eph_pub, key.public)
        return AESGCM(sym).decrypt(nonce, body, eph_pub + key.public)
    except (InvalidTag, ValueError) as exc:
        raise AuthenticationError("unseal failed") from exc


# -- secrets and state keys ---------------------------------------------------

@dataclass(frozen=True)
class Secret:
    value: bytes = field(repr=False)
    ps_id: bytes

    def __post_init__(self) -> None:
        if len(self.value) != SECRET_SIZE:
            raise ValueError(f"secret must be {SECRET_SIZE} bytes")


def derive_state_key(secrets: Sequence[Secret], contract_id: bytes) -> bytes:
    """Combine every provisioning service's secret into one contract key.

    Secrets are ordered by ``ps_id`` so the caller's ordering is irrelevant.
    Without every secret the hash preimage is unknown, so a single honest
    provisioning service suffices to keep the key private.
    """
    if not secrets:
        raise ValueError("at least one secret is required")
    ordered = sorted(secrets, key=lambda s: s.ps_id)
    for a, b in zip(ordered, ordered[1:]):
        if a.ps_id == b.ps_id:
            raise ValueError(f"duplicate provisioning service {a.ps_id.hex()}")
    if len(contract_id) != DIGEST_SIZE:
        raise ValueError("contract_id must be a 32-byte digest")
    return hash(STATE_KEY_LABEL + contract_id + b"".join(s.value for s in ordered))


# -- deterministic state encryption ------------------------------------------

def _check_key(key: bytes) -> None:
    if len(key) != KEY_SIZE:
        raise ValueError(f"symmetric key must be {KEY_SIZE} bytes")


def synthetic_nonce(key: bytes, plaintext: bytes, aad: bytes) -> bytes:
    return hash(key + hash(plaintext) + aad)[:NONCE_SIZE]


def encrypt_state(key: bytes, plaintext: bytes, aad: bytes) -> bytes:
    """Deterministic AEAD: identical (key, plaintext, aad) give identical output."""
    _check_key(key)
    nonce = synthetic_nonce(key, plaintext, aad)
    return nonce + AESGCM(key).encrypt(nonce, plaintext, aad)


def decrypt_state(key: bytes, ct: bytes, aad: bytes) -> bytes:
    _check_key(key)
    if len(ct) < NONCE_SIZE + 16:
        raise AuthenticationError("state ciphertext too short")
    nonce = ct[:NONCE_SIZE]
    try:
        plaintext = AESGCM(key).decrypt(nonce, ct[NONCE_SIZE:], aad)
    except InvalidTag as exc:
        raise AuthenticationError("state authentication failed") from exc
    if synthetic_nonce(key, plaintext, aad) != nonce:
        raise AuthenticationError("state nonce does not match contents")
    return plaintext


# -- randomized symmetric sealing (platform storage) -------------------------

def seal_symmetric(key: bytes, data: bytes, aad: bytes = b"") -> bytes:
    _check_key(key)
    nonce = random_bytes(NONCE_SIZE)
    return nonce + AESGCM(key).encrypt(nonce, data, aad)


def unseal_symmetric(key: bytes, blob: bytes, aad: bytes = b"") -> bytes:
    _check_key(key)
    try:
        return AESGCM(key).decrypt(blob[:NONCE_SIZE], blob[NONCE_SIZE:], aad)
    except (InvalidTag, ValueError) as exc:
        raise AuthenticationError("sealed storage authentication failed") from exc
