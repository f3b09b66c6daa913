import itertools

import pytest
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from hypothesis import given, settings
from hypothesis import strategies as st

from pdo import crypto


def test_sha256_known_vectors():
    assert crypto.hash(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert crypto.hash(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_ed25519_rfc8032_vector_1():
    seed = bytes.fromhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
    key = crypto.SigningKeyPair.from_seed(seed)
    assert key.public.hex() == "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a"
    sig = key.sign(b"")
    assert sig.hex() == (
        "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e06522490155"
        "5fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
    )
    assert crypto.verify(key.public, b"", sig)


def test_sign_verify_round_trip_and_rejections():
    key = crypto.SigningKeyPair.generate()
    other = crypto.SigningKeyPair.generate()
    sig = crypto.sign(key, b"message")
    assert crypto.verify(key.public, b"message", sig)
    assert not crypto.verify(key.public, b"messagf", sig)
    assert not crypto.verify(other.public, b"message", sig)
    bad = bytearray(sig)
    bad[10] ^= 1
    assert not crypto.verify(key.public, b"message", bytes(bad))


def test_malformed_key_or_signature_is_a_decode_error():
    key = crypto.SigningKeyPair.generate()
    sig = key.sign(b"m")
    with pytest.raises(crypto.DecodeError):
        crypto.verify(key.public[:31], b"m", sig)
    with pytest.raises(crypto.DecodeError):
        crypto.verify(key.public, b"m", sig[:63])
    assert crypto.verify_quietly(key.public[:31], b"m", sig) is False


def test_seed_round_trip():
    key = crypto.SigningKeyPair.generate()
    assert crypto.SigningKeyPair.from_seed(key.seed()).public == key.public
    enc = crypto.EncryptionKeyPair.generate()
    assert crypto.EncryptionKeyPair.from_seed(enc.seed()).public == enc.public


def test_seeded_randomness_is_reproducible():
    with crypto.seeded(42):
        a = [crypto.random_bytes(16), crypto.SigningKeyPair.generate().public]
    with crypto.seeded(42):
        b = [crypto.random_bytes(16), crypto.SigningKeyPair.generate().public]
    with crypto.seeded(43):
        c = [crypto.random_bytes(16), crypto.SigningKeyPair.generate().public]
    assert a == b
    assert a != c
    # outside the context randomness is real again
    assert crypto.random_bytes(16) != crypto.random_bytes(16)


# -- sealing ------------------------------------------------------------------

def test_seal_round_trip_and_tamper():
    rcpt = crypto.EncryptionKeyPair.generate()
    ct = crypto.seal_to(rcpt.public, b"top secret")
    assert crypto.unseal(rcpt, ct) == b"top secret"
    for i in (0, 40, len(ct) - 1):
        bad = bytearray(ct)
        bad[i] ^= 0x80
        with pytest.raises(crypto.AuthenticationError):
            crypto.unseal(rcpt, bytes(bad))
    with pytest.raises(crypto.AuthenticationError):
        crypto.unseal(crypto.EncryptionKeyPair.generate(), ct)
    with pytest.raises(crypto.AuthenticationError):
        crypto.unseal(rcpt, ct[:20])


def test_sealing_is_randomized():
    rcpt = crypto.EncryptionKeyPair.generate()
    assert crypto.seal_to(rcpt.public, b"x") != crypto.seal_to(rcpt.public, b"x")


def test_seal_size_limits():
    rcpt = crypto.EncryptionKeyPair.generate()
    big = b"a" * crypto.MAX_SEAL_SIZE
    assert crypto.unseal(rcpt, crypto.seal_to(rcpt.public, big)) == big
    with pytest.raises(ValueError):
        crypto.seal_to(rcpt.public, big + b"a")
    with pytest.raises(ValueError):
        crypto.seal_to(rcpt.public, b"")
    with pytest.raises(crypto.DecodeError):
        crypto.seal_to(b"short", b"x")


# -- state key derivation -----------------------------------------------------

def _secrets(n):
    return [crypto.Secret(crypto.random_bytes(32), crypto.SigningKeyPair.generate().public) for _ in range(n)]


def test_state_key_is_deterministic_and_order_independent():
    cid = crypto.hash(b"contract")
    secrets = _secrets(4)
    key = crypto.derive_state_key(secrets, cid)
    assert len(key) == 32
    for perm in itertools.permutations(secrets):
        assert crypto.derive_state_key(list(perm), cid) == key
    assert crypto.derive_state_key(secrets, crypto.hash(b"other")) != key


@pytest.mark.parametrize("n", [1, 2, 3])
def test_state_key_depends_on_every_bit_of_every_secret(n):
    cid = crypto.hash(b"contract")
    secrets = _secrets(n)
    key = crypto.derive_state_key(secrets, cid)
    seen = {key}
    for i, s in enumerate(secrets):
        for bit in range(256):
            value = bytearray(s.value)
            value[bit // 8] ^= 1 << (bit % 8)
            flipped = secrets[:i] + [crypto.Secret(bytes(value), s.ps_id)] + secrets[i + 1:]
            seen.add(crypto.derive_state_key(flipped, cid))
    assert len(seen) == 1 + 256 * n


def test_state_key_rejects_empty_and_duplicate_sets():
    cid = crypto.hash(b"c")
    with pytest.raises(ValueError):
        crypto.derive_state_key([], cid)
    s = _secrets(1)[0]
    with pytest.raises(ValueError):
        crypto.derive_state_key([s, crypto.Secret(crypto.random_bytes(32), s.ps_id)], cid)
    with pytest.raises(ValueError):
        crypto.Secret(b"short", s.ps_id)


@settings(max_examples=50, deadline=None)
@given(st.permutations(range(5)))
def test_state_key_order_independence_property(order):
    secrets = [crypto.Secret(bytes([i]) * 32, bytes([i + 1]) * 32) for i in range(5)]
    cid = bytes(32)
    assert crypto.derive_state_key([secrets[i] for i in order], cid) == crypto.derive_state_key(secrets, cid)


# -- deterministic state encryption ------------------------------------------

KEY = bytes(range(32))
AAD = crypto.hash(b"contract-id")


def test_state_encryption_is_deterministic():
    a = crypto.encrypt_state(KEY, b"state", AAD)
    assert a == crypto.encrypt_state(KEY, b"state", AAD)
    assert a != crypto.encrypt_state(KEY, b"statf", AAD)
    assert a != crypto.encrypt_state(KEY, b"state", crypto.hash(b"x"))
    assert crypto.decrypt_state(KEY, a, AAD) == b"state"


def test_state_decryption_rejects_wrong_key_and_context():
    ct = crypto.encrypt_state(KEY, b"state", AAD)
    with pytest.raises(crypto.AuthenticationError):
        crypto.decrypt_state(bytes(32), ct, AAD)
    with pytest.raises(crypto.AuthenticationError):
        crypto.decrypt_state(KEY, ct, crypto.hash(b"other"))
    with pytest.raises(crypto.AuthenticationError):
        crypto.decrypt_state(KEY, ct[:20], AAD)
    with pytest.raises(ValueError):
        crypto.encrypt_state(b"short", b"x", AAD)


def test_state_decryption_rejects_a_nonce_that_does_not_match_the_contents():
    # valid AEAD under the right key, but not the synthetic nonce for this plaintext
    nonce = bytes(12)
    forged = nonce + AESGCM(KEY).encrypt(nonce, b"state", AAD)
    with pytest.raises(crypto.AuthenticationError):
        crypto.decrypt_state(KEY, forged, AAD)


@settings(max_examples=200, deadline=None)
@given(st.binary(min_size=0, max_size=300), st.data())
def test_any_single_byte_change_fails_authentication(plaintext, data):
    ct = crypto.encrypt_state(KEY, plaintext, AAD)
    pos = data.draw(st.integers(0, len(ct) - 1))
    delta = data.draw(st.integers(1, 255))
    bad = bytearray(ct)
    bad[pos] ^= delta
    with pytest.raises(crypto.AuthenticationError):
        crypto.decrypt_state(KEY, bytes(bad), AAD)


def test_symmetric_sealing_round_trip():
    blob = crypto.seal_symmetric(KEY, b"platform data", b"aad")
    assert crypto.unseal_symmetric(KEY, blob, b"aad") == b"platform data"
    with pytest.raises(crypto.AuthenticationError):
        crypto.unseal_symmetric(KEY, blob, b"other")
