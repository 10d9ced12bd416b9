"""Tests for the crypto primitives: seal/open, key wrapping, signatures, keys."""

import random
from dataclasses import replace

import pytest

from src.crypto import (
    Digest,
    KeyPair,
    digest,
    generate_keypair,
    generate_session_key,
    key_id_of,
    open_sealed,
    private_key_from_pem,
    public_key_from_pem,
    seal,
    sign,
    unwrap_key,
    verify,
    wrap_key,
)
from src.errors import CryptoError


class TestSealOpen:
    def test_open_recovers_random_plaintexts(self):
        rng = random.Random(500)
        for _ in range(500):
            message = rng.randbytes(rng.randint(1, 4096))
            k_m = generate_session_key()
            assert open_sealed(seal(message, k_m), k_m) == message

    def test_empty_plaintext(self):
        k_m = generate_session_key()
        assert open_sealed(seal(b"", k_m), k_m) == b""

    def test_nonce_is_fresh_per_seal(self):
        k_m = generate_session_key()
        first, second = seal(b"same message", k_m), seal(b"same message", k_m)
        assert first.nonce != second.nonce
        assert first.body != second.body

    def test_wrong_key_fails_authentication(self):
        sealed = seal(b"indicator bundle", generate_session_key())
        with pytest.raises(CryptoError) as e:
            open_sealed(sealed, generate_session_key())
        assert e.value.code == "AUTH_FAILURE"

    @pytest.mark.parametrize("part", ["nonce", "body", "auth_tag"])
    def test_any_flipped_octet_fails_authentication(self, part):
        k_m = generate_session_key()
        sealed = seal(b"indicator bundle payload", k_m)
        original = getattr(sealed, part)
        for index in range(len(original)):
            flipped = bytearray(original)
            flipped[index] ^= 0x01
            with pytest.raises(CryptoError) as e:
                open_sealed(replace(sealed, **{part: bytes(flipped)}), k_m)
            assert e.value.code == "AUTH_FAILURE"

    def test_associated_data_must_match(self):
        k_m = generate_session_key()
        sealed = seal(b"indicator bundle", k_m, associated_data=b"header-a")
        assert open_sealed(sealed, k_m, b"header-a") == b"indicator bundle"
        for other in (b"header-b", None):
            with pytest.raises(CryptoError) as e:
                open_sealed(sealed, k_m, other)
            assert e.value.code == "AUTH_FAILURE"

    def test_truncated_tag_fails_authentication(self):
        k_m = generate_session_key()
        sealed = seal(b"payload", k_m)
        with pytest.raises(CryptoError) as e:
            open_sealed(replace(sealed, auth_tag=sealed.auth_tag[:8]), k_m)
        assert e.value.code == "AUTH_FAILURE"

    def test_plaintext_size_limit(self):
        with pytest.raises(CryptoError) as e:
            seal(b"x" * 65, generate_session_key(), max_size=64)
        assert e.value.code == "PLAINTEXT_TOO_LARGE"
        assert e.value.exit_code == 4


class TestKeyWrapping:
    def test_unwrap_recovers_session_key(self, key_pool):
        keypair = key_pool.take()
        k_m = generate_session_key()
        wrapped = wrap_key(k_m, keypair.public_key)
        assert wrapped.recipient_key_id == keypair.key_id
        assert unwrap_key(wrapped, keypair.private_key) == k_m

    def test_wrapping_is_randomized(self, key_pool):
        keypair = key_pool.take()
        k_m = generate_session_key()
        assert wrap_key(k_m, keypair.public_key).value != wrap_key(k_m, keypair.public_key).value

    def test_unwrap_with_other_key_fails(self, key_pool):
        recipient, other = key_pool.take(), key_pool.take()
        wrapped = wrap_key(generate_session_key(), recipient.public_key)
        with pytest.raises(CryptoError) as e:
            unwrap_key(wrapped, other.private_key)
        assert e.value.code == "UNWRAP_FAILURE"

    def test_unwrap_rejects_public_key(self, key_pool):
        keypair = key_pool.take()
        wrapped = wrap_key(generate_session_key(), keypair.public_key)
        with pytest.raises(CryptoError) as e:
            unwrap_key(wrapped, keypair.public_key)
        assert e.value.code == "UNWRAP_FAILURE"


class TestSignatures:
    def test_sign_and_verify(self, key_pool):
        keypair = key_pool.take()
        signature = sign(b"block 7", keypair.private_key)
        assert signature.signer_key_id == keypair.key_id
        assert verify(b"block 7", signature, keypair.public_key)

    def test_modified_data_does_not_verify(self, key_pool):
        keypair = key_pool.take()
        signature = sign(b"block 7", keypair.private_key)
        assert not verify(b"block 8", signature, keypair.public_key)

    def test_other_key_does_not_verify(self, key_pool):
        signer, other = key_pool.take(), key_pool.take()
        signature = sign(b"payload", signer.private_key)
        assert not verify(b"payload", signature, other.public_key)

    def test_verify_needs_public_key(self, key_pool):
        keypair = key_pool.take()
        with pytest.raises(CryptoError) as e:
            verify(b"x", sign(b"x", keypair.private_key), "not a key")
        assert e.value.code == "MALFORMED_KEY"


class TestKeys:
    def test_pem_forms_preserve_key_id(self, key_pool):
        keypair = key_pool.take()
        assert "TIPS PUBLIC KEY" in keypair.public_key_pem()
        assert key_id_of(public_key_from_pem(keypair.public_key_pem())) == keypair.key_id
        restored = KeyPair.from_private_key(private_key_from_pem(keypair.private_key_pem()))
        assert restored.key_id == keypair.key_id

    def test_malformed_pem(self):
        with pytest.raises(CryptoError) as e:
            public_key_from_pem("-----BEGIN TIPS PUBLIC KEY-----\nnope\n-----END TIPS PUBLIC KEY-----\n")
        assert e.value.code == "MALFORMED_KEY"

    def test_unseeded_keys_differ(self):
        assert generate_keypair().key_id != generate_keypair().key_id

    def test_equal_seeds_give_identical_keys(self):
        seed = bytes(range(32))
        first, second = generate_keypair(seed), generate_keypair(seed)
        assert first.private_key_pem() == second.private_key_pem()
        assert generate_keypair(bytes(range(1, 33))).key_id != first.key_id

    def test_short_seed_is_refused(self):
        with pytest.raises(CryptoError) as e:
            generate_keypair(b"too short")
        assert e.value.code == "WEAK_SEED"


class TestDigest:
    def test_sha256_vector(self):
        assert digest(b"abc").hex == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"

    def test_hex_form(self):
        value = digest(b"payload")
        assert Digest.from_hex(value.hex) == value
        assert str(value) == value.hex

    def test_length_is_enforced(self):
        with pytest.raises(ValueError):
            Digest(b"short")
        with pytest.raises(ValueError):
            Digest.from_hex("zz")
