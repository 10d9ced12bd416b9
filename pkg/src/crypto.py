"""
Cryptographic primitives for the exchange protocol.

Key pairs are RSA-2048 (OAEP-SHA256 for key wrapping, PSS-SHA256 for
signatures), session keys are 32 random octets used with AES-256-GCM and
digests are SHA-256. Every value type here is immutable.
"""
import hashlib
import logging
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, Optional, Union

from Crypto.Hash import SHAKE256
from Crypto.PublicKey import RSA as SeededRSA
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .canonical import b64decode, b64encode
from .errors import CryptoError

logger = logging.getLogger(__name__)

RSA_KEY_BITS = 2048
RSA_PUBLIC_EXPONENT = 65537
SESSION_KEY_SIZE = 32
NONCE_SIZE = 12
TAG_SIZE = 16
DIGEST_SIZE = 32
MIN_SEED_SIZE = 32
DEFAULT_MAX_PLAINTEXT = 16 * 1024 * 1024

PUBLIC_KEY_LABEL = "TIPS PUBLIC KEY"
PRIVATE_KEY_LABEL = "TIPS PRIVATE KEY"

_OAEP = padding.OAEP(mgf=padding.MGF1(algorithm=hashes.SHA256()), algorithm=hashes.SHA256(), label=None)
_PSS = padding.PSS(mgf=padding.MGF1(hashes.SHA256()), salt_length=padding.PSS.DIGEST_LENGTH)


@dataclass(frozen=True)
class Digest:
    """32-octet SHA-256 value"""
    value: bytes

    def __post_init__(self):
        if len(self.value) != DIGEST_SIZE:
            raise ValueError(f"Digest must be {DIGEST_SIZE} octets, got {len(self.value)}")

    @property
    def hex(self) -> str:
        return self.value.hex()

    @classmethod
    def from_hex(cls, text: str) -> 'Digest':
        try:
            return cls(bytes.fromhex(text))
        except (ValueError, TypeError) as e:
            raise ValueError(f"Invalid digest hex: {text!r}") from e

    def __str__(self) -> str:
        return self.hex


@dataclass(frozen=True)
class SessionKey:
    """Symmetric message key k_m"""
    value: bytes = field(repr=False)

    def __post_init__(self):
        if len(self.value) != SESSION_KEY_SIZE:
            raise ValueError(f"Session key must be {SESSION_KEY_SIZE} octets")


@dataclass(frozen=True)
class Ciphertext:
    """AES-GCM output c, with the tag split from the body"""
    nonce: bytes
    body: bytes
    auth_tag: bytes

    def to_dict(self) -> Dict[str, str]:
        return {
            'nonce': b64encode(self.nonce),
            'body': b64encode(self.body),
            'auth_tag': b64encode(self.auth_tag),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Ciphertext':
        return cls(
            nonce=b64decode(data['nonce']),
            body=b64decode(data['body']),
            auth_tag=b64decode(data['auth_tag']),
        )


@dataclass(frozen=True)
class WrappedKey:
    """Session key encrypted to one recipient (k_s)"""
    value: bytes
    recipient_key_id: Digest

    def to_dict(self) -> Dict[str, str]:
        return {'value': b64encode(self.value), 'recipient_key_id': self.recipient_key_id.hex}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'WrappedKey':
        return cls(value=b64decode(data['value']), recipient_key_id=Digest.from_hex(data['recipient_key_id']))


@dataclass(frozen=True)
class Signature:
    value: bytes
    signer_key_id: Digest

    def to_dict(self) -> Dict[str, str]:
        return {'value': b64encode(self.value), 'signer_key_id': self.signer_key_id.hex}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Signature':
        return cls(value=b64decode(data['value']), signer_key_id=Digest.from_hex(data['signer_key_id']))


@dataclass(frozen=True)
class KeyPair:
    """
    RSA key pair (k_d, k_e). Equality is by key_id; compare
    private_key_pem() when bit-identity matters.
    """
    private_key: rsa.RSAPrivateKey = field(repr=False, compare=False)
    public_key: rsa.RSAPublicKey = field(repr=False, compare=False)
    key_id: Digest

    @classmethod
    def from_private_key(cls, private_key: rsa.RSAPrivateKey) -> 'KeyPair':
        """Derive the public half from private material (k_e = E(k_d))"""
        public_key = private_key.public_key()
        return cls(private_key=private_key, public_key=public_key, key_id=key_id_of(public_key))

    def public_key_pem(self) -> str:
        return public_key_to_pem(self.public_key)

    def private_key_pem(self) -> str:
        return private_key_to_pem(self.private_key)


def key_id_of(public_key: rsa.RSAPublicKey) -> Digest:
    """Digest of the DER SubjectPublicKeyInfo encoding"""
    if not isinstance(public_key, rsa.RSAPublicKey):
        raise CryptoError("MALFORMED_KEY", "expected an RSA public key")
    der = public_key.public_bytes(serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)
    return digest(der)


def public_key_to_pem(public_key: rsa.RSAPublicKey) -> str:
    pem = public_key.public_bytes(
        serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
    ).decode("ascii")
    return pem.replace("PUBLIC KEY", PUBLIC_KEY_LABEL)


def public_key_from_pem(text: str) -> rsa.RSAPublicKey:
    try:
        key = serialization.load_pem_public_key(text.replace(PUBLIC_KEY_LABEL, "PUBLIC KEY").encode("ascii"))
    except (ValueError, TypeError, UnicodeEncodeError) as e:
        raise CryptoError("MALFORMED_KEY", f"unreadable public key: {e}") from e
    if not isinstance(key, rsa.RSAPublicKey):
        raise CryptoError("MALFORMED_KEY", "public key is not RSA")
    return key


def private_key_to_pem(private_key: rsa.RSAPrivateKey) -> str:
    pem = private_key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    ).decode("ascii")
    return pem.replace("PRIVATE KEY", PRIVATE_KEY_LABEL)


def private_key_from_pem(text: str) -> rsa.RSAPrivateKey:
    try:
        key = serialization.load_pem_private_key(
            text.replace(PRIVATE_KEY_LABEL, "PRIVATE KEY").encode("ascii"), password=None
        )
    except (ValueError, TypeError, UnicodeEncodeError) as e:
        raise CryptoError("MALFORMED_KEY", f"unreadable private key: {e}") from e
    if not isinstance(key, rsa.RSAPrivateKey):
        raise CryptoError("MALFORMED_KEY", "private key is not RSA")
    return key


def generate_keypair(seed: Optional[bytes] = None) -> KeyPair:
    """
    Generate an RSA-2048 key pair.

    With a seed (tests and the scripted demo only) the primes are drawn from a
    SHAKE256 stream over the seed, so equal seeds give bit-identical keys.
    """
    try:
        if seed is None:
            private_key = rsa.generate_private_key(public_exponent=RSA_PUBLIC_EXPONENT, key_size=RSA_KEY_BITS)
        else:
            if len(seed) < MIN_SEED_SIZE:
                raise CryptoError("WEAK_SEED", f"seed must carry at least {MIN_SEED_SIZE} octets")
            stream = SHAKE256.new(data=b"tips-keygen/" + seed)
            seeded = SeededRSA.generate(RSA_KEY_BITS, randfunc=stream.read, e=RSA_PUBLIC_EXPONENT)
            private_key = serialization.load_der_private_key(seeded.export_key(format="DER", pkcs=8), password=None)
    except CryptoError:
        raise
    except (OSError, NotImplementedError) as e:
        raise CryptoError("ENTROPY_FAILURE", str(e)) from e

    keypair = KeyPair.from_private_key(private_key)
    logger.debug("Generated key pair %s (seeded=%s)", keypair.key_id.hex[:16], seed is not None)
    return keypair


def generate_session_key() -> SessionKey:
    try:
        return SessionKey(AESGCM.generate_key(bit_length=SESSION_KEY_SIZE * 8))
    except (OSError, NotImplementedError) as e:
        raise CryptoError("ENTROPY_FAILURE", str(e)) from e


def seal(m: bytes, k_m: SessionKey, max_size: int = DEFAULT_MAX_PLAINTEXT,
         associated_data: Optional[bytes] = None) -> Ciphertext:
    """c = e_km(m) with a fresh random nonce; associated_data is authenticated, not encrypted"""
    if len(m) > max_size:
        raise CryptoError("PLAINTEXT_TOO_LARGE", f"plaintext of {len(m)} octets exceeds {max_size}")
    try:
        nonce = os.urandom(NONCE_SIZE)
    except (OSError, NotImplementedError) as e:
        raise CryptoError("ENTROPY_FAILURE", str(e)) from e
    sealed = AESGCM(k_m.value).encrypt(nonce, m, associated_data)
    return Ciphertext(nonce=nonce, body=sealed[:-TAG_SIZE], auth_tag=sealed[-TAG_SIZE:])


def open_sealed(c: Ciphertext, k_m: SessionKey, associated_data: Optional[bytes] = None) -> bytes:
    """m = d_km(c); a wrong key, modified octet or different associated data gives the same AUTH_FAILURE"""
    if len(c.nonce) != NONCE_SIZE or len(c.auth_tag) != TAG_SIZE:
        raise CryptoError("AUTH_FAILURE", "ciphertext failed authentication")
    try:
        return AESGCM(k_m.value).decrypt(c.nonce, c.body + c.auth_tag, associated_data)
    except InvalidTag:
        raise CryptoError("AUTH_FAILURE", "ciphertext failed authentication") from None


def wrap_key(k_m: SessionKey, k_e: rsa.RSAPublicKey) -> WrappedKey:
    """k_s = e_ke(k_m), randomized by OAEP padding"""
    recipient_key_id = key_id_of(k_e)
    return WrappedKey(value=k_e.encrypt(k_m.value, _OAEP), recipient_key_id=recipient_key_id)


def unwrap_key(k_s: WrappedKey, k_d: rsa.RSAPrivateKey) -> SessionKey:
    """k_m = d_kd(k_s)"""
    if not isinstance(k_d, rsa.RSAPrivateKey):
        raise CryptoError("UNWRAP_FAILURE", "not an RSA private key")
    try:
        recovered = k_d.decrypt(k_s.value, _OAEP)
    except ValueError:
        raise CryptoError("UNWRAP_FAILURE", "session key could not be unwrapped") from None
    if len(recovered) != SESSION_KEY_SIZE:
        raise CryptoError("UNWRAP_FAILURE", "unwrapped payload is not a session key")
    return SessionKey(recovered)


def digest(data: bytes) -> Digest:
    return Digest(hashlib.sha256(data).digest())


def sign(data: bytes, k_d: rsa.RSAPrivateKey) -> Signature:
    if not isinstance(k_d, rsa.RSAPrivateKey):
        raise CryptoError("MALFORMED_KEY", "expected an RSA private key")
    value = k_d.sign(data, _PSS, hashes.SHA256())
    return Signature(value=value, signer_key_id=key_id_of(k_d.public_key()))


def verify(data: bytes, signature: Signature, k_e: Union[rsa.RSAPublicKey, Any]) -> bool:
    if not isinstance(k_e, rsa.RSAPublicKey):
        raise CryptoError("MALFORMED_KEY", "expected an RSA public key")
    try:
        k_e.verify(signature.value, data, _PSS, hashes.SHA256())
    except InvalidSignature:
        return False
    return True


@lru_cache(maxsize=4096)
def cached_public_key(text: str) -> rsa.RSAPublicKey:
    """public_key_from_pem memoized on the PEM text"""
    return public_key_from_pem(text)
