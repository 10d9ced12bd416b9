from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, Optional

from ..canonical import canonical_json, format_utc, parse_utc
from ..crypto import Ciphertext, Digest, Signature, WrappedKey
from .access_policy import AccessPolicy


def sealed_header(channel_id: str, sender: int, recipient: int, recipient_key_id: Digest) -> bytes:
    """Associated data bound into the ciphertext; a relabelled envelope fails to open"""
    return canonical_json({
        'channel_id': channel_id,
        'sender': sender,
        'recipient': recipient,
        'recipient_key_id': recipient_key_id.hex,
    })


@dataclass(frozen=True)
class EnvelopeContent:
    """The sealed part: c and k_s. Stored through the object path."""
    ciphertext: Ciphertext
    wrapped_key: WrappedKey

    def to_bytes(self) -> bytes:
        return canonical_json({'ciphertext': self.ciphertext.to_dict(), 'wrapped_key': self.wrapped_key.to_dict()})

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EnvelopeContent':
        return cls(
            ciphertext=Ciphertext.from_dict(data['ciphertext']),
            wrapped_key=WrappedKey.from_dict(data['wrapped_key']),
        )


@dataclass(frozen=True)
class Envelope:
    """On-channel unit of one send; envelope_id is the digest of the content"""
    envelope_id: str
    sender: int
    recipient: int
    recipient_key_id: Digest
    object_key: str
    policy: AccessPolicy = field(default_factory=AccessPolicy)
    posted_tx: str = ""
    posted_at: Optional[datetime] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'envelope_id': self.envelope_id,
            'sender': self.sender,
            'recipient': self.recipient,
            'recipient_key_id': self.recipient_key_id.hex,
            'object_key': self.object_key,
            'policy': self.policy.to_dict(),
            'posted_tx': self.posted_tx,
            'posted_at': format_utc(self.posted_at) if self.posted_at else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Envelope':
        return cls(
            envelope_id=data['envelope_id'],
            sender=int(data['sender']),
            recipient=int(data['recipient']),
            recipient_key_id=Digest.from_hex(data['recipient_key_id']),
            object_key=data['object_key'],
            policy=AccessPolicy.from_dict(data.get('policy')),
            posted_tx=data.get('posted_tx', ''),
            posted_at=parse_utc(data['posted_at']) if data.get('posted_at') else None,
        )

    def sealed_header(self, channel_id: str) -> bytes:
        return sealed_header(channel_id, self.sender, self.recipient, self.recipient_key_id)


@dataclass(frozen=True)
class PublishedKey:
    """Exchange key placed on a channel by its owner"""
    owner: int
    public_key_pem: str
    key_id: Digest
    channel_id: str
    version: int = 1
    signature: Optional[Signature] = None

    def signing_payload(self) -> bytes:
        return canonical_json({
            'owner': self.owner,
            'public_key': self.public_key_pem,
            'channel_id': self.channel_id,
        })

    def to_dict(self) -> Dict[str, Any]:
        return {
            'owner': self.owner,
            'public_key': self.public_key_pem,
            'key_id': self.key_id.hex,
            'channel_id': self.channel_id,
            'version': self.version,
            'signature': self.signature.to_dict() if self.signature else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PublishedKey':
        signature = data.get('signature')
        return cls(
            owner=int(data['owner']),
            public_key_pem=data['public_key'],
            key_id=Digest.from_hex(data['key_id']),
            channel_id=data['channel_id'],
            version=int(data.get('version', 1)),
            signature=Signature.from_dict(signature) if signature else None,
        )


@dataclass(frozen=True)
class ReadReceipt:
    envelope_id: str
    reader: int
    read_tx: str
    wall_time: datetime

    def to_dict(self) -> Dict[str, Any]:
        return {
            'envelope_id': self.envelope_id,
            'reader': self.reader,
            'read_tx': self.read_tx,
            'wall_time': format_utc(self.wall_time),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ReadReceipt':
        return cls(
            envelope_id=data['envelope_id'],
            reader=int(data['reader']),
            read_tx=data['read_tx'],
            wall_time=parse_utc(data['wall_time']),
        )


@dataclass(frozen=True)
class EnvelopeSummary:
    """Inbox row; never carries ciphertext"""
    envelope_id: str
    sender: int
    recipient: int
    posted_at: Optional[datetime]
    read: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            'envelope_id': self.envelope_id,
            'sender': self.sender,
            'recipient': self.recipient,
            'posted_at': format_utc(self.posted_at) if self.posted_at else None,
            'read': self.read,
        }
