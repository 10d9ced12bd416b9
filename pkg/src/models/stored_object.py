from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

from ..canonical import canonical_json, format_utc, parse_utc
from ..crypto import Digest, Signature


class LineageAction(Enum):
    CREATED = "Created"
    UPDATED = "Updated"
    ERASED = "Erased"


@dataclass(frozen=True)
class StoredObject:
    """
    On-chain record of an object. Small payloads ride inline (base64);
    larger ones live off-chain under off_chain_ref.
    """
    object_key: str
    checksum: Digest
    size: int
    version: int
    creator: int
    off_chain_ref: Optional[str] = None
    inline_payload: Optional[str] = None
    tombstoned: bool = False
    subjects: List[str] = field(default_factory=list)

    @property
    def is_off_chain(self) -> bool:
        return self.off_chain_ref is not None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'object_key': self.object_key,
            'checksum': self.checksum.hex,
            'size': self.size,
            'version': self.version,
            'creator': self.creator,
            'off_chain_ref': self.off_chain_ref,
            'inline_payload': self.inline_payload,
            'tombstoned': self.tombstoned,
            'subjects': list(self.subjects),
        }

    def summary(self) -> Dict[str, Any]:
        """Record without payload bytes"""
        data = self.to_dict()
        data.pop('inline_payload')
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'StoredObject':
        return cls(
            object_key=data['object_key'],
            checksum=Digest.from_hex(data['checksum']),
            size=int(data['size']),
            version=int(data['version']),
            creator=int(data['creator']),
            off_chain_ref=data.get('off_chain_ref'),
            inline_payload=data.get('inline_payload'),
            tombstoned=bool(data.get('tombstoned', False)),
            subjects=list(data.get('subjects', [])),
        )


@dataclass(frozen=True)
class LineageEntry:
    version: int
    tx_id: str
    actor: int
    timestamp: datetime
    action: LineageAction
    checksum: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            'version': self.version,
            'tx_id': self.tx_id,
            'actor': self.actor,
            'timestamp': format_utc(self.timestamp),
            'action': self.action.value,
            'checksum': self.checksum,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LineageEntry':
        return cls(
            version=int(data['version']),
            tx_id=data['tx_id'],
            actor=int(data['actor']),
            timestamp=parse_utc(data['timestamp']),
            action=LineageAction(data['action']),
            checksum=data.get('checksum', ''),
        )


@dataclass(frozen=True)
class ErasureReceipt:
    """Signed proof of cancellation handed back to the data subject"""
    key: str
    tx_id: str
    wall_time: datetime
    channel_id: str
    checksum: str
    signer: int
    signature: Optional[Signature] = None

    def signing_payload(self) -> bytes:
        data = self.to_dict()
        data.pop('signature')
        return canonical_json(data)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'key': self.key,
            'tx_id': self.tx_id,
            'wall_time': format_utc(self.wall_time),
            'channel_id': self.channel_id,
            'checksum': self.checksum,
            'signer': self.signer,
            'signature': self.signature.to_dict() if self.signature else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ErasureReceipt':
        signature = data.get('signature')
        return cls(
            key=data['key'],
            tx_id=data['tx_id'],
            wall_time=parse_utc(data['wall_time']),
            channel_id=data['channel_id'],
            checksum=data['checksum'],
            signer=int(data['signer']),
            signature=Signature.from_dict(signature) if signature else None,
        )


@dataclass(frozen=True)
class BatchResult:
    records: List[StoredObject]
    misses: List[str]

    def to_dict(self) -> Dict[str, Any]:
        return {'records': [r.summary() for r in self.records], 'misses': list(self.misses)}
