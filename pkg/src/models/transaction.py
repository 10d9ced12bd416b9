from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from ..canonical import canonical_json, format_utc, parse_utc
from ..crypto import Digest, Signature, digest

GENESIS_PREV_HASH = Digest(bytes(32))


class EndorsementPolicy(Enum):
    MAJORITY = "MajorityOfOrgs"
    ALL = "AllOrgs"
    ANY = "AnyOrg"

    def required(self, member_count: int) -> int:
        """Distinct member orgs that must endorse"""
        if self is EndorsementPolicy.ALL:
            return member_count
        if self is EndorsementPolicy.ANY:
            return 1
        return member_count // 2 + 1

    @classmethod
    def parse(cls, text: str) -> 'EndorsementPolicy':
        aliases = {'majority': cls.MAJORITY, 'all': cls.ALL, 'any': cls.ANY}
        if text.lower() in aliases:
            return aliases[text.lower()]
        return cls(text)


class ChannelMode(Enum):
    LONG_TERM = "long_term"
    SESSION = "session"


class AuditEventType(Enum):
    KEY_PUBLISHED = "KeyPublished"
    ENVELOPE_POSTED = "EnvelopePosted"
    ENVELOPE_READ = "EnvelopeRead"
    OBJECT_STORED = "ObjectStored"
    OBJECT_ERASED = "ObjectErased"
    POLICY_DENIED = "PolicyDenied"


class ValidationCode(Enum):
    VALID = "VALID"
    MVCC_READ_CONFLICT = "MVCC_READ_CONFLICT"
    ENDORSEMENT_POLICY_FAILURE = "ENDORSEMENT_POLICY_FAILURE"
    DUPLICATE_TXID = "DUPLICATE_TXID"
    CHANNEL_CLOSED = "CHANNEL_CLOSED"

    @property
    def is_valid(self) -> bool:
        return self is ValidationCode.VALID


@dataclass(frozen=True)
class TransactionProposal:
    """
    Signed request to run one contract operation on a channel.
    tx_id is the digest of the signing payload.
    """
    tx_id: str
    channel_id: str
    operation: str
    args: Dict[str, Any]
    submitter: int
    submitter_org: str
    timestamp: datetime
    nonce: str
    submitter_signature: Optional[Signature] = None

    def signing_payload(self) -> bytes:
        return canonical_json({
            'channel_id': self.channel_id,
            'operation': self.operation,
            'args': self.args,
            'submitter': self.submitter,
            'submitter_org': self.submitter_org,
            'timestamp': format_utc(self.timestamp),
            'nonce': self.nonce,
        })

    def expected_tx_id(self) -> str:
        return digest(self.signing_payload()).hex

    def to_dict(self) -> Dict[str, Any]:
        return {
            'tx_id': self.tx_id,
            'channel_id': self.channel_id,
            'operation': self.operation,
            'args': self.args,
            'submitter': self.submitter,
            'submitter_org': self.submitter_org,
            'timestamp': format_utc(self.timestamp),
            'nonce': self.nonce,
            'submitter_signature': self.submitter_signature.to_dict() if self.submitter_signature else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TransactionProposal':
        signature = data.get('submitter_signature')
        return cls(
            tx_id=data['tx_id'],
            channel_id=data['channel_id'],
            operation=data['operation'],
            args=data['args'],
            submitter=int(data['submitter']),
            submitter_org=data['submitter_org'],
            timestamp=parse_utc(data['timestamp']),
            nonce=data['nonce'],
            submitter_signature=Signature.from_dict(signature) if signature else None,
        )


ReadSet = Tuple[Tuple[str, int], ...]
WriteSet = Tuple[Tuple[str, Any], ...]


@dataclass(frozen=True)
class Endorsement:
    """Simulation result of one peer: read/write sets and response, signed"""
    tx_id: str
    read_set: ReadSet
    write_set: WriteSet
    response: Any
    endorser_org: str
    endorser_peer: str
    endorser_serial: int
    endorser_signature: Optional[Signature] = None

    def rwset_dict(self) -> Dict[str, Any]:
        return {
            'read_set': [{'key': key, 'version': version} for key, version in self.read_set],
            'write_set': [{'key': key, 'value': value} for key, value in self.write_set],
            'response': self.response,
        }

    def rwset_digest(self) -> str:
        """Digest of read set, write set and response; equal across honest endorsers"""
        return digest(canonical_json(self.rwset_dict())).hex

    def signing_payload(self) -> bytes:
        body = self.rwset_dict()
        body.update({
            'tx_id': self.tx_id,
            'endorser_org': self.endorser_org,
            'endorser_peer': self.endorser_peer,
            'endorser_serial': self.endorser_serial,
        })
        return canonical_json(body)

    def to_dict(self) -> Dict[str, Any]:
        data = self.rwset_dict()
        data.update({
            'tx_id': self.tx_id,
            'endorser_org': self.endorser_org,
            'endorser_peer': self.endorser_peer,
            'endorser_serial': self.endorser_serial,
            'endorser_signature': self.endorser_signature.to_dict() if self.endorser_signature else None,
        })
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Endorsement':
        signature = data.get('endorser_signature')
        return cls(
            tx_id=data['tx_id'],
            read_set=tuple((entry['key'], int(entry['version'])) for entry in data['read_set']),
            write_set=tuple((entry['key'], entry['value']) for entry in data['write_set']),
            response=data.get('response'),
            endorser_org=data['endorser_org'],
            endorser_peer=data['endorser_peer'],
            endorser_serial=int(data['endorser_serial']),
            endorser_signature=Signature.from_dict(signature) if signature else None,
        )


@dataclass(frozen=True)
class EndorsedTransaction:
    proposal: TransactionProposal
    endorsements: Tuple[Endorsement, ...]
    validation_code: Optional[ValidationCode] = None

    @property
    def tx_id(self) -> str:
        return self.proposal.tx_id

    @property
    def read_set(self) -> ReadSet:
        return self.endorsements[0].read_set

    @property
    def write_set(self) -> WriteSet:
        return self.endorsements[0].write_set

    @property
    def response(self) -> Any:
        return self.endorsements[0].response

    @property
    def is_valid(self) -> bool:
        return self.validation_code is ValidationCode.VALID

    def to_dict(self) -> Dict[str, Any]:
        return {
            'proposal': self.proposal.to_dict(),
            'endorsements': [e.to_dict() for e in self.endorsements],
            'validation_code': self.validation_code.value if self.validation_code else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EndorsedTransaction':
        code = data.get('validation_code')
        return cls(
            proposal=TransactionProposal.from_dict(data['proposal']),
            endorsements=tuple(Endorsement.from_dict(e) for e in data['endorsements']),
            validation_code=ValidationCode(code) if code else None,
        )


@dataclass(frozen=True)
class Block:
    """
    Ordered batch of endorsed transactions. block_hash covers the canonical
    JSON of every other field, validation codes included once committed.
    """
    height: int
    prev_hash: Digest
    timestamp: datetime
    transactions: Tuple[EndorsedTransaction, ...]
    block_hash: Optional[Digest] = None

    def body_dict(self) -> Dict[str, Any]:
        return {
            'height': self.height,
            'prev_hash': self.prev_hash.hex,
            'timestamp': format_utc(self.timestamp),
            'transactions': [tx.to_dict() for tx in self.transactions],
        }

    def compute_hash(self) -> Digest:
        return hash_block_body(self.body_dict())

    def to_dict(self) -> Dict[str, Any]:
        data = self.body_dict()
        data['block_hash'] = self.block_hash.hex if self.block_hash else None
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Block':
        block_hash = data.get('block_hash')
        return cls(
            height=int(data['height']),
            prev_hash=Digest.from_hex(data['prev_hash']),
            timestamp=parse_utc(data['timestamp']),
            transactions=tuple(EndorsedTransaction.from_dict(tx) for tx in data['transactions']),
            block_hash=Digest.from_hex(block_hash) if block_hash else None,
        )


def hash_block_body(body: Dict[str, Any]) -> Digest:
    """Digest over a block's JSON form minus block_hash"""
    return digest(canonical_json({k: v for k, v in body.items() if k != 'block_hash'}))


@dataclass(frozen=True)
class AuditEvent:
    event_type: AuditEventType
    actor: int
    tx_id: str
    wall_time: datetime
    channel_id: str
    subject: str = ""
    block_height: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'event_type': self.event_type.value,
            'actor': self.actor,
            'tx_id': self.tx_id,
            'wall_time': format_utc(self.wall_time),
            'channel_id': self.channel_id,
            'subject': self.subject,
            'block_height': self.block_height,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AuditEvent':
        return cls(
            event_type=AuditEventType(data['event_type']),
            actor=int(data['actor']),
            tx_id=data['tx_id'],
            wall_time=parse_utc(data['wall_time']),
            channel_id=data['channel_id'],
            subject=data.get('subject', ''),
            block_height=int(data.get('block_height', 0)),
        )


@dataclass(frozen=True)
class CommitStatus:
    tx_id: str
    validation_code: ValidationCode
    block_height: int
    committed_at: datetime

    @property
    def is_valid(self) -> bool:
        return self.validation_code is ValidationCode.VALID


@dataclass
class VersionedValue:
    """World-state entry; large values keep only their digest"""
    value: Any
    version: int
    value_digest: str
    inline: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return {'value': self.value, 'version': self.version, 'value_digest': self.value_digest, 'inline': self.inline}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'VersionedValue':
        return cls(value=data.get('value'), version=int(data['version']),
                   value_digest=data['value_digest'], inline=bool(data.get('inline', True)))


@dataclass
class ChainReport:
    ok: bool
    first_bad_height: Optional[int] = None
    blocks_checked: int = 0
    detail: str = ""
    problems: List[str] = field(default_factory=list)
