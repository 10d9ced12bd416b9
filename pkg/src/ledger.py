"""
Channelized append-only ledger: world state with per-key versions,
transaction simulation, commit-time validation of ordered blocks,
hash-chain verification and the audit trail derived from committed blocks.
"""
import json
import logging
import threading
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple, Union

from .canonical import canonical_json, format_utc, parse_utc
from .crypto import digest, verify
from .errors import ContractError, LedgerError
from .models.certificate import Certificate
from .models.transaction import (
    GENESIS_PREV_HASH,
    AuditEvent,
    AuditEventType,
    Block,
    ChainReport,
    ChannelMode,
    CommitStatus,
    EndorsedTransaction,
    EndorsementPolicy,
    ValidationCode,
    VersionedValue,
    hash_block_body,
)

logger = logging.getLogger(__name__)

# Committed operations that leave a trace in the audit log
AUDITED_OPERATIONS: Dict[str, AuditEventType] = {
    'publish_key': AuditEventType.KEY_PUBLISHED,
    'post_envelope': AuditEventType.ENVELOPE_POSTED,
    'record_read': AuditEventType.ENVELOPE_READ,
    'put_object': AuditEventType.OBJECT_STORED,
    'erase_object': AuditEventType.OBJECT_ERASED,
    'erase_subject': AuditEventType.OBJECT_ERASED,
    'record_denial': AuditEventType.POLICY_DENIED,
}

# A valid one of these closes a session-mode channel
SESSION_CLOSING_OPERATIONS = frozenset({'record_read'})

CertificateResolver = Callable[[int], Optional[Certificate]]
CommitListener = Callable[['Channel', Block], None]


class WorldState:
    """
    Key -> VersionedValue. Versions are per-key counters starting at 1;
    an absent key reads as version 0. Deletion writes None and still bumps
    the version so a key never returns to an earlier version.
    """

    def __init__(self, inline_limit: int = 4096, entries: Optional[Dict[str, VersionedValue]] = None):
        self.inline_limit = inline_limit
        self._entries: Dict[str, VersionedValue] = dict(entries or {})

    def version(self, key: str) -> int:
        entry = self._entries.get(key)
        return entry.version if entry else 0

    def get(self, key: str) -> Optional[VersionedValue]:
        return self._entries.get(key)

    def keys(self, prefix: str = "") -> List[str]:
        return sorted(k for k, v in self._entries.items()
                      if k.startswith(prefix) and (v.value is not None or not v.inline))

    def apply(self, write_set: Iterable[Tuple[str, Any]]) -> None:
        for key, value in write_set:
            encoded = canonical_json(value)
            inline = len(encoded) < self.inline_limit
            self._entries[key] = VersionedValue(
                value=value if inline else None,
                version=self.version(key) + 1,
                value_digest=digest(encoded).hex,
                inline=inline,
            )

    def copy(self) -> 'WorldState':
        return WorldState(self.inline_limit, {
            key: VersionedValue(entry.value, entry.version, entry.value_digest, entry.inline)
            for key, entry in self._entries.items()
        })

    def __len__(self) -> int:
        return len(self._entries)

    def to_dict(self) -> Dict[str, Any]:
        return {key: self._entries[key].to_dict() for key in sorted(self._entries)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], inline_limit: int = 4096) -> 'WorldState':
        return cls(inline_limit, {key: VersionedValue.from_dict(entry) for key, entry in data.items()})


class TxSimulator:
    """
    Chaincode stub for one simulation: reads go to the world state and are
    recorded with the version seen, writes are buffered and never applied.
    """

    def __init__(self, world_state: WorldState, tx_id: str, channel_id: str,
                 submitter: Certificate, timestamp: datetime):
        self._state = world_state
        self.tx_id = tx_id
        self.channel_id = channel_id
        self.submitter = submitter
        self.timestamp = timestamp
        self._reads: Dict[str, int] = {}
        self._writes: Dict[str, Any] = {}

    def get_state(self, key: str) -> Any:
        if key in self._writes:
            return self._writes[key]
        entry = self._state.get(key)
        self._reads.setdefault(key, entry.version if entry else 0)
        if entry is None:
            return None
        if not entry.inline:
            raise ContractError("CONTRACT_ERROR", f"state value at {key} is held as a digest only")
        return entry.value

    def put_state(self, key: str, value: Any) -> None:
        if not key:
            raise ContractError("EMPTY_KEY", "state key must not be empty")
        self._writes[key] = value

    def delete_state(self, key: str) -> None:
        self.put_state(key, None)

    def keys_with_prefix(self, prefix: str) -> List[str]:
        """Live keys under prefix; each is recorded in the read set once fetched"""
        found = set(self._state.keys(prefix))
        found.update(k for k, v in self._writes.items() if k.startswith(prefix) and v is not None)
        found.difference_update(k for k, v in self._writes.items() if v is None)
        return sorted(found)

    @property
    def read_set(self) -> Tuple[Tuple[str, int], ...]:
        return tuple(sorted(self._reads.items()))

    @property
    def write_set(self) -> Tuple[Tuple[str, Any], ...]:
        return tuple(sorted(self._writes.items()))


class Channel:
    """
    One ledger partition: member orgs, endorsement policy, block chain,
    world state and audit log. Commit is single-writer under the channel lock.
    """

    def __init__(self, channel_id: str, member_orgs: Iterable[str], endorsement_policy: EndorsementPolicy,
                 created_at: datetime, mode: ChannelMode = ChannelMode.LONG_TERM,
                 certificate_resolver: Optional[CertificateResolver] = None, inline_limit: int = 4096):
        self.channel_id = channel_id
        self.member_orgs = frozenset(member_orgs)
        if not self.member_orgs:
            raise LedgerError("EMPTY_MEMBERSHIP", f"channel {channel_id} needs at least one member org")
        self.endorsement_policy = endorsement_policy
        self.mode = mode
        self.created_at = created_at
        self.certificate_resolver = certificate_resolver or (lambda serial: None)
        self.world_state = WorldState(inline_limit)
        self.blocks: List[Block] = []
        self.audit_log: List[AuditEvent] = []
        self.closed = False
        self._tx_ids: Dict[str, CommitStatus] = {}
        self._listeners: List[CommitListener] = []
        self._lock = threading.RLock()

        genesis = Block(height=0, prev_hash=GENESIS_PREV_HASH, timestamp=created_at, transactions=())
        self.blocks.append(Block(genesis.height, genesis.prev_hash, genesis.timestamp, (), genesis.compute_hash()))

    @property
    def required_endorsements(self) -> int:
        return self.endorsement_policy.required(len(self.member_orgs))

    @property
    def height(self) -> int:
        """Height of the last committed block"""
        return self.blocks[-1].height

    def is_member(self, org: str) -> bool:
        return org in self.member_orgs

    def add_commit_listener(self, listener: CommitListener) -> None:
        self._listeners.append(listener)

    def snapshot(self) -> WorldState:
        """Current world state; commit swaps in a new object, so this one never changes"""
        with self._lock:
            return self.world_state

    def simulator(self, tx_id: str, submitter: Certificate, timestamp: datetime,
                  state: Optional[WorldState] = None) -> TxSimulator:
        return TxSimulator(state if state is not None else self.snapshot(), tx_id, self.channel_id, submitter, timestamp)

    def status(self, tx_id: str) -> Optional[CommitStatus]:
        return self._tx_ids.get(tx_id)

    def next_block(self, transactions: Iterable[EndorsedTransaction], timestamp: datetime) -> Block:
        """Unflagged block for the next height; block timestamps never go backwards"""
        with self._lock:
            last = self.blocks[-1]
            return Block(
                height=last.height + 1,
                prev_hash=last.block_hash,
                timestamp=max(timestamp, last.timestamp),
                transactions=tuple(transactions),
            )

    def _endorsement_check(self, tx: EndorsedTransaction) -> bool:
        if not tx.endorsements:
            return False
        reference = tx.endorsements[0].rwset_digest()
        orgs = set()
        for endorsement in tx.endorsements:
            if endorsement.tx_id != tx.tx_id or endorsement.rwset_digest() != reference:
                return False
            certificate = self.certificate_resolver(endorsement.endorser_serial)
            if (certificate is None or certificate.org != endorsement.endorser_org
                    or endorsement.endorser_signature is None
                    or not verify(endorsement.signing_payload(), endorsement.endorser_signature, certificate.public_key)):
                return False
            if endorsement.endorser_org in self.member_orgs:
                orgs.add(endorsement.endorser_org)
        return len(orgs) >= self.required_endorsements

    def _validate(self, block: Block, state: WorldState, seen: Dict[str, Any],
                  closed: bool) -> Tuple[List[ValidationCode], bool]:
        """Serial replay of the block against a staged state; mutates state and seen"""
        codes: List[ValidationCode] = []
        for tx in block.transactions:
            if closed:
                code = ValidationCode.CHANNEL_CLOSED
            elif tx.tx_id in seen:
                code = ValidationCode.DUPLICATE_TXID
            elif not self._endorsement_check(tx):
                code = ValidationCode.ENDORSEMENT_POLICY_FAILURE
            elif any(state.version(key) != version for key, version in tx.read_set):
                code = ValidationCode.MVCC_READ_CONFLICT
            else:
                code = ValidationCode.VALID
            seen[tx.tx_id] = code
            if code.is_valid:
                state.apply(tx.write_set)
                if self.mode is ChannelMode.SESSION and tx.proposal.operation in SESSION_CLOSING_OPERATIONS:
                    closed = True
            codes.append(code)
        return codes, closed

    def _audit_events(self, block: Block) -> List[AuditEvent]:
        events = []
        for tx in block.transactions:
            event_type = AUDITED_OPERATIONS.get(tx.proposal.operation)
            if event_type is None or not tx.is_valid:
                continue
            response = tx.response if isinstance(tx.response, dict) else {}
            for subject in response.get('audit_subjects', [""]):
                events.append(AuditEvent(
                    event_type=event_type,
                    actor=tx.proposal.submitter,
                    tx_id=tx.tx_id,
                    wall_time=block.timestamp,
                    channel_id=self.channel_id,
                    subject=subject,
                    block_height=block.height,
                ))
        return events

    def validate_and_commit(self, block: Block) -> List[ValidationCode]:
        """
        Validate each transaction in order (MVCC read-set check plus the
        endorsement policy), apply valid write sets, append the flagged block.
        """
        with self._lock:
            last = self.blocks[-1]
            if block.height != last.height + 1 or block.prev_hash != last.block_hash:
                raise LedgerError(
                    "BROKEN_CHAIN",
                    f"block {block.height} does not extend height {last.height} of {self.channel_id}",
                )
            staged = self.world_state.copy()
            seen: Dict[str, Any] = dict(self._tx_ids)
            codes, closed = self._validate(block, staged, seen, self.closed)

            flagged = tuple(
                EndorsedTransaction(tx.proposal, tx.endorsements, code)
                for tx, code in zip(block.transactions, codes)
            )
            unhashed = Block(block.height, block.prev_hash, block.timestamp, flagged)
            committed = Block(block.height, block.prev_hash, block.timestamp, flagged, unhashed.compute_hash())

            self.world_state = staged
            self.closed = closed
            self.blocks.append(committed)
            for tx, code in zip(block.transactions, codes):
                # a duplicate never replaces the status of the first commit
                self._tx_ids.setdefault(tx.tx_id, CommitStatus(tx.tx_id, code, committed.height, committed.timestamp))
            self.audit_log.extend(self._audit_events(committed))

        invalid = [code for code in codes if not code.is_valid]
        if invalid:
            logger.warning("Block %d on %s: %d of %d transactions invalid",
                           committed.height, self.channel_id, len(invalid), len(codes))
        logger.info("Committed block %d on %s (%d txs)", committed.height, self.channel_id, len(codes))
        for listener in self._listeners:
            try:
                listener(self, committed)
            except Exception:
                # the block is already appended; its flags stand
                logger.exception("Commit listener failed on block %d of %s", committed.height, self.channel_id)
        return codes

    def verify_chain(self) -> ChainReport:
        """Recompute every block hash and prev_hash link; report the first bad height"""
        with self._lock:
            blocks = list(self.blocks)
        return verify_blocks(blocks)

    def replay_world_state(self) -> WorldState:
        """Rebuild world state from the valid transactions of the committed blocks"""
        with self._lock:
            blocks = list(self.blocks)
            state = WorldState(self.world_state.inline_limit)
        for block in blocks[1:]:
            for tx in block.transactions:
                if tx.is_valid:
                    state.apply(tx.write_set)
        return state

    def restore(self, blocks: List[Block]) -> None:
        """
        Re-validate persisted blocks on a fresh channel; the recomputed flags
        and hashes must match what was stored
        """
        report = verify_blocks(blocks)
        if not report.ok:
            raise LedgerError("BROKEN_CHAIN", f"{self.channel_id}: {report.detail}")
        if blocks and blocks[0].block_hash != self.blocks[0].block_hash:
            raise LedgerError("BROKEN_CHAIN", f"{self.channel_id}: genesis block does not match channel config")
        listeners, self._listeners = self._listeners, []
        try:
            for block in blocks[1:]:
                unflagged = Block(block.height, block.prev_hash, block.timestamp,
                                  tuple(EndorsedTransaction(tx.proposal, tx.endorsements) for tx in block.transactions))
                codes = self.validate_and_commit(unflagged)
                stored = [tx.validation_code for tx in block.transactions]
                if codes != stored or self.blocks[-1].block_hash != block.block_hash:
                    raise LedgerError("BROKEN_CHAIN", f"{self.channel_id}: block {block.height} does not replay")
        finally:
            self._listeners = listeners

    def audit_query(self, requester_org: str, actor: Optional[int] = None,
                    event_type: Optional[Union[AuditEventType, str]] = None,
                    since: Optional[datetime] = None, until: Optional[datetime] = None) -> List[AuditEvent]:
        if not self.is_member(requester_org):
            raise LedgerError("NOT_A_MEMBER", f"{requester_org} is not a member of {self.channel_id}")
        if isinstance(event_type, str):
            event_type = AuditEventType(event_type)
        with self._lock:
            events = list(self.audit_log)
        return [
            event for event in events
            if (actor is None or event.actor == actor)
            and (event_type is None or event.event_type is event_type)
            and (since is None or event.wall_time >= since)
            and (until is None or event.wall_time < until)
        ]

    def to_dict(self) -> Dict[str, Any]:
        """Channel configuration; blocks are persisted separately"""
        return {
            'channel_id': self.channel_id,
            'member_orgs': sorted(self.member_orgs),
            'endorsement_policy': self.endorsement_policy.value,
            'mode': self.mode.value,
            'created_at': format_utc(self.created_at),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], certificate_resolver: Optional[CertificateResolver] = None,
                  inline_limit: int = 4096) -> 'Channel':
        return cls(
            channel_id=data['channel_id'],
            member_orgs=data['member_orgs'],
            endorsement_policy=EndorsementPolicy(data['endorsement_policy']),
            created_at=parse_utc(data['created_at']),
            mode=ChannelMode(data.get('mode', ChannelMode.LONG_TERM.value)),
            certificate_resolver=certificate_resolver,
            inline_limit=inline_limit,
        )


def verify_blocks(blocks: List[Block]) -> ChainReport:
    if not blocks:
        return ChainReport(ok=True)
    previous = None
    for index, block in enumerate(blocks):
        expected_prev = GENESIS_PREV_HASH if previous is None else previous.block_hash
        if block.height != index:
            return ChainReport(False, index, index, f"block at position {index} claims height {block.height}")
        if block.prev_hash != expected_prev:
            return ChainReport(False, index, index, f"block {index} prev_hash does not link to block {index - 1}")
        if block.block_hash != block.compute_hash():
            return ChainReport(False, index, index, f"block {index} hash does not match its contents")
        previous = block
    return ChainReport(ok=True, blocks_checked=len(blocks))


def verify_block_log(path: Path) -> ChainReport:
    """
    Check a persisted block file (one canonical JSON block per line) without
    trusting its structure: a line that does not parse, is not in canonical
    form, or breaks the hash chain is reported by its position.
    """
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    previous_hash = GENESIS_PREV_HASH.hex
    for index, line in enumerate(lines):
        try:
            body = json.loads(line.decode("utf-8"))
            if canonical_json(body) != line:
                raise ValueError("line is not in canonical form")
            recomputed = hash_block_body(body).hex
            height, prev_hash, block_hash = body['height'], body['prev_hash'], body['block_hash']
        except (ValueError, KeyError, TypeError, AttributeError, UnicodeDecodeError) as e:
            return ChainReport(False, index, index, f"block {index} is unreadable: {e}")
        if height != index:
            return ChainReport(False, index, index, f"block at line {index} claims height {height}")
        if prev_hash != previous_hash:
            return ChainReport(False, index, index, f"block {index} prev_hash does not link to block {index - 1}")
        if block_hash != recomputed:
            return ChainReport(False, index, index, f"block {index} hash does not match its contents")
        previous_hash = block_hash
    return ChainReport(ok=True, blocks_checked=len(lines))


def load_block_log(path: Path) -> List[Block]:
    blocks = []
    for line in Path(path).read_bytes().split(b"\n"):
        if line:
            blocks.append(Block.from_dict(json.loads(line.decode("utf-8"))))
    return blocks
