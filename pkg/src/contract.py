"""
Object contract executed by every endorsing peer: checksummed object
storage with versions and lineage, batch queries, erasure with tombstones,
and the key/envelope/receipt records the exchange protocol keeps on-channel.
"""
import logging
from typing import Any, Callable, Dict, List, Optional

from .canonical import b64decode, b64encode, canonical_json
from .crypto import Digest, cached_public_key, digest, key_id_of, verify
from .errors import ContractError, TipsError, error_for
from .ledger import Channel, TxSimulator
from .models.envelope import Envelope, PublishedKey, ReadReceipt
from .models.stored_object import LineageAction, LineageEntry, StoredObject
from .models.transaction import Block
from .offchain_store import OffChainStore

logger = logging.getLogger(__name__)

DPO_ROLE = "dpo"

# Operations whose response may carry payload bytes; never ordered into a block
QUERY_ONLY_OPERATIONS = frozenset({'get_object'})


def object_state_key(key: str) -> str:
    return f"object/{key}"


def lineage_state_key(key: str, version: int) -> str:
    return f"lineage/{key}/{version:08d}"


def envelope_object_key(envelope_id: str) -> str:
    return f"envelope-{envelope_id}"


def payload_args(store: OffChainStore, channel_id: str, payload: bytes, threshold: int) -> Dict[str, Any]:
    """
    Client-side staging: payloads of threshold octets or more are written to
    the off-chain store before the proposal is built
    """
    if len(payload) >= threshold:
        return {
            'checksum': digest(payload).hex,
            'size': len(payload),
            'off_chain_ref': store.put(channel_id, payload),
        }
    return {'payload': b64encode(payload)}


class ObjectContract:
    """Dispatches an operation name to a handler taking (stub, args)"""

    def __init__(self, store: OffChainStore, offchain_threshold: int = 1024):
        self.store = store
        self.offchain_threshold = offchain_threshold
        self._operations: Dict[str, Callable[[TxSimulator, Dict[str, Any]], Any]] = {
            'put_object': self.put_object,
            'get_checksum': self.get_checksum,
            'get_version': self.get_version,
            'get_object': self.get_object,
            'get_lineage': self.get_lineage,
            'get_assets_from_batch': self.get_assets_from_batch,
            'erase_object': self.erase_object,
            'erase_subject': self.erase_subject,
            'publish_key': self.publish_key,
            'get_published_key': self.get_published_key,
            'get_key_history': self.get_key_history,
            'post_envelope': self.post_envelope,
            'get_envelope': self.get_envelope,
            'list_envelopes': self.list_envelopes,
            'record_read': self.record_read,
            'get_receipt': self.get_receipt,
            'record_denial': self.record_denial,
        }

    @property
    def operations(self) -> List[str]:
        return sorted(self._operations)

    def invoke(self, stub: TxSimulator, operation: str, args: Dict[str, Any]) -> Any:
        handler = self._operations.get(operation)
        if handler is None:
            raise ContractError("CONTRACT_ERROR", f"unknown operation {operation!r}")
        if not isinstance(args, dict):
            raise ContractError("CONTRACT_ERROR", "operation arguments must be an object")
        try:
            return handler(stub, args)
        except TipsError:
            raise
        except (KeyError, ValueError, TypeError) as e:
            raise ContractError("CONTRACT_ERROR", f"{operation}: malformed arguments ({e})") from e

    # -- objects -----------------------------------------------------------

    @staticmethod
    def _key(args: Dict[str, Any], name: str = 'key') -> str:
        key = args.get(name)
        if not isinstance(key, str) or not key.strip():
            raise ContractError("EMPTY_KEY", "object key must be a non-empty string")
        return key

    @staticmethod
    def _load(stub: TxSimulator, key: str) -> StoredObject:
        raw = stub.get_state(object_state_key(key))
        if raw is None:
            raise ContractError("NOT_FOUND", f"no object at {key}")
        return StoredObject.from_dict(raw)

    @staticmethod
    def _lineage(stub: TxSimulator, key: str, record: StoredObject) -> List[LineageEntry]:
        return [LineageEntry.from_dict(stub.get_state(lineage_state_key(key, v))) for v in range(1, record.version + 1)]

    @staticmethod
    def _adjust_blob(stub: TxSimulator, locator: Optional[str], delta: int) -> Optional[str]:
        """Update the reference count of an off-chain blob; returns it when it drops to zero"""
        if locator is None:
            return None
        ref_key = f"blobref/{locator}"
        count = (stub.get_state(ref_key) or 0) + delta
        stub.put_state(ref_key, max(count, 0))
        return locator if count <= 0 else None

    def _store(self, stub: TxSimulator, key: str, args: Dict[str, Any], creator: Optional[int] = None) -> Dict[str, Any]:
        previous_raw = stub.get_state(object_state_key(key))
        previous = StoredObject.from_dict(previous_raw) if previous_raw is not None else None
        if previous is not None and previous.tombstoned:
            raise ContractError("TOMBSTONED", f"{key} was erased and is closed to new writes")

        if 'payload' in args:
            payload = b64decode(args['payload'])
            if len(payload) >= self.offchain_threshold:
                raise ContractError("CONTRACT_ERROR", f"payload of {len(payload)} octets must be staged off-chain")
            checksum, size, locator, inline = digest(payload), len(payload), None, args['payload']
        else:
            checksum = Digest.from_hex(args['checksum'])
            size, locator, inline = int(args['size']), args['off_chain_ref'], None
            self.store.get(stub.channel_id, locator, checksum)

        subjects = sorted({str(tag) for tag in args.get('subjects', [])})
        for tag in subjects:
            if not tag or '/' in tag:
                raise ContractError("CONTRACT_ERROR", f"invalid subject tag {tag!r}")

        version = previous.version + 1 if previous else 1
        record = StoredObject(
            object_key=key,
            checksum=checksum,
            size=size,
            version=version,
            creator=previous.creator if previous else (creator if creator is not None else stub.submitter.serial),
            off_chain_ref=locator,
            inline_payload=inline,
            subjects=sorted(set(subjects) | set(previous.subjects if previous else [])),
        )
        released = []
        if locator != (previous.off_chain_ref if previous else None):
            self._adjust_blob(stub, locator, +1)
            freed = self._adjust_blob(stub, previous.off_chain_ref if previous else None, -1)
            if freed:
                released.append(freed)

        stub.put_state(object_state_key(key), record.to_dict())
        stub.put_state(lineage_state_key(key, version), LineageEntry(
            version=version,
            tx_id=stub.tx_id,
            actor=stub.submitter.serial,
            timestamp=stub.timestamp,
            action=LineageAction.UPDATED if previous else LineageAction.CREATED,
            checksum=checksum.hex,
        ).to_dict())
        for tag in record.subjects:
            stub.put_state(f"subject/{tag}/{key}", True)
        return {'object': record.summary(), 'destroy': released, 'audit_subjects': [key]}

    def put_object(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        return self._store(stub, self._key(args), args)

    def get_checksum(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        return {'checksum': self._load(stub, self._key(args)).checksum.hex}

    def get_version(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        return {'version': self._load(stub, self._key(args)).version}

    def get_object(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        key = self._key(args)
        record = self._load(stub, key)
        if record.tombstoned:
            raise ContractError("TOMBSTONED", f"{key} was erased")
        if record.is_off_chain:
            payload = self.store.get(stub.channel_id, record.off_chain_ref, record.checksum)
        else:
            payload = b64decode(record.inline_payload)
            if digest(payload) != record.checksum:
                raise ContractError("INTEGRITY_MISMATCH", f"inline payload of {key} does not match its checksum")
        return {'payload': b64encode(payload), 'checksum': record.checksum.hex, 'version': record.version}

    def get_lineage(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        key = self._key(args)
        return {'lineage': [entry.to_dict() for entry in self._lineage(stub, key, self._load(stub, key))]}

    def get_assets_from_batch(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        keys = args.get('keys', [])
        if not isinstance(keys, list):
            raise ContractError("CONTRACT_ERROR", "keys must be a list")
        records, misses = [], []
        for key in keys:
            raw = stub.get_state(object_state_key(key)) if isinstance(key, str) and key else None
            if raw is None:
                misses.append(key)
            else:
                records.append(StoredObject.from_dict(raw).summary())
        return {'records': records, 'misses': misses}

    def _erase(self, stub: TxSimulator, key: str, record: StoredObject) -> Dict[str, Any]:
        version = record.version + 1
        stub.put_state(object_state_key(key), StoredObject(
            object_key=key,
            checksum=record.checksum,
            size=record.size,
            version=version,
            creator=record.creator,
            off_chain_ref=None,
            inline_payload=None,
            tombstoned=True,
            subjects=record.subjects,
        ).to_dict())
        stub.put_state(lineage_state_key(key, version), LineageEntry(
            version=version,
            tx_id=stub.tx_id,
            actor=stub.submitter.serial,
            timestamp=stub.timestamp,
            action=LineageAction.ERASED,
            checksum=record.checksum.hex,
        ).to_dict())
        for tag in record.subjects:
            stub.delete_state(f"subject/{tag}/{key}")
        freed = self._adjust_blob(stub, record.off_chain_ref, -1)
        return {'key': key, 'checksum': record.checksum.hex, 'destroy': freed}

    def erase_object(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        key = self._key(args)
        record = self._load(stub, key)
        requester = stub.submitter
        if requester.serial != record.creator and requester.role != DPO_ROLE:
            raise ContractError("NOT_AUTHORISED", f"serial {requester.serial} may not erase {key}")
        if record.tombstoned:
            raise ContractError("TOMBSTONED", f"{key} is already erased")
        erased = self._erase(stub, key, record)
        return {
            'erased': [{'key': key, 'checksum': erased['checksum']}],
            'destroy': [erased['destroy']] if erased['destroy'] else [],
            'audit_subjects': [key],
        }

    def erase_subject(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        """Erase every live object tagged with a data subject (dpo only)"""
        tag = self._key(args, 'subject')
        if stub.submitter.role != DPO_ROLE:
            raise ContractError("NOT_AUTHORISED", f"erasing subject {tag} needs role {DPO_ROLE}")
        prefix = f"subject/{tag}/"
        keys = [k[len(prefix):] for k in stub.keys_with_prefix(prefix) if stub.get_state(k)]
        erased, destroy = [], []
        for key in keys:
            record = self._load(stub, key)
            if record.tombstoned:
                continue
            result = self._erase(stub, key, record)
            erased.append({'key': key, 'checksum': result['checksum']})
            if result['destroy'] and result['destroy'] not in destroy:
                destroy.append(result['destroy'])
        if not erased:
            raise ContractError("NOT_FOUND", f"no live objects carry subject {tag}")
        return {'erased': erased, 'destroy': destroy, 'audit_subjects': [e['key'] for e in erased]}

    # -- exchange records ----------------------------------------------------

    def publish_key(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        published = PublishedKey.from_dict(args['published_key'])
        owner = stub.submitter
        if published.owner != owner.serial or published.channel_id != stub.channel_id:
            raise ContractError("NOT_AUTHORISED", "a key may only be published by its owner on its own channel")
        if published.signature is None or not verify(published.signing_payload(), published.signature, owner.public_key):
            raise ContractError("NOT_AUTHORISED", "published key binding is not signed by its owner")
        if digest_of_pem(published.public_key_pem) != published.key_id:
            raise ContractError("CONTRACT_ERROR", "key_id does not match the published key")

        state_key = f"pubkey/{owner.serial}"
        previous = stub.get_state(state_key)
        version = int(previous['version']) + 1 if previous else 1
        record = PublishedKey(published.owner, published.public_key_pem, published.key_id,
                              published.channel_id, version, published.signature)
        stub.put_state(state_key, record.to_dict())
        stub.put_state(f"keylineage/{owner.serial}/{version:08d}", LineageEntry(
            version=version,
            tx_id=stub.tx_id,
            actor=owner.serial,
            timestamp=stub.timestamp,
            action=LineageAction.UPDATED if previous else LineageAction.CREATED,
            checksum=published.key_id.hex,
        ).to_dict())
        return {'published_key': record.to_dict(), 'audit_subjects': [str(owner.serial)]}

    def get_published_key(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        owner = int(args['owner'])
        record = stub.get_state(f"pubkey/{owner}")
        if record is None:
            raise error_for("NO_PUBLISHED_KEY", f"serial {owner} has no key on {stub.channel_id}")
        return {'published_key': record}

    def get_key_history(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        owner = int(args['owner'])
        current = stub.get_state(f"pubkey/{owner}")
        if current is None:
            raise error_for("NO_PUBLISHED_KEY", f"serial {owner} has no key on {stub.channel_id}")
        return {'lineage': [stub.get_state(f"keylineage/{owner}/{v:08d}") for v in range(1, int(current['version']) + 1)]}

    def post_envelope(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        """Store the sealed content through the object path, then index the envelope"""
        envelope = Envelope.from_dict(args['envelope'])
        if envelope.sender != stub.submitter.serial:
            raise ContractError("NOT_AUTHORISED", "envelope sender must be the submitter")
        published = stub.get_state(f"pubkey/{envelope.recipient}")
        if published is None:
            raise error_for("NO_PUBLISHED_KEY", f"serial {envelope.recipient} has no key on {stub.channel_id}")
        if stub.get_state(f"envelope/{envelope.envelope_id}") is not None:
            raise ContractError("CONTRACT_ERROR", f"envelope {envelope.envelope_id[:16]} already posted")

        content_checksum = args.get('checksum') or digest(b64decode(args['payload'])).hex
        if content_checksum != envelope.envelope_id or envelope.object_key != envelope_object_key(envelope.envelope_id):
            raise ContractError("INTEGRITY_MISMATCH", "envelope id does not match its sealed content")

        self._store(stub, envelope.object_key, args, creator=envelope.sender)
        posted = Envelope(
            envelope_id=envelope.envelope_id,
            sender=envelope.sender,
            recipient=envelope.recipient,
            recipient_key_id=envelope.recipient_key_id,
            object_key=envelope.object_key,
            policy=envelope.policy,
            posted_tx=stub.tx_id,
            posted_at=stub.timestamp,
        )
        stub.put_state(f"envelope/{envelope.envelope_id}", posted.to_dict())
        return {'envelope': posted.to_dict(), 'audit_subjects': [envelope.envelope_id]}

    def get_envelope(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        envelope_id = self._key(args, 'envelope_id')
        record = stub.get_state(f"envelope/{envelope_id}")
        if record is None:
            raise ContractError("NOT_FOUND", f"no envelope {envelope_id[:16]} on {stub.channel_id}")
        return {'envelope': record}

    def list_envelopes(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        """Every envelope with whether the submitter has a receipt for it"""
        reader = stub.submitter.serial
        rows = []
        for state_key in stub.keys_with_prefix("envelope/"):
            record = stub.get_state(state_key)
            receipt = stub.get_state(f"receipt/{record['envelope_id']}/{reader}")
            rows.append({'envelope': record, 'read': receipt is not None})
        return {'envelopes': rows}

    def record_read(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        envelope_id = self._key(args, 'envelope_id')
        record = stub.get_state(f"envelope/{envelope_id}")
        if record is None:
            raise ContractError("NOT_FOUND", f"no envelope {envelope_id[:16]} on {stub.channel_id}")
        reader = stub.submitter.serial
        if int(record['recipient']) != reader:
            raise ContractError("NOT_AUTHORISED", f"serial {reader} is not the recipient of {envelope_id[:16]}")
        receipt_key = f"receipt/{envelope_id}/{reader}"
        if stub.get_state(receipt_key) is not None:
            raise ContractError("ALREADY_READ", f"serial {reader} already holds a receipt for {envelope_id[:16]}")
        receipt = ReadReceipt(envelope_id=envelope_id, reader=reader, read_tx=stub.tx_id, wall_time=stub.timestamp)
        stub.put_state(receipt_key, receipt.to_dict())
        return {'receipt': receipt.to_dict(), 'audit_subjects': [envelope_id]}

    def get_receipt(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        envelope_id = self._key(args, 'envelope_id')
        return {'receipt': stub.get_state(f"receipt/{envelope_id}/{int(args['reader'])}")}

    def record_denial(self, stub: TxSimulator, args: Dict[str, Any]) -> Dict[str, Any]:
        envelope_id = self._key(args, 'envelope_id')
        denial = {
            'envelope_id': envelope_id,
            'reader': stub.submitter.serial,
            'reason': str(args.get('reason', '')),
            'tx_id': stub.tx_id,
        }
        stub.put_state(f"denial/{stub.tx_id}", denial)
        return {'denial': denial, 'audit_subjects': [envelope_id]}

    # -- commit side effects -------------------------------------------------

    def on_commit(self, channel: Channel, block: Block) -> None:
        """Destroy off-chain blobs released by valid transactions of the block"""
        for tx in block.transactions:
            if not tx.is_valid or not isinstance(tx.response, dict):
                continue
            for locator in tx.response.get('destroy', []):
                self.store.destroy(channel.channel_id, locator)


def digest_of_pem(pem: str) -> Digest:
    return key_id_of(cached_public_key(pem))


def footprint(channel: Channel, store: OffChainStore) -> Dict[str, int]:
    """On-chain octets (canonical blocks) against octets held off-chain"""
    on_chain = sum(len(canonical_json(block.to_dict())) + 1 for block in channel.blocks)
    return {
        'on_chain_bytes': on_chain,
        'off_chain_bytes': store.footprint(channel.channel_id),
        'world_state_keys': len(channel.world_state),
    }
