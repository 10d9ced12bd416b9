"""
Client side of the object contract: payload staging, integrity-checked
retrieval and erasure with signed receipts.
"""
import logging
from dataclasses import replace
from typing import Any, Dict, Iterable, List, Optional

from .canonical import b64decode
from .contract import payload_args
from .crypto import Digest, digest, verify
from .errors import ContractError
from .identity import EnrolledIdentity, MembershipService
from .models.stored_object import BatchResult, ErasureReceipt, LineageEntry, StoredObject
from .network import InvokeResult, Network

logger = logging.getLogger(__name__)


def invoke_staged(network: Network, identity: EnrolledIdentity, channel_id: str, operation: str,
                  args: Dict[str, Any]) -> InvokeResult:
    """Invoke with a payload from payload_args; a failed invoke drops the blob if nothing committed refers to it"""
    try:
        return network.invoke(identity, channel_id, operation, args)
    except Exception:
        locator = args.get('off_chain_ref')
        if locator:
            entry = network.channel(channel_id).snapshot().get(f"blobref/{locator}")
            if entry is None or not entry.value:
                network.store.destroy(channel_id, locator)
                logger.info("Dropped staged payload %s after failed %s", locator[:16], operation)
        raise


class ObjectClient:
    """Object operations on one channel on behalf of one identity"""

    def __init__(self, network: Network, identity: EnrolledIdentity, channel_id: str):
        self.network = network
        self.identity = identity
        self.channel_id = channel_id

    def put_object(self, key: str, payload: bytes, subjects: Optional[Iterable[str]] = None) -> StoredObject:
        if not isinstance(key, str) or not key.strip():
            raise ContractError("EMPTY_KEY", "object key must be a non-empty string")
        args = payload_args(self.network.store, self.channel_id, payload, self.network.config.offchain_threshold)
        args['key'] = key
        if subjects:
            args['subjects'] = sorted(set(subjects))
        result = invoke_staged(self.network, self.identity, self.channel_id, 'put_object', args)
        record = StoredObject.from_dict(result.response['object'])
        logger.info("Stored %s v%d (%d octets, %s)", key, record.version, record.size,
                    "off-chain" if record.is_off_chain else "inline")
        return record

    def _query(self, operation: str, **args):
        return self.network.evaluate(self.identity, self.channel_id, operation, args)

    def get_checksum(self, key: str) -> Digest:
        return Digest.from_hex(self._query('get_checksum', key=key)['checksum'])

    def get_version(self, key: str) -> int:
        return int(self._query('get_version', key=key)['version'])

    def get_object(self, key: str) -> bytes:
        response = self._query('get_object', key=key)
        payload = b64decode(response['payload'])
        if digest(payload).hex != response['checksum']:
            raise ContractError("INTEGRITY_MISMATCH", f"{key} payload does not match its checksum")
        return payload

    def get_lineage(self, key: str) -> List[LineageEntry]:
        return [LineageEntry.from_dict(entry) for entry in self._query('get_lineage', key=key)['lineage']]

    def get_assets_from_batch(self, keys: List[str]) -> BatchResult:
        response = self._query('get_assets_from_batch', keys=list(keys))
        return BatchResult([StoredObject.from_dict(r) for r in response['records']], list(response['misses']))

    def _receipts(self, result: InvokeResult) -> List[ErasureReceipt]:
        peers = self.network.peers.get(self.identity.org) or self.network.peers[self.network.orgs[0]]
        signer = peers[0].identity
        receipts = []
        for erased in result.response['erased']:
            unsigned = ErasureReceipt(
                key=erased['key'],
                tx_id=result.tx_id,
                wall_time=result.status.committed_at,
                channel_id=self.channel_id,
                checksum=erased['checksum'],
                signer=signer.serial,
            )
            receipts.append(replace(unsigned, signature=signer.sign(unsigned.signing_payload())))
        return receipts

    def erase_object(self, key: str) -> ErasureReceipt:
        result = self.network.invoke(self.identity, self.channel_id, 'erase_object', {'key': key})
        logger.info("Erased %s in %s", key, result.tx_id[:16])
        return self._receipts(result)[0]

    def erase_subject(self, subject: str) -> List[ErasureReceipt]:
        result = self.network.invoke(self.identity, self.channel_id, 'erase_subject', {'subject': subject})
        logger.info("Erased %d objects of subject %s", len(result.response['erased']), subject)
        return self._receipts(result)


def verify_receipt(receipt: ErasureReceipt, msp: MembershipService) -> bool:
    certificate = msp.certificate(receipt.signer)
    if certificate is None or receipt.signature is None:
        return False
    return verify(receipt.signing_payload(), receipt.signature, certificate.public_key)
