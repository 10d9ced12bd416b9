"""
Threat exchange between agents over a channel: exchange-key publication,
envelope construction around a STIX bundle, policy-gated reception with
local decryption, read receipts and the inbox view.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import List, Optional

from .crypto import (
    KeyPair,
    cached_public_key,
    digest,
    generate_keypair,
    generate_session_key,
    open_sealed,
    seal,
    unwrap_key,
    wrap_key,
    verify,
)
from .contract import envelope_object_key, payload_args
from .errors import ContractError, ExchangeError, LedgerError, PolicyError
from .identity import EnrolledIdentity
from .models.access_policy import AccessPolicy, AttributeAttestation
from .models.envelope import Envelope, EnvelopeContent, EnvelopeSummary, PublishedKey, ReadReceipt, sealed_header
from .models.threat_bundle import ThreatBundle
from .models.transaction import AuditEvent
from .network import Network
from .objects import ObjectClient, invoke_staged
from .policy import evaluate

logger = logging.getLogger(__name__)


@dataclass
class Agent:
    """
    A participant: an enrolled identity for signing transactions plus the
    exchange key pairs it has generated locally, newest last. Private keys
    never leave the agent.
    """
    identity: EnrolledIdentity
    exchange_keys: List[KeyPair] = field(default_factory=list)

    @property
    def serial(self) -> int:
        return self.identity.serial

    @property
    def org(self) -> str:
        return self.identity.org

    @property
    def name(self) -> str:
        return self.identity.name

    @property
    def current_key(self) -> KeyPair:
        if not self.exchange_keys:
            raise ExchangeError("NO_EXCHANGE_KEY", f"{self.name} has not generated an exchange key")
        return self.exchange_keys[-1]

    def rotate_exchange_keys(self, seed: Optional[bytes] = None) -> KeyPair:
        keypair = generate_keypair(seed)
        self.exchange_keys.append(keypair)
        logger.info("%s generated exchange key %s", self.name, keypair.key_id.hex[:16])
        return keypair

    def key_for(self, key_id) -> Optional[KeyPair]:
        for keypair in reversed(self.exchange_keys):
            if keypair.key_id == key_id:
                return keypair
        return None


class ThreatExchange:
    """Protocol operations on top of a network"""

    def __init__(self, network: Network):
        self.network = network

    def publish_public_key(self, agent: Agent, channel_id: str) -> PublishedKey:
        keypair = agent.current_key
        unsigned = PublishedKey(
            owner=agent.serial,
            public_key_pem=keypair.public_key_pem(),
            key_id=keypair.key_id,
            channel_id=channel_id,
        )
        signed = replace(unsigned, signature=agent.identity.sign(unsigned.signing_payload()))
        result = self.network.invoke(agent.identity, channel_id, 'publish_key', {'published_key': signed.to_dict()})
        published = PublishedKey.from_dict(result.response['published_key'])
        logger.info("%s published exchange key v%d on %s", agent.name, published.version, channel_id)
        return published

    def published_key(self, agent: Agent, channel_id: str, owner: int) -> PublishedKey:
        """Latest key of owner, with its binding signature checked against the owner's certificate"""
        response = self.network.evaluate(agent.identity, channel_id, 'get_published_key', {'owner': owner})
        published = PublishedKey.from_dict(response['published_key'])
        certificate = self.network.msp.certificate(owner)
        if (certificate is None or published.signature is None
                or not verify(published.signing_payload(), published.signature, certificate.public_key)):
            raise ExchangeError("NO_PUBLISHED_KEY", f"published key of serial {owner} does not verify")
        return published

    def key_history(self, agent: Agent, channel_id: str, owner: int) -> List[dict]:
        return self.network.evaluate(agent.identity, channel_id, 'get_key_history', {'owner': owner})['lineage']

    def send_bundle(self, sender: Agent, channel_id: str, recipient: int, bundle: ThreatBundle,
                    policy: Optional[AccessPolicy] = None) -> Envelope:
        """Seal the bundle under a fresh session key, wrap it to the recipient and post the envelope"""
        published = self.published_key(sender, channel_id, recipient)
        plaintext = bundle.canonical()
        max_size = self.network.config.max_plaintext
        if len(plaintext) > max_size:
            raise ExchangeError("BUNDLE_TOO_LARGE", f"bundle of {len(plaintext)} octets exceeds {max_size}")

        k_m = generate_session_key()
        content = EnvelopeContent(
            ciphertext=seal(plaintext, k_m, max_size,
                            sealed_header(channel_id, sender.serial, recipient, published.key_id)),
            wrapped_key=wrap_key(k_m, cached_public_key(published.public_key_pem)),
        )
        del k_m
        raw = content.to_bytes()
        envelope_id = digest(raw).hex
        envelope = Envelope(
            envelope_id=envelope_id,
            sender=sender.serial,
            recipient=recipient,
            recipient_key_id=published.key_id,
            object_key=envelope_object_key(envelope_id),
            policy=policy or AccessPolicy(),
        )
        args = payload_args(self.network.store, channel_id, raw, self.network.config.offchain_threshold)
        args['envelope'] = envelope.to_dict()
        result = invoke_staged(self.network, sender.identity, channel_id, 'post_envelope', args)
        posted = Envelope.from_dict(result.response['envelope'])
        logger.info("%s posted envelope %s to serial %d on %s", sender.name, envelope_id[:16], recipient, channel_id)
        return posted

    def envelope(self, agent: Agent, channel_id: str, envelope_id: str) -> Envelope:
        response = self.network.evaluate(agent.identity, channel_id, 'get_envelope', {'envelope_id': envelope_id})
        return Envelope.from_dict(response['envelope'])

    def receipt(self, agent: Agent, channel_id: str, envelope_id: str) -> Optional[ReadReceipt]:
        response = self.network.evaluate(agent.identity, channel_id, 'get_receipt',
                                         {'envelope_id': envelope_id, 'reader': agent.serial})
        return ReadReceipt.from_dict(response['receipt']) if response['receipt'] else None

    def receive_bundle(self, recipient: Agent, channel_id: str, envelope_id: str,
                       attestation: Optional[AttributeAttestation] = None,
                       now: Optional[datetime] = None) -> ThreatBundle:
        """
        Policy gate, then unwrap and open locally. A deny is committed as a
        PolicyDenied record and releases nothing; a successful read commits one
        receipt per (envelope, reader).
        """
        envelope = self.envelope(recipient, channel_id, envelope_id)
        decision = evaluate(envelope.policy, attestation, recipient.identity.certificate,
                            now or self.network.clock(), self.network.config.attestation_freshness)
        if not decision.allowed:
            logger.warning("Policy denied %s access to envelope %s: %s", recipient.name, envelope_id[:16],
                           decision.reason)
            self.network.invoke(recipient.identity, channel_id, 'record_denial',
                                {'envelope_id': envelope_id, 'reason': decision.reason})
            raise PolicyError("POLICY_DENIED", decision.reason)

        raw = ObjectClient(self.network, recipient.identity, channel_id).get_object(envelope.object_key)
        try:
            content = EnvelopeContent.from_dict(json.loads(raw.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, ValueError, TypeError) as e:
            raise ExchangeError("MALFORMED_BUNDLE", f"envelope {envelope_id[:16]} content is unreadable") from e

        keypair = recipient.key_for(envelope.recipient_key_id) or recipient.current_key
        k_m = unwrap_key(content.wrapped_key, keypair.private_key)
        plaintext = open_sealed(content.ciphertext, k_m, envelope.sealed_header(channel_id))
        del k_m
        bundle = ThreatBundle.from_bytes(plaintext, strict=False)

        self._record_read(recipient, channel_id, envelope_id)
        return bundle

    def _record_read(self, recipient: Agent, channel_id: str, envelope_id: str) -> None:
        if self.receipt(recipient, channel_id, envelope_id) is not None:
            return
        try:
            self.network.invoke(recipient.identity, channel_id, 'record_read', {'envelope_id': envelope_id})
        except (ContractError, LedgerError) as e:
            # a concurrent read may have committed the receipt first
            if e.code not in ("ALREADY_READ", "TX_INVALID") or self.receipt(recipient, channel_id, envelope_id) is None:
                raise
        logger.info("%s read envelope %s", recipient.name, envelope_id[:16])

    def list_envelopes(self, agent: Agent, channel_id: str, unread: bool = False,
                       sender: Optional[int] = None, addressed_to_me: bool = True) -> List[EnvelopeSummary]:
        """Inbox view over the world state; nothing is decrypted"""
        rows = self.network.evaluate(agent.identity, channel_id, 'list_envelopes', {})['envelopes']
        summaries = []
        for row in rows:
            envelope = Envelope.from_dict(row['envelope'])
            if addressed_to_me and envelope.recipient != agent.serial:
                continue
            if sender is not None and envelope.sender != sender:
                continue
            if unread and row['read']:
                continue
            summaries.append(EnvelopeSummary(envelope.envelope_id, envelope.sender, envelope.recipient,
                                             envelope.posted_at, row['read']))
        return sorted(summaries, key=lambda s: (s.posted_at is None, s.posted_at, s.envelope_id))

    def audit(self, agent: Agent, channel_id: str, **filters) -> List[AuditEvent]:
        return self.network.channel(channel_id).audit_query(agent.org, **filters)
