"""
In-process permissioned network: peers grouped by organisation, channels
with their solo orderers, and the Execute-Order-Validate client path.
"""
import itertools
import logging
import os
import threading
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, replace
from datetime import datetime
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

from config.tips_config import TipsConfig
from .canonical import utc_now
from .contract import QUERY_ONLY_OPERATIONS, ObjectContract
from .crypto import verify
from .errors import ContractError, LedgerError
from .identity import CertificateAuthority, EnrolledIdentity, MembershipService, issue_identity
from .ledger import Channel, WorldState
from .models.transaction import (
    ChannelMode,
    CommitStatus,
    EndorsedTransaction,
    Endorsement,
    EndorsementPolicy,
    TransactionProposal,
)
from .offchain_store import OffChainStore
from .orderer import SoloOrderer

logger = logging.getLogger(__name__)

PEER_ROLE = "peer"
DEFAULT_COMMIT_TIMEOUT = 30.0


@dataclass(frozen=True)
class Peer:
    peer_id: str
    identity: EnrolledIdentity

    @property
    def org(self) -> str:
        return self.identity.org

    @property
    def serial(self) -> int:
        return self.identity.serial


@dataclass(frozen=True)
class InvokeResult:
    tx_id: str
    response: Any
    status: CommitStatus


def random_nonce() -> str:
    return os.urandom(16).hex()


class Network:
    """
    Holds the MSP, peers, channels and orderers. The clock and nonce source
    are injectable so scripted runs are reproducible.
    """

    def __init__(self, msp: MembershipService, store: OffChainStore, config: Optional[TipsConfig] = None,
                 clock: Optional[Callable[[], datetime]] = None, nonce_source: Optional[Callable[[], str]] = None):
        self.msp = msp
        self.store = store
        self.config = config or TipsConfig()
        self.clock = clock or utc_now
        self.nonce_source = nonce_source or random_nonce
        self.contract = ObjectContract(store, self.config.offchain_threshold)
        self.peers: Dict[str, List[Peer]] = {}
        self.channels: Dict[str, Channel] = {}
        self.orderers: Dict[str, SoloOrderer] = {}
        self._round_robin: Dict[str, itertools.count] = {}
        self._lock = threading.RLock()

    # -- topology ------------------------------------------------------------

    @property
    def orgs(self) -> List[str]:
        return sorted(self.peers)

    def add_peer(self, peer: Peer) -> None:
        with self._lock:
            self.peers.setdefault(peer.org, []).append(peer)
            self._round_robin.setdefault(peer.org, itertools.count())

    def provision_peers(self, ca: CertificateAuthority, orgs: Iterable[str], peers_per_org: Optional[int] = None,
                        seed_for: Optional[Callable[[str], bytes]] = None) -> List[Peer]:
        """Issue and enroll peer identities peer<i>.<org>"""
        count = peers_per_org or self.config.peers_per_org
        created = []
        for org in orgs:
            for index in range(count):
                peer_id = f"peer{index}.{org.lower()}"
                identity = issue_identity(ca, self.msp, peer_id, org, self.clock(), role=PEER_ROLE,
                                          seed=seed_for(peer_id) if seed_for else None,
                                          validity=self.config.certificate_validity)
                peer = Peer(peer_id, identity)
                self.add_peer(peer)
                created.append(peer)
        logger.info("Provisioned %d peers across %d orgs", len(created), len(set(p.org for p in created)))
        return created

    def create_channel(self, channel_id: str, member_orgs: Iterable[str],
                       endorsement_policy: EndorsementPolicy = EndorsementPolicy.MAJORITY,
                       mode: ChannelMode = ChannelMode.LONG_TERM,
                       created_at: Optional[datetime] = None) -> Channel:
        members = sorted(set(member_orgs))
        with self._lock:
            if channel_id in self.channels:
                raise LedgerError("DUPLICATE_CHANNEL", f"channel {channel_id} already exists")
            channel = Channel(
                channel_id=channel_id,
                member_orgs=members,
                endorsement_policy=endorsement_policy,
                created_at=created_at or self.clock(),
                mode=mode,
                certificate_resolver=self.msp.certificate,
                inline_limit=self.config.world_state_inline_limit,
            )
            self._attach(channel)
        logger.info("Created channel %s for %s (%s, needs %d endorsements)", channel_id, ", ".join(members),
                    endorsement_policy.value, channel.required_endorsements)
        return channel

    def _attach(self, channel: Channel) -> None:
        channel.add_commit_listener(self.contract.on_commit)
        self.channels[channel.channel_id] = channel
        self.orderers[channel.channel_id] = SoloOrderer(
            channel, self.config.orderer_batch_size, self.config.orderer_batch_timeout, self.clock,
        )

    def adopt_channel(self, channel: Channel) -> None:
        """Register a channel rebuilt from disk"""
        with self._lock:
            if channel.channel_id in self.channels:
                raise LedgerError("DUPLICATE_CHANNEL", f"channel {channel.channel_id} already exists")
            self._attach(channel)

    def channel(self, channel_id: str) -> Channel:
        try:
            return self.channels[channel_id]
        except KeyError:
            raise LedgerError("UNKNOWN_CHANNEL", f"no channel {channel_id}") from None

    def start(self) -> None:
        for orderer in self.orderers.values():
            orderer.start()

    def stop(self) -> None:
        for orderer in self.orderers.values():
            orderer.stop()

    # -- Execute ---------------------------------------------------------------

    def propose(self, identity: EnrolledIdentity, channel_id: str, operation: str,
                args: Dict[str, Any]) -> TransactionProposal:
        unsigned = TransactionProposal(
            tx_id="",
            channel_id=channel_id,
            operation=operation,
            args=args,
            submitter=identity.serial,
            submitter_org=identity.org,
            timestamp=self.clock(),
            nonce=self.nonce_source(),
        )
        signed = replace(unsigned, tx_id=unsigned.expected_tx_id())
        return replace(signed, submitter_signature=identity.sign(signed.signing_payload()))

    def _peer_for(self, org: str) -> Peer:
        peers = self.peers.get(org)
        if not peers:
            raise LedgerError("NOT_A_MEMBER", f"org {org} has no peers")
        return peers[next(self._round_robin[org]) % len(peers)]

    def endorse(self, proposal: TransactionProposal, endorsing_org: str, peer: Optional[Peer] = None,
                state: Optional[WorldState] = None) -> Endorsement:
        """
        Check the proposer, simulate the operation without committing, sign
        the result. Closed session channels still answer queries; submit refuses.
        """
        channel = self.channel(proposal.channel_id)

        now = self.clock()
        certificate = self.msp.certificate(proposal.submitter)
        if certificate is None:
            raise LedgerError("IDENTITY_REJECTED", f"serial {proposal.submitter} is not enrolled")
        result = self.msp.validate(certificate, now)
        if not result.valid:
            logger.warning("Rejected proposal from serial %d: %s", proposal.submitter, result.reason)
            raise LedgerError("IDENTITY_REJECTED", f"serial {proposal.submitter}: {result.reason}")
        if (proposal.tx_id != proposal.expected_tx_id() or proposal.submitter_signature is None
                or not verify(proposal.signing_payload(), proposal.submitter_signature, certificate.public_key)):
            raise LedgerError("IDENTITY_REJECTED", f"proposal {proposal.tx_id[:16]} signature does not verify")
        if certificate.org != proposal.submitter_org or not channel.is_member(certificate.org):
            raise LedgerError("NOT_A_MEMBER", f"{certificate.org} is not a member of {channel.channel_id}")
        if not channel.is_member(endorsing_org):
            raise LedgerError("NOT_A_MEMBER", f"endorsing org {endorsing_org} is not a member of {channel.channel_id}")
        if not self.msp.is_permitted(certificate, proposal.operation):
            raise ContractError("NOT_AUTHORISED", f"role {certificate.role} may not run {proposal.operation}")

        peer = peer or self._peer_for(endorsing_org)
        stub = channel.simulator(proposal.tx_id, certificate, proposal.timestamp, state)
        response = self.contract.invoke(stub, proposal.operation, proposal.args)
        unsigned = Endorsement(
            tx_id=proposal.tx_id,
            read_set=stub.read_set,
            write_set=stub.write_set,
            response=response,
            endorser_org=peer.org,
            endorser_peer=peer.peer_id,
            endorser_serial=peer.serial,
        )
        logger.debug("%s endorsed %s %s", peer.peer_id, proposal.operation, proposal.tx_id[:16])
        return replace(unsigned, endorser_signature=peer.identity.sign(unsigned.signing_payload()))

    def endorse_for_policy(self, proposal: TransactionProposal,
                           orgs: Optional[Sequence[str]] = None) -> List[Endorsement]:
        """One endorsement per org, as many orgs as the channel policy needs, on one state snapshot"""
        channel = self.channel(proposal.channel_id)
        chosen = list(orgs) if orgs is not None else sorted(channel.member_orgs)[:channel.required_endorsements]
        state = channel.snapshot()
        return [self.endorse(proposal, org, state=state) for org in chosen]

    # -- Order -----------------------------------------------------------------

    def submit(self, proposal: TransactionProposal, endorsements: Sequence[Endorsement]):
        """Check the endorsement set against the channel policy and queue it for ordering"""
        channel = self.channel(proposal.channel_id)
        if channel.closed:
            raise LedgerError("CHANNEL_CLOSED", f"session channel {channel.channel_id} is closed")
        orgs = {e.endorser_org for e in endorsements if channel.is_member(e.endorser_org)}
        if len(orgs) < channel.required_endorsements:
            raise LedgerError(
                "POLICY_NOT_MET",
                f"{len(orgs)} endorsing orgs, {channel.endorsement_policy.value} needs {channel.required_endorsements}",
            )
        if len({e.rwset_digest() for e in endorsements}) != 1 or any(e.tx_id != proposal.tx_id for e in endorsements):
            raise LedgerError("ENDORSEMENT_MISMATCH", f"endorsements of {proposal.tx_id[:16]} disagree")
        return self.orderers[channel.channel_id].broadcast(EndorsedTransaction(proposal, tuple(endorsements)))

    def wait(self, channel_id: str, future, timeout: float = DEFAULT_COMMIT_TIMEOUT) -> CommitStatus:
        orderer = self.orderers[channel_id]
        if not orderer.running:
            orderer.flush()
        try:
            return future.result(timeout=timeout)
        except FutureTimeout:
            raise LedgerError("COMMIT_TIMEOUT", f"no commit on {channel_id} within {timeout}s") from None

    # -- client entry points -------------------------------------------------

    def invoke(self, identity: EnrolledIdentity, channel_id: str, operation: str, args: Dict[str, Any],
               timeout: float = DEFAULT_COMMIT_TIMEOUT) -> InvokeResult:
        """Propose, endorse, submit and wait for commit; an invalid commit raises TX_INVALID"""
        if operation in QUERY_ONLY_OPERATIONS:
            raise ContractError("QUERY_ONLY", f"{operation} is answered by evaluate and never ordered")
        proposal = self.propose(identity, channel_id, operation, args)
        endorsements = self.endorse_for_policy(proposal)
        status = self.wait(channel_id, self.submit(proposal, endorsements), timeout)
        if not status.is_valid:
            logger.warning("Transaction %s (%s) committed invalid: %s", proposal.tx_id[:16], operation,
                           status.validation_code.value)
            raise LedgerError("TX_INVALID", f"{operation} {proposal.tx_id[:16]}: {status.validation_code.value}")
        return InvokeResult(proposal.tx_id, endorsements[0].response, status)

    def evaluate(self, identity: EnrolledIdentity, channel_id: str, operation: str, args: Dict[str, Any]) -> Any:
        """Query: a single endorsement from the caller's own org when it is a member"""
        channel = self.channel(channel_id)
        org = identity.org if channel.is_member(identity.org) else sorted(channel.member_orgs)[0]
        proposal = self.propose(identity, channel_id, operation, args)
        return self.endorse(proposal, org).response
