"""
Scripted Alice-to-Bob session with fixed seeds and a stepping clock.

The transcript only carries values that are reproducible across runs
(serials, key ids, wall times, heights, digests of plaintext); ciphertexts,
envelope ids and transaction ids depend on fresh randomness and are left out.
"""
import logging
import random
import threading
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, List, Optional

from config.tips_config import CliConfig, TipsConfig
from .canonical import UTC, format_utc
from .contract import footprint
from .crypto import digest
from .errors import CliError
from .exchange import Agent, ThreatExchange
from .identity import CertificateAuthority, MembershipService, issue_identity
from .models.access_policy import AccessPolicy
from .models.threat_bundle import generate_bundle
from .network import Network
from .objects import ObjectClient, verify_receipt
from .offchain_store import OffChainStore
from .policy import attest
from .storage import Workspace, WorkspaceState

logger = logging.getLogger(__name__)

DEMO_START = datetime(2024, 1, 15, 9, 0, 0, tzinfo=UTC)
DEMO_CHANNEL = "ab-chan"
DEMO_ORGS = ("OrgA", "OrgB")
DEMO_SENTINEL = "TIPS-SENTINEL-5f0c2e"
DEMO_LOCATION = "GB"
DEMO_SEED = 20240115
# demo identities stay usable from the CLI long after the scripted start date
DEMO_VALIDITY = timedelta(days=365 * 30)


class SteppingClock:
    """Deterministic clock: every reading is one step after the previous one"""

    def __init__(self, start: datetime = DEMO_START, step: timedelta = timedelta(seconds=1)):
        self._next = start
        self.step = step
        self._lock = threading.Lock()

    def __call__(self) -> datetime:
        with self._lock:
            value = self._next
            self._next += self.step
            return value


def demo_seed(label: str) -> bytes:
    return digest(f"tips-demo/{DEMO_SEED}/{label}".encode("utf-8")).value


def seeded_nonces(seed: int = DEMO_SEED) -> Callable[[], str]:
    rng = random.Random(seed)
    lock = threading.Lock()

    def nonce() -> str:
        with lock:
            return "%032x" % rng.getrandbits(128)
    return nonce


def golden_demo(data_dir: Path, config: Optional[TipsConfig] = None,
                out: Optional[Callable[[str], None]] = None) -> List[str]:
    """
    Run the full exchange on an empty data dir and persist the result there.
    Any failing step raises with that step's error code.
    """
    workspace = Workspace(data_dir)
    if not workspace.is_empty():
        raise CliError("DATA_DIR_NOT_EMPTY", f"{data_dir} already holds a workspace")

    transcript: List[str] = []

    def say(line: str) -> None:
        transcript.append(line)
        if out is not None:
            out(line)

    config = (config or TipsConfig()).with_overrides(data_dir=Path(data_dir), certificate_validity=DEMO_VALIDITY)
    clock = SteppingClock()

    ca = CertificateAuthority.create("TipsRootCA", clock(), seed=demo_seed("ca"))
    msp = MembershipService.for_authorities("TipsMSP", [ca], config.access_policies)
    network = Network(msp, OffChainStore(workspace.offchain_dir), config, clock, seeded_nonces())
    say(f"ca init TipsRootCA key_id={ca.key_id_hex[:16]}")

    peers = network.provision_peers(ca, DEMO_ORGS, peers_per_org=2, seed_for=demo_seed)
    for peer in peers:
        say(f"peer {peer.peer_id} serial={peer.serial} org={peer.org}")

    alice = Agent(issue_identity(ca, msp, "alice", "OrgA", clock(), seed=demo_seed("alice"),
                                 validity=config.certificate_validity))
    bob = Agent(issue_identity(ca, msp, "bob", "OrgB", clock(), seed=demo_seed("bob"),
                               attributes={'clearance': 'tlp-amber'}, validity=config.certificate_validity))
    say(f"enroll alice serial={alice.serial} org={alice.org}")
    say(f"enroll bob serial={bob.serial} org={bob.org}")

    channel = network.create_channel(DEMO_CHANNEL, DEMO_ORGS)
    say(f"channel create {DEMO_CHANNEL} members={','.join(sorted(channel.member_orgs))} "
        f"policy={channel.endorsement_policy.value} required={channel.required_endorsements}")

    exchange = ThreatExchange(network)
    bob.rotate_exchange_keys(seed=demo_seed("bob-exchange"))
    published = exchange.publish_public_key(bob, DEMO_CHANNEL)
    say(f"publish-key bob version={published.version} key_id={published.key_id.hex[:16]}")

    bundle = generate_bundle(random.Random(DEMO_SEED), 3, created_by="alice", sentinel=DEMO_SENTINEL,
                             start=DEMO_START - timedelta(days=30))
    sent_digest = digest(bundle.canonical()).hex
    window_start = DEMO_START
    policy = AccessPolicy(
        time_window=(window_start, window_start + timedelta(hours=8)),
        allowed_locations=frozenset({DEMO_LOCATION}),
        required_attributes={'clearance': 'tlp-amber'},
    )
    envelope = exchange.send_bundle(alice, DEMO_CHANNEL, bob.serial, bundle, policy)
    say(f"send alice->bob indicators={len(bundle.objects)} bundle_digest={sent_digest[:16]} "
        f"posted_at={format_utc(envelope.posted_at)}")

    inbox = exchange.list_envelopes(bob, DEMO_CHANNEL, unread=True)
    say(f"inbox bob unread={len(inbox)}")

    attestation = attest(bob.identity, clock(), DEMO_LOCATION)
    received = exchange.receive_bundle(bob, DEMO_CHANNEL, envelope.envelope_id, attestation)
    received_digest = digest(received.canonical()).hex
    say(f"recv bob bundle_digest={received_digest[:16]} match={received_digest == sent_digest}")
    exchange.receive_bundle(bob, DEMO_CHANNEL, envelope.envelope_id, attest(bob.identity, clock(), DEMO_LOCATION))
    say(f"recv bob again receipts={1 if exchange.receipt(bob, DEMO_CHANNEL, envelope.envelope_id) else 0}")

    objects = ObjectClient(network, alice.identity, DEMO_CHANNEL)
    stored = objects.put_object("incident-2024-001", b"incident notes for subject-42", subjects=["subject-42"])
    say(f"object put incident-2024-001 version={stored.version} checksum={stored.checksum.hex[:16]}")
    receipt = objects.erase_object("incident-2024-001")
    say(f"object erase incident-2024-001 receipt_valid={verify_receipt(receipt, msp)} "
        f"wall_time={format_utc(receipt.wall_time)}")

    for event in channel.audit_query(alice.org):
        say(f"audit {format_utc(event.wall_time)} {event.event_type.value} actor={event.actor} "
            f"height={event.block_height}")

    report = channel.verify_chain()
    say(f"verify-chain ok={report.ok} blocks={report.blocks_checked}")
    sizes = footprint(channel, network.store)
    say(f"footprint world_state_keys={sizes['world_state_keys']}")

    state = WorkspaceState(
        config=config,
        cli=CliConfig(Path(data_dir), active_identity=alice.serial, default_channel=DEMO_CHANNEL),
        authorities={ca.name: ca},
        msp=msp,
        network=network,
        identities={identity.serial: identity for identity in
                     [peer.identity for peer in peers] + [alice.identity, bob.identity]},
        exchange_keys={bob.serial: bob.exchange_keys},
    )
    with workspace.lock():
        workspace.save(state)
        workspace.save_record(workspace.receipts_dir, f"{receipt.key}-v{stored.version}", receipt.to_dict())
    logger.info("Demo session written to %s", data_dir)
    return transcript
