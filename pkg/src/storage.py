"""
On-disk layout of a data directory and the load/save of a whole network.

    <data_dir>/
      ca/<name>.json                 CA public state, issued certificates, CRL
      certs/<serial>.json            issued certificates
      csr/<common_name>.json         submitted CSRs
      keys/<serial>.pem              identity private keys (0600)
      keys/ca-<name>.pem             CA private keys (0600)
      keys/exchange/<serial>/<n>.pem exchange key pairs (0600)
      msp/msp.json                   MSP configuration and enrollment registry
      peers/peers.json               peer ids -> serials
      ledger/<channel>/              channel.json, blocks.jsonl, world_state.json, audit.jsonl
      offchain/<channel>/            content-addressed payloads
      receipts/                      signed erasure receipts
      attestations/<serial>.json     latest attestation per identity
      cli.json                       CLI settings
      tips.lock                      advisory lock
"""
import fcntl
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional

from config.tips_config import CliConfig, TipsConfig
from .canonical import canonical_json, pretty_json
from .crypto import KeyPair, private_key_from_pem
from .errors import CliError
from .exchange import Agent
from .identity import CertificateAuthority, EnrolledIdentity, MembershipService
from .ledger import Channel, load_block_log
from .models.certificate import Certificate, IdentityRecord, MspConfig
from .network import Network, Peer
from .offchain_store import OffChainStore

logger = logging.getLogger(__name__)

PRIVATE_FILE_MODE = 0o600
LOCK_NAME = "tips.lock"
DEFAULT_MSP_ID = "TipsMSP"


def write_private(path: Path, text: str) -> None:
    """Create or replace a file readable by its owner only"""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, PRIVATE_FILE_MODE)
    with os.fdopen(fd, "w", encoding="utf-8") as handle:
        handle.write(text)
    os.chmod(path, PRIVATE_FILE_MODE)


def write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(pretty_json(data) + "\n", encoding="utf-8")


def read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


@dataclass
class WorkspaceState:
    """Everything a CLI invocation works with, loaded from one data dir"""
    config: TipsConfig
    cli: CliConfig
    authorities: Dict[str, CertificateAuthority] = field(default_factory=dict)
    msp: Optional[MembershipService] = None
    network: Optional[Network] = None
    identities: Dict[int, EnrolledIdentity] = field(default_factory=dict)
    exchange_keys: Dict[int, List[KeyPair]] = field(default_factory=dict)

    def authority(self, name: Optional[str] = None) -> CertificateAuthority:
        if not self.authorities:
            raise CliError("USAGE", "no certificate authority yet; run `tips ca init` first")
        if name is None:
            return self.authorities[sorted(self.authorities)[0]]
        try:
            return self.authorities[name]
        except KeyError:
            raise CliError("USAGE", f"no certificate authority named {name}") from None

    def require_network(self) -> Network:
        if self.network is None:
            raise CliError("USAGE", "no certificate authority yet; run `tips ca init` first")
        return self.network

    def identity(self, serial: Optional[int] = None) -> EnrolledIdentity:
        serial = serial if serial is not None else self.cli.active_identity
        if serial is None:
            raise CliError("UNKNOWN_IDENTITY", "no active identity; pass --as or run `tips enroll`")
        try:
            return self.identities[serial]
        except KeyError:
            raise CliError("UNKNOWN_IDENTITY", f"no private key held for serial {serial}") from None

    def agent(self, serial: Optional[int] = None) -> Agent:
        identity = self.identity(serial)
        return Agent(identity, self.exchange_keys.setdefault(identity.serial, []))


class Workspace:
    """Paths and persistence for one data directory"""

    def __init__(self, data_dir: Path):
        self.root = Path(data_dir)

    # -- layout ----------------------------------------------------------------

    @property
    def ca_dir(self) -> Path:
        return self.root / "ca"

    @property
    def certs_dir(self) -> Path:
        return self.root / "certs"

    @property
    def csr_dir(self) -> Path:
        return self.root / "csr"

    @property
    def keys_dir(self) -> Path:
        return self.root / "keys"

    @property
    def msp_file(self) -> Path:
        return self.root / "msp" / "msp.json"

    @property
    def peers_file(self) -> Path:
        return self.root / "peers" / "peers.json"

    @property
    def offchain_dir(self) -> Path:
        return self.root / "offchain"

    @property
    def receipts_dir(self) -> Path:
        return self.root / "receipts"

    @property
    def attestations_dir(self) -> Path:
        return self.root / "attestations"

    @property
    def cli_file(self) -> Path:
        return self.root / "cli.json"

    def ledger_dir(self, channel_id: str) -> Path:
        return self.root / "ledger" / channel_id

    def block_log(self, channel_id: str) -> Path:
        return self.ledger_dir(channel_id) / "blocks.jsonl"

    def is_empty(self) -> bool:
        if not self.root.exists():
            return True
        return not any(p.name != LOCK_NAME for p in self.root.iterdir())

    @contextmanager
    def lock(self) -> Iterator[None]:
        """Advisory exclusive lock; concurrent invocations on one data dir queue here"""
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.root / LOCK_NAME, "a+") as handle:
            fcntl.flock(handle.fileno(), fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(handle.fileno(), fcntl.LOCK_UN)

    # -- load ------------------------------------------------------------------

    def load(self, config: Optional[TipsConfig] = None,
             clock: Optional[Callable[[], datetime]] = None) -> WorkspaceState:
        config = config or TipsConfig(data_dir=self.root)
        cli = CliConfig.from_dict(read_json(self.cli_file), self.root) if self.cli_file.exists() else CliConfig(self.root)
        state = WorkspaceState(config=config, cli=cli)

        for path in sorted(self.ca_dir.glob("*.json")):
            data = read_json(path)
            pem = (self.keys_dir / f"ca-{data['name']}.pem").read_text(encoding="utf-8")
            state.authorities[data['name']] = CertificateAuthority.from_dict(data, pem)
        if not state.authorities:
            return state

        if self.msp_file.exists():
            data = read_json(self.msp_file)
            registry = {int(r['certificate']['serial']): IdentityRecord.from_dict(r) for r in data.get('registry', [])}
            state.msp = MembershipService(MspConfig.from_dict(data['config']), state.authorities.values(), registry)
        else:
            state.msp = MembershipService.for_authorities(DEFAULT_MSP_ID, list(state.authorities.values()),
                                                          config.access_policies)

        for authority in state.authorities.values():
            for serial, certificate in authority.issued.items():
                key_file = self.keys_dir / f"{serial}.pem"
                if key_file.exists():
                    keypair = KeyPair.from_private_key(private_key_from_pem(key_file.read_text(encoding="utf-8")))
                    state.identities[serial] = EnrolledIdentity(certificate, keypair)
                exchange_dir = self.keys_dir / "exchange" / str(serial)
                if exchange_dir.exists():
                    state.exchange_keys[serial] = [
                        KeyPair.from_private_key(private_key_from_pem(p.read_text(encoding="utf-8")))
                        for p in sorted(exchange_dir.glob("*.pem"), key=lambda p: int(p.stem))
                    ]

        network = Network(state.msp, OffChainStore(self.offchain_dir), config, clock)
        if self.peers_file.exists():
            for entry in read_json(self.peers_file):
                network.add_peer(Peer(entry['peer_id'], state.identities[int(entry['serial'])]))
        for channel_file in sorted((self.root / "ledger").glob("*/channel.json")):
            channel = Channel.from_dict(read_json(channel_file), state.msp.certificate,
                                        config.world_state_inline_limit)
            log = self.block_log(channel.channel_id)
            if log.exists():
                channel.restore(load_block_log(log))
            network.adopt_channel(channel)
        state.network = network
        logger.debug("Loaded workspace %s: %d identities, %d channels", self.root, len(state.identities),
                     len(network.channels))
        return state

    # -- save ------------------------------------------------------------------

    def save_private_key(self, serial: int, keypair: KeyPair) -> Path:
        path = self.keys_dir / f"{serial}.pem"
        write_private(path, keypair.private_key_pem())
        return path

    def save(self, state: WorkspaceState) -> None:
        write_json(self.cli_file, state.cli.to_dict())
        for name, authority in state.authorities.items():
            write_json(self.ca_dir / f"{name}.json", authority.to_dict())
            write_private(self.keys_dir / f"ca-{name}.pem", authority.keypair.private_key_pem())
            for serial, certificate in authority.issued.items():
                write_json(self.certs_dir / f"{serial}.json", certificate.to_dict())
        for serial, identity in state.identities.items():
            key_file = self.keys_dir / f"{serial}.pem"
            if not key_file.exists():
                self.save_private_key(serial, identity.keypair)
        for serial, keypairs in state.exchange_keys.items():
            for index, keypair in enumerate(keypairs):
                write_private(self.keys_dir / "exchange" / str(serial) / f"{index}.pem", keypair.private_key_pem())
        if state.msp is not None:
            write_json(self.msp_file, {
                'config': state.msp.config.to_dict(),
                'registry': [state.msp.registry[s].to_dict() for s in sorted(state.msp.registry)],
            })
        if state.network is not None:
            self.save_network(state.network)

    def save_network(self, network: Network) -> None:
        peers = [{'peer_id': p.peer_id, 'serial': p.serial} for org in network.orgs for p in network.peers[org]]
        write_json(self.peers_file, peers)
        for channel in network.channels.values():
            self.save_channel(channel)

    def save_channel(self, channel: Channel) -> None:
        directory = self.ledger_dir(channel.channel_id)
        write_json(directory / "channel.json", channel.to_dict())
        lines = [canonical_json(block.to_dict()) for block in channel.blocks]
        tmp = directory / "blocks.jsonl.tmp"
        tmp.write_bytes(b"".join(line + b"\n" for line in lines))
        os.replace(tmp, directory / "blocks.jsonl")
        write_json(directory / "world_state.json", channel.snapshot().to_dict())
        audit = "".join(canonical_json(event.to_dict()).decode("utf-8") + "\n" for event in channel.audit_log)
        (directory / "audit.jsonl").write_text(audit, encoding="utf-8")

    def save_record(self, directory: Path, name: str, data: Dict[str, Any]) -> Path:
        path = directory / f"{name}.json"
        write_json(path, data)
        return path

    def persisted_files(self) -> List[Path]:
        """Every artifact the ledger side persists, for byte scans"""
        roots = [self.root / "ledger", self.offchain_dir, self.receipts_dir]
        return sorted(p for root in roots if root.exists() for p in root.rglob("*") if p.is_file())


def certificate_file(workspace: Workspace, serial: int) -> Certificate:
    path = workspace.certs_dir / f"{serial}.json"
    if not path.exists():
        raise CliError("UNKNOWN_IDENTITY", f"no certificate file for serial {serial}")
    return Certificate.from_dict(read_json(path))
