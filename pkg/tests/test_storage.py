import stat

import pytest

from config.tips_config import CliConfig
from conftest import CHANNEL
from src.errors import CliError
from src.exchange import ThreatExchange
from src.ledger import verify_block_log
from src.objects import ObjectClient
from src.storage import (
    LOCK_NAME,
    PRIVATE_FILE_MODE,
    Workspace,
    WorkspaceState,
    certificate_file,
)


@pytest.fixture
def saved(tmp_path, config, ca, msp, network, exchange, alice, bob, bundle):
    """A network with one envelope and one object, saved into the data dir its store already uses"""
    exchange.send_bundle(alice, CHANNEL, bob.serial, bundle)
    ObjectClient(network, alice.identity, CHANNEL).put_object("ioc-1", b"198.51.100.7")

    identities = {peer.serial: peer.identity for org in network.orgs for peer in network.peers[org]}
    identities.update({alice.serial: alice.identity, bob.serial: bob.identity})
    workspace = Workspace(tmp_path)
    state = WorkspaceState(
        config=config,
        cli=CliConfig(workspace.root, active_identity=alice.serial, default_channel=CHANNEL),
        authorities={ca.name: ca},
        msp=msp,
        network=network,
        identities=identities,
        exchange_keys={bob.serial: bob.exchange_keys},
    )
    workspace.save(state)
    return workspace, state


class TestLayout:
    def test_fresh_directory_is_empty(self, tmp_path):
        workspace = Workspace(tmp_path / "nowhere")
        assert workspace.is_empty()
        with workspace.lock():
            assert (workspace.root / LOCK_NAME).exists()
        assert workspace.is_empty()

    def test_saved_directory_is_not_empty(self, saved):
        workspace, _ = saved
        assert not workspace.is_empty()

    def test_private_keys_are_owner_only(self, saved):
        workspace, state = saved
        for path in workspace.keys_dir.rglob("*.pem"):
            assert stat.S_IMODE(path.stat().st_mode) == PRIVATE_FILE_MODE, path
        assert (workspace.keys_dir / f"ca-{state.authority().name}.pem").exists()

    def test_certificate_files(self, saved, alice):
        workspace, _ = saved
        assert certificate_file(workspace, alice.serial) == alice.identity.certificate
        with pytest.raises(CliError) as e:
            certificate_file(workspace, 9999)
        assert e.value.code == "UNKNOWN_IDENTITY"

    def test_persisted_files_cover_the_ledger(self, saved):
        workspace, _ = saved
        names = {path.name for path in workspace.persisted_files()}
        assert {"channel.json", "blocks.jsonl", "world_state.json", "audit.jsonl"} <= names
        assert verify_block_log(workspace.block_log(CHANNEL)).ok


class TestReload:
    def test_identities_and_settings(self, saved, alice, bob):
        workspace, state = saved
        loaded = workspace.load(state.config)
        assert loaded.cli.active_identity == alice.serial
        assert loaded.cli.default_channel == CHANNEL
        assert loaded.identity().certificate == alice.identity.certificate
        assert loaded.msp.record(bob.serial) is not None
        assert [k.key_id for k in loaded.agent(bob.serial).exchange_keys] == [k.key_id for k in bob.exchange_keys]

    def test_channels_come_back_intact(self, saved, network):
        workspace, state = saved
        original = network.channel(CHANNEL)
        restored = workspace.load(state.config).require_network().channel(CHANNEL)
        assert restored.height == original.height
        assert restored.blocks[-1].block_hash == original.blocks[-1].block_hash
        assert restored.snapshot().to_dict() == original.snapshot().to_dict()
        assert restored.audit_log == original.audit_log
        assert restored.verify_chain().ok

    def test_reloaded_network_keeps_working(self, saved, bob, bundle, clock):
        workspace, state = saved
        loaded = workspace.load(state.config, clock)
        exchange = ThreatExchange(loaded.require_network())
        reader = loaded.agent(bob.serial)
        envelope, = exchange.list_envelopes(reader, CHANNEL, unread=True)
        assert exchange.receive_bundle(reader, CHANNEL, envelope.envelope_id).canonical() == bundle.canonical()

    def test_empty_directory_loads_without_a_network(self, tmp_path):
        state = Workspace(tmp_path / "empty").load()
        assert state.network is None
        with pytest.raises(CliError) as e:
            state.require_network()
        assert e.value.code == "USAGE"
        with pytest.raises(CliError) as e:
            state.identity()
        assert e.value.code == "UNKNOWN_IDENTITY"
