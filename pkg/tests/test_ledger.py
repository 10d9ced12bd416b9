"""Ledger, ordering and Execute-Order-Validate tests."""

import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from datetime import timedelta

import pytest

from conftest import CHANNEL, ORGS
from src.canonical import b64encode, canonical_json
from src.crypto import digest
from src.errors import ContractError, LedgerError
from src.ledger import Channel, WorldState, load_block_log, verify_block_log
from src.models.transaction import (
    GENESIS_PREV_HASH,
    AuditEventType,
    EndorsedTransaction,
    EndorsementPolicy,
    ValidationCode,
)
from src.orderer import SoloOrderer
from src.storage import Workspace


def put_args(key, payload=b"indicator"):
    return {'key': key, 'payload': b64encode(payload)}


def commit_puts(network, identity, keys):
    for key in keys:
        network.invoke(identity, CHANNEL, 'put_object', put_args(key, key.encode()))


class TestWorldState:
    def test_absent_key_has_version_zero(self):
        state = WorldState()
        assert state.version("missing") == 0
        assert state.get("missing") is None

    def test_versions_count_writes_and_deletes(self):
        state = WorldState()
        state.apply([("k", 1)])
        state.apply([("k", 2)])
        state.apply([("k", None)])
        assert state.version("k") == 3
        assert state.keys() == []

    def test_large_values_keep_only_a_digest(self):
        state = WorldState(inline_limit=64)
        value = "x" * 100
        state.apply([("big", value), ("small", "y")])
        entry = state.get("big")
        assert (entry.inline, entry.value) == (False, None)
        assert entry.value_digest == digest(canonical_json(value)).hex
        assert state.get("small").inline
        assert state.keys() == ["big", "small"]

    def test_prefix_listing(self):
        state = WorldState()
        state.apply([("object/a", 1), ("object/b", 2), ("lineage/a", 3)])
        assert state.keys("object/") == ["object/a", "object/b"]


class TestEndorsementPolicy:
    @pytest.mark.parametrize("policy,members,required", [
        (EndorsementPolicy.MAJORITY, 1, 1),
        (EndorsementPolicy.MAJORITY, 2, 2),
        (EndorsementPolicy.MAJORITY, 3, 2),
        (EndorsementPolicy.MAJORITY, 4, 3),
        (EndorsementPolicy.ALL, 3, 3),
        (EndorsementPolicy.ANY, 3, 1),
    ])
    def test_required_endorsements(self, policy, members, required):
        assert policy.required(members) == required

    def test_parse_aliases(self):
        assert EndorsementPolicy.parse("majority") is EndorsementPolicy.MAJORITY
        assert EndorsementPolicy.parse("AllOrgs") is EndorsementPolicy.ALL


class TestChannels:
    def test_genesis_block(self, network):
        channel = network.channel(CHANNEL)
        assert channel.height == 0
        genesis = channel.blocks[0]
        assert genesis.prev_hash == GENESIS_PREV_HASH
        assert genesis.block_hash == genesis.compute_hash()
        assert channel.verify_chain().ok

    def test_duplicate_channel(self, network):
        with pytest.raises(LedgerError) as e:
            network.create_channel(CHANNEL, ORGS)
        assert e.value.code == "DUPLICATE_CHANNEL"

    def test_empty_membership(self, network):
        with pytest.raises(LedgerError) as e:
            network.create_channel("nobody", [])
        assert e.value.code == "EMPTY_MEMBERSHIP"

    def test_unknown_channel(self, network):
        with pytest.raises(LedgerError) as e:
            network.channel("missing")
        assert e.value.code == "UNKNOWN_CHANNEL"


class TestExecuteOrderValidate:
    def test_invoke_commits_one_block(self, network, enroll):
        alice = enroll("alice")
        result = network.invoke(alice, CHANNEL, 'put_object', put_args("ioc-1"))
        channel = network.channel(CHANNEL)
        assert result.status.is_valid
        assert result.status.block_height == channel.height == 1
        assert channel.status(result.tx_id).validation_code is ValidationCode.VALID
        assert network.evaluate(alice, CHANNEL, 'get_version', {'key': "ioc-1"}) == {'version': 1}

    def test_single_endorsement_does_not_meet_majority(self, network, enroll):
        proposal = network.propose(enroll("alice"), CHANNEL, 'put_object', put_args("k"))
        endorsements = network.endorse_for_policy(proposal, ["OrgA"])
        with pytest.raises(LedgerError) as e:
            network.submit(proposal, endorsements)
        assert e.value.code == "POLICY_NOT_MET"
        assert e.value.exit_code == 6

    def test_two_peers_of_one_org_count_once(self, network, enroll):
        proposal = network.propose(enroll("alice"), CHANNEL, 'put_object', put_args("k"))
        state = network.channel(CHANNEL).snapshot()
        endorsements = [network.endorse(proposal, "OrgA", peer, state) for peer in network.peers["OrgA"]]
        with pytest.raises(LedgerError) as e:
            network.submit(proposal, endorsements)
        assert e.value.code == "POLICY_NOT_MET"

    def test_disagreeing_endorsements(self, network, enroll):
        proposal = network.propose(enroll("alice"), CHANNEL, 'put_object', put_args("k"))
        first, second = network.endorse_for_policy(proposal)
        with pytest.raises(LedgerError) as e:
            network.submit(proposal, [first, replace(second, response={'forged': True})])
        assert e.value.code == "ENDORSEMENT_MISMATCH"

    def test_forged_endorsement_signature_is_flagged(self, network, enroll):
        proposal = network.propose(enroll("alice"), CHANNEL, 'put_object', put_args("k"))
        first, second = network.endorse_for_policy(proposal)
        forged = replace(second, endorser_signature=first.endorser_signature)
        status = network.wait(CHANNEL, network.submit(proposal, [first, forged]))
        assert status.validation_code is ValidationCode.ENDORSEMENT_POLICY_FAILURE
        assert network.channel(CHANNEL).world_state.version("object/k") == 0

    def test_non_member_endorser_does_not_count(self, network, enroll, ca):
        network.provision_peers(ca, ["OrgC"], peers_per_org=1)
        proposal = network.propose(enroll("alice"), CHANNEL, 'put_object', put_args("k"))
        with pytest.raises(LedgerError) as e:
            network.endorse(proposal, "OrgC")
        assert e.value.code == "NOT_A_MEMBER"

    def test_proposer_outside_channel(self, network, enroll):
        carol = enroll("carol", "OrgC")
        with pytest.raises(LedgerError) as e:
            network.invoke(carol, CHANNEL, 'put_object', put_args("k"))
        assert e.value.code == "NOT_A_MEMBER"

    def test_tampered_proposal_is_rejected(self, network, enroll):
        proposal = network.propose(enroll("alice"), CHANNEL, 'put_object', put_args("k"))
        tampered = replace(proposal, args=put_args("other"))
        with pytest.raises(LedgerError) as e:
            network.endorse(tampered, "OrgA")
        assert e.value.code == "IDENTITY_REJECTED"

    def test_role_without_permission(self, network, enroll, msp):
        alice = enroll("alice")
        msp.config.access_policies['member'] = {'get_checksum'}
        with pytest.raises(ContractError) as e:
            network.invoke(alice, CHANNEL, 'put_object', put_args("k"))
        assert e.value.code == "NOT_AUTHORISED"

    def test_query_only_operation_is_never_ordered(self, network, enroll):
        with pytest.raises(ContractError) as e:
            network.invoke(enroll("alice"), CHANNEL, 'get_object', {'key': "k"})
        assert e.value.code == "QUERY_ONLY"

    def test_duplicate_txid_in_one_block(self, network, enroll):
        proposal = network.propose(enroll("alice"), CHANNEL, 'put_object', put_args("k"))
        endorsements = network.endorse_for_policy(proposal)
        first = network.submit(proposal, endorsements)
        second = network.submit(proposal, endorsements)
        network.orderers[CHANNEL].flush()
        assert first.result().validation_code is ValidationCode.VALID
        assert second.result().validation_code is ValidationCode.DUPLICATE_TXID

    def test_resubmitted_transaction_is_duplicate(self, network, enroll):
        proposal = network.propose(enroll("alice"), CHANNEL, 'put_object', put_args("k"))
        endorsements = network.endorse_for_policy(proposal)
        network.wait(CHANNEL, network.submit(proposal, endorsements))
        replayed = network.wait(CHANNEL, network.submit(proposal, endorsements))
        assert replayed.validation_code is ValidationCode.DUPLICATE_TXID
        assert network.channel(CHANNEL).world_state.version("object/k") == 1

    def test_stale_read_is_mvcc_conflict(self, network, enroll):
        alice = enroll("alice")
        first = network.propose(alice, CHANNEL, 'put_object', put_args("k", b"one"))
        second = network.propose(alice, CHANNEL, 'put_object', put_args("k", b"two"))
        first_endorsed, second_endorsed = network.endorse_for_policy(first), network.endorse_for_policy(second)
        network.wait(CHANNEL, network.submit(first, first_endorsed))
        status = network.wait(CHANNEL, network.submit(second, second_endorsed))
        assert status.validation_code is ValidationCode.MVCC_READ_CONFLICT
        assert network.invoke(alice, CHANNEL, 'put_object', put_args("k", b"three")).status.is_valid
        assert network.evaluate(alice, CHANNEL, 'get_version', {'key': "k"}) == {'version': 2}

    def test_invalid_transactions_stay_in_the_chain(self, network, enroll):
        alice = enroll("alice")
        proposals = [network.propose(alice, CHANNEL, 'put_object', put_args("k", bytes([i]))) for i in range(3)]
        futures = [network.submit(p, network.endorse_for_policy(p)) for p in proposals]
        network.orderers[CHANNEL].flush()
        codes = [f.result().validation_code for f in futures]
        assert codes == [ValidationCode.VALID, ValidationCode.MVCC_READ_CONFLICT, ValidationCode.MVCC_READ_CONFLICT]
        block = network.channel(CHANNEL).blocks[-1]
        assert [tx.validation_code for tx in block.transactions] == codes
        assert network.channel(CHANNEL).verify_chain().ok


def _mvcc_scenario(network, identity, rng, scenario):
    keys = [f"s{scenario}-k{i}" for i in range(rng.randint(1, 3))]
    for key in keys:
        if rng.random() < 0.5:
            network.invoke(identity, CHANNEL, 'put_object', put_args(key, b"seed"))

    chosen = [rng.choice(keys) for _ in range(rng.randint(2, 5))]
    proposals = [network.propose(identity, CHANNEL, 'put_object', put_args(key, f"{scenario}-{i}".encode()))
                 for i, key in enumerate(chosen)]
    endorsed = [network.endorse_for_policy(p) for p in proposals]
    futures = [network.submit(p, e) for p, e in zip(proposals, endorsed)]
    network.orderers[CHANNEL].flush()

    written = set()
    for key, future in zip(chosen, futures):
        expected = ValidationCode.VALID if key not in written else ValidationCode.MVCC_READ_CONFLICT
        assert future.result().validation_code is expected, (scenario, chosen)
        written.add(key)


class TestMvccOracle:
    def test_same_key_writers_in_one_block(self, network, enroll):
        alice = enroll("alice")
        rng = random.Random(7)
        for scenario in range(10):
            _mvcc_scenario(network, alice, rng, scenario)

    @pytest.mark.slow
    def test_two_hundred_random_scenarios(self, network, enroll):
        alice = enroll("alice")
        rng = random.Random(2024)
        for scenario in range(200):
            _mvcc_scenario(network, alice, rng, scenario)
        assert network.channel(CHANNEL).verify_chain().ok


class TestConcurrentOrdering:
    def test_background_orderer_batches_concurrent_clients(self, network, enroll):
        alice = enroll("alice")
        network.start()
        try:
            with ThreadPoolExecutor(max_workers=8) as pool:
                results = list(pool.map(
                    lambda i: network.invoke(alice, CHANNEL, 'put_object', put_args(f"c-{i}")), range(24)))
        finally:
            network.stop()
        channel = network.channel(CHANNEL)
        assert all(r.status.is_valid for r in results)
        assert sum(len(b.transactions) for b in channel.blocks) == 24
        assert all(len(b.transactions) <= network.config.orderer_batch_size for b in channel.blocks)
        assert channel.verify_chain().ok
        timestamps = [b.timestamp for b in channel.blocks]
        assert timestamps == sorted(timestamps)


class TestChainIntegrity:
    @pytest.fixture
    def block_log(self, network, enroll, tmp_path):
        commit_puts(network, enroll("alice"), [f"ioc-{i}" for i in range(10)])
        workspace = Workspace(tmp_path / "ws")
        workspace.save_channel(network.channel(CHANNEL))
        return workspace.block_log(CHANNEL)

    @staticmethod
    def _line_of(raw, position):
        return raw[:position].count(b"\n")

    def test_saved_log_verifies(self, block_log):
        report = verify_block_log(block_log)
        assert report.ok
        assert report.blocks_checked == 11

    def _check_flip(self, block_log, raw, position):
        flipped = bytearray(raw)
        flipped[position] ^= 0x01
        block_log.write_bytes(bytes(flipped))
        report = verify_block_log(block_log)
        assert not report.ok, position
        assert report.first_bad_height == self._line_of(raw, position), position

    def test_sampled_byte_flips_are_located(self, block_log):
        raw = block_log.read_bytes()
        for position in random.Random(3).sample(range(len(raw)), 200):
            self._check_flip(block_log, raw, position)

    @pytest.mark.slow
    def test_every_byte_flip_is_located(self, block_log):
        raw = block_log.read_bytes()
        for position in range(len(raw)):
            self._check_flip(block_log, raw, position)

    def test_in_memory_tamper_is_located(self, network, enroll):
        commit_puts(network, enroll("alice"), ["a", "b", "c"])
        channel = network.channel(CHANNEL)
        channel.blocks[2] = replace(channel.blocks[2], timestamp=channel.blocks[2].timestamp + timedelta(seconds=1))
        report = channel.verify_chain()
        assert (report.ok, report.first_bad_height) == (False, 2)

    def test_restore_rebuilds_the_same_state(self, network, enroll, msp):
        commit_puts(network, enroll("alice"), ["a", "b", "a"])
        channel = network.channel(CHANNEL)
        rebuilt = Channel.from_dict(channel.to_dict(), msp.certificate)
        rebuilt.restore(list(channel.blocks))
        assert rebuilt.world_state.to_dict() == channel.world_state.to_dict()
        assert [e.to_dict() for e in rebuilt.audit_log] == [e.to_dict() for e in channel.audit_log]

    def test_restore_refuses_tampered_blocks(self, network, enroll, msp):
        commit_puts(network, enroll("alice"), ["a", "b"])
        channel = network.channel(CHANNEL)
        blocks = list(channel.blocks)
        tx = blocks[1].transactions[0]
        blocks[1] = replace(blocks[1], transactions=(EndorsedTransaction(tx.proposal, tx.endorsements,
                                                                          ValidationCode.MVCC_READ_CONFLICT),))
        rebuilt = Channel.from_dict(channel.to_dict(), msp.certificate)
        with pytest.raises(LedgerError) as e:
            rebuilt.restore(blocks)
        assert e.value.code == "BROKEN_CHAIN"

    def test_saved_log_loads_back(self, block_log, network):
        blocks = load_block_log(block_log)
        assert [b.block_hash for b in blocks] == [b.block_hash for b in network.channel(CHANNEL).blocks]

    def test_replay_matches_world_state(self, network, enroll):
        alice = enroll("alice")
        commit_puts(network, alice, ["a", "b", "a", "c"])
        network.invoke(alice, CHANNEL, 'erase_object', {'key': "b"})
        channel = network.channel(CHANNEL)
        assert channel.replay_world_state().to_dict() == channel.world_state.to_dict()

    def test_block_must_extend_the_chain(self, network):
        channel = network.channel(CHANNEL)
        orphan = replace(channel.next_block([], channel.blocks[0].timestamp), prev_hash=digest(b"elsewhere"))
        with pytest.raises(LedgerError) as e:
            channel.validate_and_commit(orphan)
        assert e.value.code == "BROKEN_CHAIN"


class TestAudit:
    def test_events_follow_valid_commits(self, network, enroll):
        alice, bob = enroll("alice"), enroll("bob", "OrgB")
        commit_puts(network, alice, ["a", "b"])
        commit_puts(network, bob, ["c"])
        network.invoke(alice, CHANNEL, 'erase_object', {'key': "a"})
        channel = network.channel(CHANNEL)

        stored = channel.audit_query("OrgA", event_type=AuditEventType.OBJECT_STORED)
        assert [e.subject for e in stored] == ["a", "b", "c"]
        assert [e.subject for e in channel.audit_query("OrgB", actor=bob.serial)] == ["c"]
        erased = channel.audit_query("OrgA", event_type="ObjectErased")
        assert [(e.actor, e.subject) for e in erased] == [(alice.serial, "a")]
        assert all(e.block_height > 0 and e.channel_id == CHANNEL for e in channel.audit_log)

    def test_time_window(self, network, enroll):
        alice = enroll("alice")
        commit_puts(network, alice, ["a", "b", "c"])
        channel = network.channel(CHANNEL)
        middle = channel.blocks[2].timestamp
        assert [e.subject for e in channel.audit_query("OrgA", since=middle)] == ["b", "c"]
        assert [e.subject for e in channel.audit_query("OrgA", until=middle)] == ["a"]

    def test_invalid_transactions_are_not_audited(self, network, enroll):
        alice = enroll("alice")
        proposals = [network.propose(alice, CHANNEL, 'put_object', put_args("k", bytes([i]))) for i in range(2)]
        for p in proposals:
            network.submit(p, network.endorse_for_policy(p))
        network.orderers[CHANNEL].flush()
        assert len(network.channel(CHANNEL).audit_log) == 1

    def test_non_member_cannot_query(self, network):
        with pytest.raises(LedgerError) as e:
            network.channel(CHANNEL).audit_query("OrgZ")
        assert e.value.code == "NOT_A_MEMBER"


class TestOrdererBookkeeping:
    def test_failing_listener_does_not_fail_the_commit(self, network, enroll):
        channel = network.channel(CHANNEL)

        def explode(channel, block):
            raise OSError("blob store unavailable")

        channel.add_commit_listener(explode)
        result = network.invoke(enroll("alice"), CHANNEL, 'put_object', put_args("k"))
        assert result.status.is_valid
        assert channel.world_state.version("object/k") == 1
        assert channel.status(result.tx_id).is_valid

    def test_resubmission_keeps_the_first_status(self, network, enroll):
        proposal = network.propose(enroll("alice"), CHANNEL, 'put_object', put_args("k"))
        endorsements = network.endorse_for_policy(proposal)
        first = network.wait(CHANNEL, network.submit(proposal, endorsements))
        network.wait(CHANNEL, network.submit(proposal, endorsements))
        assert network.channel(CHANNEL).status(proposal.tx_id) == first

    def test_leftovers_keep_their_enqueue_time(self, network, enroll):
        alice = enroll("alice")
        orderer = SoloOrderer(network.channel(CHANNEL), batch_size=2, batch_timeout=60)
        network.orderers[CHANNEL] = orderer
        orderer._running = True  # queue without a cutter thread
        proposals = [network.propose(alice, CHANNEL, 'put_object', put_args(f"k{i}")) for i in range(3)]
        futures = [network.submit(p, network.endorse_for_policy(p)) for p in proposals]
        third_queued_at = orderer._queue[2][2]

        cut_at = time.monotonic()
        assert orderer._cut(force=False) == 2
        assert orderer._first_queued_at == third_queued_at < cut_at

        orderer._running = False
        assert orderer.flush() == 1
        assert all(f.result().is_valid for f in futures)
