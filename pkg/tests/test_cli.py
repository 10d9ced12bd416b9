import io
import json
from pathlib import Path

import pytest

from src.cli import dispatch
from src.demo import DEMO_SENTINEL
from src.models.threat_bundle import ThreatBundle
from src.storage import Workspace

DATA = Path(__file__).resolve().parent.parent / "data"
PHISHING = DATA / "sample_bundles" / "phishing_campaign.json"
OFFICE_HOURS = DATA / "sample_policies" / "office_hours_gb.json"


class Tips:
    """Runs `tips` against one data dir and keeps the last stdout/stderr"""

    def __init__(self, data_dir):
        self.data_dir = data_dir
        self.out = ""
        self.err = ""

    def __call__(self, *argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        code = dispatch(["--data-dir", str(self.data_dir), *map(str, argv)], stdout, stderr)
        self.out, self.err = stdout.getvalue(), stderr.getvalue()
        return code

    def json(self, *argv):
        code = self("--output", "json", *argv)
        assert code == 0, self.err
        return json.loads(self.out)


@pytest.fixture
def tips(tmp_path, monkeypatch):
    monkeypatch.delenv("TIPS_DATA_DIR", raising=False)
    return Tips(tmp_path / "tips")


@pytest.fixture
def session(tips):
    """CA, alice (active) in OrgA, bob in OrgB with a published exchange key, and one channel"""
    assert tips("ca", "init", "--name", "TestCA") == 0, tips.err
    alice = tips.json("ca", "issue", "--name", "alice", "--org", "OrgA")['serial']
    bob = tips.json("ca", "issue", "--name", "bob", "--org", "OrgB", "--attr", "clearance=tlp-amber")['serial']
    for serial in (alice, bob):
        assert tips("enroll", "--serial", serial) == 0, tips.err
    assert tips("channel", "create", "--id", "ab-chan", "--orgs", "OrgA,OrgB") == 0, tips.err
    assert tips("--as", bob, "agent", "keygen") == 0, tips.err
    assert tips("--as", bob, "agent", "publish-key") == 0, tips.err
    return alice, bob


class TestSurface:
    def test_help(self, tips, capsys):
        assert tips("--help") == 0
        assert "channel" in capsys.readouterr().out

    def test_no_command(self, tips):
        assert tips() == 2
        assert "COMMAND" in tips.out

    def test_unknown_command(self, tips):
        assert tips("frobnicate") == 2
        assert tips.err.startswith("ERROR UNKNOWN_COMMAND:")

    def test_missing_argument(self, tips):
        assert tips("enroll") == 2
        assert tips.err.startswith("ERROR USAGE:")

    def test_commands_before_ca_init(self, tips):
        assert tips("channel", "list") == 2
        assert "ca init" in tips.err

    def test_json_error_document(self, tips):
        assert tips("--output", "json", "object", "get", "--key", "x") == 2
        assert json.loads(tips.out)['error']['code'] == "USAGE"

    @pytest.mark.parametrize("value", ["abc", "0"])
    def test_malformed_environment(self, tips, monkeypatch, value):
        monkeypatch.setenv("TIPS_BATCH_SIZE", value)
        assert tips("channel", "list") == 2
        assert tips.err.startswith("ERROR INVALID_CONFIG:")


class TestSession:
    def test_send_and_receive(self, tips, session, tmp_path):
        alice, bob = session
        assert tips("send", "--to", bob, "--bundle", PHISHING) == 0, tips.err

        inbox = tips.json("--as", bob, "inbox", "--unread")['envelopes']
        assert [row['sender'] for row in inbox] == [alice]

        out = tmp_path / "received.json"
        assert tips("--as", bob, "recv", "--envelope", inbox[0]['envelope_id'], "--out", out) == 0, tips.err
        assert out.read_bytes() == ThreatBundle.from_bytes(PHISHING.read_bytes()).canonical()
        assert tips.json("--as", bob, "inbox", "--unread")['envelopes'] == []

        events = tips.json("audit")['events']
        assert {e['event_type'] for e in events} >= {"KeyPublished", "EnvelopePosted", "EnvelopeRead"}
        verified = tips.json("channel", "verify")
        assert verified['ok'] and verified['blocks_checked'] > 1

    def test_unwritable_output_path(self, tips, session, tmp_path):
        _, bob = session
        assert tips("send", "--to", bob, "--bundle", PHISHING) == 0, tips.err
        envelope = tips.json("--as", bob, "inbox")['envelopes'][0]['envelope_id']
        out = tmp_path / "no-such-dir" / "received.json"
        assert tips("--as", bob, "recv", "--envelope", envelope, "--out", out) == 1
        assert tips.err.startswith("ERROR IO_ERROR:")
        assert "no-such-dir" in tips.err

    def test_policy_denial_exits_three(self, tips, session):
        _, bob = session
        assert tips("send", "--to", bob, "--bundle", PHISHING, "--policy", OFFICE_HOURS) == 0, tips.err
        envelope = tips.json("--as", bob, "inbox")['envelopes'][0]['envelope_id']
        assert tips("--as", bob, "agent", "attest", "--location", "GB") == 0, tips.err

        assert tips("--as", bob, "recv", "--envelope", envelope) == 3
        assert tips.err.startswith("ERROR POLICY_DENIED:")
        denials = tips.json("audit", "--type", "PolicyDenied")['events']
        assert [(e['actor'], e['subject']) for e in denials] == [(bob, envelope)]

    def test_objects(self, tips, session, tmp_path):
        payload = tmp_path / "notes.txt"
        payload.write_bytes(b"incident notes for subject-42")
        assert tips("object", "put", "--key", "inc-1", "--file", payload, "--subject", "subject-42") == 0, tips.err
        assert tips("object", "get", "--key", "inc-1") == 0
        assert tips.out.strip() == "incident notes for subject-42"

        erased = tips.json("object", "erase", "--key", "inc-1")['receipts']
        assert [r['key'] for r in erased] == ["inc-1"]
        assert tips("object", "get", "--key", "inc-1") != 0
        assert tips.err.startswith("ERROR TOMBSTONED:")
        assert tips("object", "get", "--key", "never-stored") == 5

    def test_revoked_identity_is_refused(self, tips, session, tmp_path):
        alice, _ = session
        assert tips("ca", "revoke", "--serial", alice) == 0, tips.err
        payload = tmp_path / "notes.txt"
        payload.write_bytes(b"x")
        assert tips("object", "put", "--key", "k", "--file", payload) == 3
        assert tips.err.startswith("ERROR IDENTITY_REJECTED:")
        assert "REVOKED" in tips.err

    def test_config_set(self, tips, session):
        _, bob = session
        assert tips("config", "set", "active_identity", bob) == 0, tips.err
        assert tips.json("inbox")['envelopes'] == []
        assert tips("config", "set", "colour", "red") == 2
        assert tips("config", "set", "active_identity", 9999) == 5


class TestDemo:
    def test_transcript_is_reproducible(self, tmp_path, monkeypatch):
        monkeypatch.delenv("TIPS_DATA_DIR", raising=False)
        first, second = Tips(tmp_path / "one"), Tips(tmp_path / "two")
        assert first("demo") == 0, first.err
        assert second("demo") == 0, second.err
        assert first.out == second.out
        assert "match=True" in first.out
        assert "verify-chain ok=True" in first.out

    def test_demo_leaves_a_usable_workspace(self, tips):
        assert tips("demo") == 0, tips.err
        assert tips("channel", "verify") == 0, tips.err
        assert tips.json("audit")['events']

    def test_demo_never_persists_the_plaintext(self, tips):
        assert tips("demo") == 0, tips.err
        files = Workspace(tips.data_dir).persisted_files()
        assert any(path.name == "blocks.jsonl" for path in files)
        for path in files:
            assert DEMO_SENTINEL.encode() not in path.read_bytes(), path

    def test_demo_needs_an_empty_data_dir(self, tips):
        assert tips("demo") == 0, tips.err
        assert tips("demo") == 5
        assert tips.err.startswith("ERROR DATA_DIR_NOT_EMPTY:")
