import itertools
import random
from datetime import datetime, timedelta

import pytest

from config.tips_config import TipsConfig
from src.canonical import UTC
from src.crypto import generate_keypair
from src.demo import SteppingClock
from src.exchange import Agent, ThreatExchange
from src.identity import CertificateAuthority, MembershipService, issue_identity
from src.models.threat_bundle import generate_bundle
from src.network import Network
from src.offchain_store import OffChainStore

T0 = datetime(2024, 1, 15, 9, 0, 0, tzinfo=UTC)
ORGS = ("OrgA", "OrgB")
CHANNEL = "ab-chan"


class KeyPool:
    """RSA generation dominates test time; hand out pre-generated pairs"""

    def __init__(self, size):
        self.keys = [generate_keypair() for _ in range(size)]
        self._cycle = itertools.cycle(self.keys)

    def take(self):
        return next(self._cycle)


@pytest.fixture(scope="session")
def key_pool():
    return KeyPool(24)


@pytest.fixture
def clock():
    return SteppingClock(T0, timedelta(milliseconds=1))


@pytest.fixture
def config(tmp_path):
    return TipsConfig(data_dir=tmp_path)


@pytest.fixture
def ca(clock):
    return CertificateAuthority.create("TestCA", clock())


@pytest.fixture
def msp(ca, config):
    return MembershipService.for_authorities("TestMSP", [ca], config.access_policies)


@pytest.fixture
def network(msp, ca, config, clock, tmp_path):
    net = Network(msp, OffChainStore(tmp_path / "offchain"), config, clock)
    net.provision_peers(ca, ORGS, peers_per_org=2)
    net.create_channel(CHANNEL, ORGS)
    return net


@pytest.fixture
def enroll(ca, msp, clock, key_pool):
    def make(name, org="OrgA", **kwargs):
        return issue_identity(ca, msp, name, org, clock(), keypair=key_pool.take(), **kwargs)
    return make


@pytest.fixture
def exchange(network):
    return ThreatExchange(network)


@pytest.fixture
def alice(enroll, key_pool):
    return Agent(enroll("alice", "OrgA"), [key_pool.take()])


@pytest.fixture
def bob(enroll, key_pool, exchange):
    agent = Agent(enroll("bob", "OrgB", attributes={'clearance': 'tlp-amber'}), [key_pool.take()])
    exchange.publish_public_key(agent, CHANNEL)
    return agent


@pytest.fixture
def bundle():
    return generate_bundle(random.Random(11), 3, created_by="alice", sentinel="TEST-SENTINEL-0001")
