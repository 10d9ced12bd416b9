"""
Command-line surface: CA administration, enrollment, channels, the agent
exchange, objects, audit, benchmarking and the scripted demo.

Every failure prints `ERROR <CODE>: <message>` on stderr and exits with the
code owned by the failing module; `--output json` makes stdout one
key-sorted JSON document.
"""
import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from datetime import timedelta
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from config.logging_config import configure_logging
from config.tips_config import OUTPUT_FORMATS, TipsConfig
from .bench import (
    Workload,
    WorkloadSpec,
    emit_report,
    emit_sweep,
    load_sweep,
    reference_report,
    run_benchmark,
    sweep,
)
from .canonical import parse_utc, pretty_json, utc_now
from .contract import footprint
from .crypto import generate_keypair
from .demo import golden_demo
from .errors import CliError, LedgerError, TipsError
from .exchange import ThreatExchange
from .identity import CertificateAuthority, EnrolledIdentity, MembershipService, create_csr
from .ledger import verify_block_log
from .models.access_policy import AttributeAttestation
from .models.certificate import Subject
from .models.threat_bundle import ThreatBundle
from .models.transaction import ChannelMode, EndorsementPolicy
from .network import Network
from .objects import ObjectClient
from .offchain_store import OffChainStore
from .policy import attest, load_policy
from .storage import DEFAULT_MSP_ID, Workspace, WorkspaceState, read_json, write_json

logger = logging.getLogger(__name__)


@dataclass
class Output:
    data: Any
    text: str = ""


class TipsArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so errors share the ERROR line format"""

    def error(self, message: str):
        code = "UNKNOWN_COMMAND" if "invalid choice" in message else "USAGE"
        raise CliError(code, message)


class Context:
    """Per-invocation state; the workspace is loaded on first use"""

    def __init__(self, args: argparse.Namespace, config: TipsConfig):
        self.args = args
        self.config = config
        self.workspace = Workspace(config.data_dir)
        self._state: Optional[WorkspaceState] = None

    @property
    def loaded(self) -> bool:
        return self._state is not None

    @property
    def state(self) -> WorkspaceState:
        if self._state is None:
            self._state = self.workspace.load(self.config)
        return self._state

    @property
    def network(self) -> Network:
        return self.state.require_network()

    def identity(self) -> EnrolledIdentity:
        return self.state.identity(self.args.as_serial)

    def channel_id(self) -> str:
        channel = getattr(self.args, 'channel', None) or self.state.cli.default_channel
        if not channel:
            raise CliError("USAGE", "no channel given and no default_channel configured")
        return channel


def _parse_attrs(pairs: Optional[Sequence[str]]) -> Dict[str, str]:
    attributes = {}
    for pair in pairs or []:
        name, sep, value = pair.partition("=")
        if not sep or not name:
            raise CliError("USAGE", f"attribute {pair!r} must look like name=value")
        attributes[name] = value
    return attributes


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise CliError("USAGE", f"cannot read {path}: {e.strerror}") from e


# -- ca / enroll --------------------------------------------------------------

def cmd_ca_init(ctx: Context) -> Output:
    state = ctx.state
    if state.authorities:
        raise CliError("USAGE", f"{ctx.workspace.root} already has CA {state.authority().name}")
    now = utc_now()
    ca = CertificateAuthority.create(ctx.args.name, now)
    state.authorities[ca.name] = ca
    state.msp = MembershipService.for_authorities(DEFAULT_MSP_ID, [ca], ctx.config.access_policies)
    state.network = Network(state.msp, OffChainStore(ctx.workspace.offchain_dir), ctx.config)
    return Output({'ca': ca.name, 'key_id': ca.key_id_hex}, f"Created CA {ca.name} ({ca.key_id_hex[:16]})")


def cmd_ca_issue(ctx: Context) -> Output:
    state = ctx.state
    ca = state.authority(ctx.args.ca)
    keypair = generate_keypair()
    requested = _parse_attrs(ctx.args.attr)
    requested['role'] = ctx.args.role
    csr = create_csr(keypair, Subject(ctx.args.name, ctx.args.org), requested)
    write_json(ctx.workspace.csr_dir / f"{ctx.args.name}.json", csr.to_dict())
    validity = ctx.config.certificate_validity if ctx.args.days is None else timedelta(days=ctx.args.days)
    certificate = ca.issue_certificate(csr, utc_now(), validity)
    state.identities[certificate.serial] = EnrolledIdentity(certificate, keypair)
    ctx.workspace.save_private_key(certificate.serial, keypair)
    return Output(certificate.to_dict(),
                  f"Issued serial {certificate.serial} to {certificate.subject} (role={certificate.role})")


def cmd_ca_revoke(ctx: Context) -> Output:
    state = ctx.state
    ca = state.authority(ctx.args.ca)
    crl = ca.revoke(ctx.args.serial, utc_now())
    state.msp.refresh_crls()
    return Output(crl.to_dict(), f"Revoked serial {ctx.args.serial}; CRL version {crl.version}")


def cmd_ca_renew(ctx: Context) -> Output:
    state = ctx.state
    ca = state.authority(ctx.args.ca)
    old = state.identity(ctx.args.serial)
    now = utc_now()
    requested = dict(old.certificate.attributes.extra)
    requested['role'] = old.role
    csr = create_csr(old.keypair, old.certificate.subject, requested)
    certificate = ca.renew(old.serial, csr, now, ctx.config.certificate_validity)
    state.msp.refresh_crls()
    state.msp.enroll(certificate, now)
    state.identities[certificate.serial] = EnrolledIdentity(certificate, old.keypair)
    ctx.workspace.save_private_key(certificate.serial, old.keypair)
    if state.cli.active_identity == old.serial:
        state.cli.active_identity = certificate.serial
    return Output(certificate.to_dict(), f"Renewed serial {old.serial} as {certificate.serial}")


def cmd_enroll(ctx: Context) -> Output:
    state = ctx.state
    identity = state.identity(ctx.args.serial)
    record = state.msp.enroll(identity.certificate, utc_now())
    if state.cli.active_identity is None or ctx.args.activate:
        state.cli.active_identity = identity.serial
    return Output(record.to_dict(), f"Enrolled {identity.name} as serial {identity.serial} ({identity.org})")


# -- channels -----------------------------------------------------------------

def cmd_channel_create(ctx: Context) -> Output:
    state = ctx.state
    network = ctx.network
    orgs = sorted({org.strip() for org in ctx.args.orgs.split(",") if org.strip()})
    missing = [org for org in orgs if org not in network.peers]
    for peer in network.provision_peers(state.authority(), missing):
        state.identities[peer.serial] = peer.identity
    channel = network.create_channel(ctx.args.id, orgs, EndorsementPolicy.parse(ctx.args.policy),
                                     ChannelMode(ctx.args.mode))
    if state.cli.default_channel is None:
        state.cli.default_channel = channel.channel_id
    return Output(channel.to_dict(), f"Created channel {channel.channel_id} for {', '.join(orgs)} "
                                     f"({channel.endorsement_policy.value}, {channel.required_endorsements} endorsements)")


def cmd_channel_list(ctx: Context) -> Output:
    rows = []
    for channel_id in sorted(ctx.network.channels):
        channel = ctx.network.channels[channel_id]
        row = channel.to_dict()
        row.update({'height': channel.height, 'closed': channel.closed})
        rows.append(row)
    text = "\n".join(f"{r['channel_id']}  height={r['height']}  members={','.join(r['member_orgs'])}  "
                     f"mode={r['mode']}{'  closed' if r['closed'] else ''}" for r in rows)
    return Output({'channels': rows}, text or "No channels")


def cmd_channel_verify(ctx: Context) -> Output:
    channel_id = ctx.channel_id()
    log = ctx.workspace.block_log(channel_id)
    if not log.exists():
        raise LedgerError("UNKNOWN_CHANNEL", f"no block log for {channel_id}")
    report = verify_block_log(log)
    if not report.ok:
        raise LedgerError("BROKEN_CHAIN", f"{channel_id} height {report.first_bad_height}: {report.detail}")
    sizes = footprint(ctx.network.channel(channel_id), ctx.network.store)
    data = {'channel_id': channel_id, 'ok': True, 'blocks_checked': report.blocks_checked, 'footprint': sizes}
    return Output(data, f"{channel_id}: {report.blocks_checked} blocks verified; "
                        f"{sizes['on_chain_bytes']} octets on-chain, {sizes['off_chain_bytes']} off-chain")


# -- agent exchange -----------------------------------------------------------

def cmd_agent_keygen(ctx: Context) -> Output:
    agent = ctx.state.agent(ctx.args.as_serial)
    keypair = agent.rotate_exchange_keys()
    return Output({'serial': agent.serial, 'key_id': keypair.key_id.hex, 'keys': len(agent.exchange_keys)},
                  f"Generated exchange key {keypair.key_id.hex[:16]} for {agent.name}")


def cmd_agent_publish(ctx: Context) -> Output:
    agent = ctx.state.agent(ctx.args.as_serial)
    published = ThreatExchange(ctx.network).publish_public_key(agent, ctx.channel_id())
    return Output(published.to_dict(), f"Published exchange key v{published.version} of {agent.name} "
                                       f"on {published.channel_id}")


def cmd_agent_attest(ctx: Context) -> Output:
    identity = ctx.identity()
    now = utc_now()
    claimed = parse_utc(ctx.args.time) if ctx.args.time else None
    attestation = attest(identity, now, ctx.args.location, claimed)
    write_json(ctx.workspace.attestations_dir / f"{identity.serial}.json", attestation.to_dict())
    return Output(attestation.to_dict(), f"Attested {attestation.claimed_location} for serial {identity.serial}")


def cmd_send(ctx: Context) -> Output:
    agent = ctx.state.agent(ctx.args.as_serial)
    bundle = ThreatBundle.from_bytes(_read_bytes(ctx.args.bundle), strict=True)
    policy = load_policy(Path(ctx.args.policy)) if ctx.args.policy else None
    envelope = ThreatExchange(ctx.network).send_bundle(agent, ctx.channel_id(), ctx.args.to, bundle, policy)
    return Output(envelope.to_dict(), f"Posted envelope {envelope.envelope_id} to serial {envelope.recipient}")


def _attestation_for(ctx: Context, serial: int) -> Optional[AttributeAttestation]:
    path = Path(ctx.args.attestation) if ctx.args.attestation else ctx.workspace.attestations_dir / f"{serial}.json"
    if not path.exists():
        return None
    return AttributeAttestation.from_dict(read_json(path))


def cmd_recv(ctx: Context) -> Output:
    agent = ctx.state.agent(ctx.args.as_serial)
    attestation = _attestation_for(ctx, agent.serial)
    bundle = ThreatExchange(ctx.network).receive_bundle(agent, ctx.channel_id(), ctx.args.envelope, attestation)
    if ctx.args.out:
        Path(ctx.args.out).write_bytes(bundle.canonical())
        return Output({'envelope_id': ctx.args.envelope, 'bundle_id': bundle.bundle_id, 'out': ctx.args.out},
                      f"Wrote {bundle.bundle_id} ({len(bundle.objects)} indicators) to {ctx.args.out}")
    return Output({'envelope_id': ctx.args.envelope, 'bundle': bundle.to_dict()}, pretty_json(bundle.to_dict()))


def cmd_inbox(ctx: Context) -> Output:
    agent = ctx.state.agent(ctx.args.as_serial)
    rows = ThreatExchange(ctx.network).list_envelopes(agent, ctx.channel_id(), unread=ctx.args.unread,
                                                      sender=ctx.args.sender)
    text = "\n".join(f"{r.envelope_id[:16]}  from={r.sender}  posted={r.to_dict()['posted_at']}  "
                     f"{'read' if r.read else 'unread'}" for r in rows)
    return Output({'envelopes': [r.to_dict() for r in rows]}, text or "Inbox empty")


# -- objects ------------------------------------------------------------------

def _objects(ctx: Context) -> ObjectClient:
    return ObjectClient(ctx.network, ctx.identity(), ctx.channel_id())


def cmd_object_put(ctx: Context) -> Output:
    record = _objects(ctx).put_object(ctx.args.key, _read_bytes(ctx.args.file), ctx.args.subject)
    return Output(record.summary(), f"Stored {record.object_key} v{record.version} ({record.size} octets)")


def cmd_object_get(ctx: Context) -> Output:
    payload = _objects(ctx).get_object(ctx.args.key)
    if ctx.args.out:
        Path(ctx.args.out).write_bytes(payload)
    return Output({'key': ctx.args.key, 'size': len(payload), 'out': ctx.args.out},
                  f"Wrote {len(payload)} octets to {ctx.args.out}" if ctx.args.out
                  else payload.decode("utf-8", errors="replace"))


def cmd_object_lineage(ctx: Context) -> Output:
    entries = _objects(ctx).get_lineage(ctx.args.key)
    rows = [entry.to_dict() for entry in entries]
    text = "\n".join(f"v{r['version']}  {r['action']}  actor={r['actor']}  {r['timestamp']}" for r in rows)
    return Output({'key': ctx.args.key, 'lineage': rows}, text)


def cmd_object_erase(ctx: Context) -> Output:
    if bool(ctx.args.key) == bool(ctx.args.subject):
        raise CliError("USAGE", "erase needs exactly one of --key or --subject")
    client = _objects(ctx)
    receipts = [client.erase_object(ctx.args.key)] if ctx.args.key else client.erase_subject(ctx.args.subject)
    for receipt in receipts:
        ctx.workspace.save_record(ctx.workspace.receipts_dir, f"{receipt.key}-{receipt.tx_id[:16]}", receipt.to_dict())
    text = "\n".join(f"Erased {r.key}; receipt signed by serial {r.signer}" for r in receipts)
    return Output({'receipts': [r.to_dict() for r in receipts]}, text or "Nothing to erase")


# -- audit --------------------------------------------------------------------

def cmd_audit(ctx: Context) -> Output:
    identity = ctx.identity()
    channel = ctx.network.channel(ctx.channel_id())
    events = channel.audit_query(
        identity.org,
        actor=ctx.args.actor,
        event_type=ctx.args.type,
        since=parse_utc(ctx.args.since) if ctx.args.since else None,
        until=parse_utc(ctx.args.until) if ctx.args.until else None,
    )
    rows = [event.to_dict() for event in events]
    text = "\n".join(f"{r['wall_time']}  {r['event_type']:<14} actor={r['actor']}  block={r['block_height']}  "
                     f"{r['subject'][:24]}" for r in rows)
    return Output({'events': rows}, text or "No events")


# -- bench / demo / config -----------------------------------------------------

def _report_format(ctx: Context) -> str:
    return "json" if ctx.args.output == "json" else ctx.args.format


def _write_or_return(ctx: Context, data: Any, rendered: str) -> Output:
    if ctx.args.out:
        Path(ctx.args.out).write_text(rendered + ("" if rendered.endswith("\n") else "\n"), encoding="utf-8")
    return Output(data, rendered)


def cmd_bench_run(ctx: Context) -> Output:
    spec = WorkloadSpec(
        workload=Workload.parse(ctx.args.workload),
        tx_count=ctx.args.tx,
        worker_count=ctx.args.workers,
        target_send_rate=ctx.args.rate,
        batch_size=ctx.args.batch_size,
        orderer_batch_size=ctx.args.orderer_batch_size,
        orderer_batch_timeout=ctx.args.orderer_batch_timeout,
    )
    report = run_benchmark(spec, ctx.config)
    return _write_or_return(ctx, report.to_dict(), emit_report(report, _report_format(ctx)))


def cmd_bench_sweep(ctx: Context) -> Output:
    reports = sweep(load_sweep(Path(ctx.args.config)), ctx.config)
    return _write_or_return(ctx, [r.to_dict() for r in reports], emit_sweep(reports, _report_format(ctx)))


def cmd_bench_reference(ctx: Context) -> Output:
    report = reference_report()
    return Output(report.to_dict(), emit_report(report, _report_format(ctx)))


def cmd_demo(ctx: Context) -> Output:
    lines = golden_demo(ctx.config.data_dir, ctx.config)
    return Output({'transcript': lines}, "\n".join(lines))


CONFIG_KEYS: Dict[str, Callable[[str], Any]] = {
    'active_identity': int,
    'default_channel': str,
    'output_format': str,
}


def cmd_config_set(ctx: Context) -> Output:
    parser = CONFIG_KEYS.get(ctx.args.key)
    if parser is None:
        raise CliError("USAGE", f"unknown setting {ctx.args.key}; one of {', '.join(sorted(CONFIG_KEYS))}")
    try:
        value = parser(ctx.args.value)
        settings = replace(ctx.state.cli, **{ctx.args.key: value})
    except ValueError as e:
        raise CliError("USAGE", str(e)) from e
    if ctx.args.key == 'active_identity':
        ctx.state.identity(value)
    ctx.state.cli = settings
    return Output(settings.to_dict(), f"{ctx.args.key} = {value}")


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = TipsArgumentParser(prog="tips", description="Threat intelligence sharing over a permissioned ledger")
    p.add_argument('--data-dir', help='Workspace directory (default ./.tips; TIPS_DATA_DIR wins)', metavar='DIR')
    p.add_argument('--as', dest='as_serial', type=int, help='Act as this enrolled serial', metavar='SERIAL')
    p.add_argument('--output', choices=OUTPUT_FORMATS, help='Output format')
    p.add_argument('--verbose', '-v', action='count', default=0, help='More logging (-vv for debug)')
    commands = p.add_subparsers(dest='command', metavar='COMMAND', parser_class=TipsArgumentParser)

    ca = commands.add_parser('ca', help='Certificate authority administration').add_subparsers(
        dest='ca_command', metavar='ACTION', required=True, parser_class=TipsArgumentParser)
    c = ca.add_parser('init', help='Create the certificate authority and MSP')
    c.add_argument('--name', default='TipsRootCA')
    c.set_defaults(handler=cmd_ca_init)
    c = ca.add_parser('issue', help='Generate a key, build a CSR and issue a certificate')
    c.add_argument('--name', required=True, help='Subject common name')
    c.add_argument('--org', required=True)
    c.add_argument('--role', default='member')
    c.add_argument('--attr', action='append', help='Extra attribute name=value', metavar='NAME=VALUE')
    c.add_argument('--days', type=int, help='Validity in days')
    c.add_argument('--ca')
    c.set_defaults(handler=cmd_ca_issue)
    c = ca.add_parser('revoke', help='Revoke a serial')
    c.add_argument('--serial', type=int, required=True)
    c.add_argument('--ca')
    c.set_defaults(handler=cmd_ca_revoke)
    c = ca.add_parser('renew', help='Revoke a serial and reissue for the same key')
    c.add_argument('--serial', type=int, required=True)
    c.add_argument('--ca')
    c.set_defaults(handler=cmd_ca_renew)

    c = commands.add_parser('enroll', help='Enroll an issued certificate with the MSP')
    c.add_argument('--serial', type=int, required=True)
    c.add_argument('--activate', action='store_true', help='Make it the active identity')
    c.set_defaults(handler=cmd_enroll)

    channel = commands.add_parser('channel', help='Channel management').add_subparsers(
        dest='channel_command', metavar='ACTION', required=True, parser_class=TipsArgumentParser)
    c = channel.add_parser('create')
    c.add_argument('--id', required=True)
    c.add_argument('--orgs', required=True, help='Comma-separated member orgs')
    c.add_argument('--policy', default='majority', help='majority, all or any')
    c.add_argument('--mode', default=ChannelMode.LONG_TERM.value, choices=[m.value for m in ChannelMode])
    c.set_defaults(handler=cmd_channel_create)
    c = channel.add_parser('list')
    c.set_defaults(handler=cmd_channel_list, read_only=True)
    c = channel.add_parser('verify', help='Check the persisted hash chain')
    c.add_argument('--channel')
    c.set_defaults(handler=cmd_channel_verify, read_only=True)

    agent = commands.add_parser('agent', help='Exchange keys and attestations').add_subparsers(
        dest='agent_command', metavar='ACTION', required=True, parser_class=TipsArgumentParser)
    c = agent.add_parser('keygen')
    c.set_defaults(handler=cmd_agent_keygen)
    c = agent.add_parser('publish-key')
    c.add_argument('--channel')
    c.set_defaults(handler=cmd_agent_publish)
    c = agent.add_parser('attest')
    c.add_argument('--location', required=True, help='ISO-3166 alpha-2 country code')
    c.add_argument('--time', help='Claimed time (ISO-8601); defaults to now')
    c.set_defaults(handler=cmd_agent_attest)

    c = commands.add_parser('send', help='Encrypt a STIX bundle to a recipient and post it')
    c.add_argument('--channel')
    c.add_argument('--to', type=int, required=True, metavar='SERIAL')
    c.add_argument('--bundle', required=True, metavar='FILE')
    c.add_argument('--policy', metavar='FILE')
    c.set_defaults(handler=cmd_send)
    c = commands.add_parser('recv', help='Receive and decrypt an envelope')
    c.add_argument('--channel')
    c.add_argument('--envelope', required=True)
    c.add_argument('--attestation', metavar='FILE')
    c.add_argument('--out', metavar='FILE')
    c.set_defaults(handler=cmd_recv)
    c = commands.add_parser('inbox', help='List envelopes addressed to the active identity')
    c.add_argument('--channel')
    c.add_argument('--unread', action='store_true')
    c.add_argument('--sender', type=int)
    c.set_defaults(handler=cmd_inbox, read_only=True)

    obj = commands.add_parser('object', help='Checksummed object storage').add_subparsers(
        dest='object_command', metavar='ACTION', required=True, parser_class=TipsArgumentParser)
    c = obj.add_parser('put')
    c.add_argument('--channel')
    c.add_argument('--key', required=True)
    c.add_argument('--file', required=True)
    c.add_argument('--subject', action='append', help='Data-subject tag')
    c.set_defaults(handler=cmd_object_put)
    c = obj.add_parser('get')
    c.add_argument('--channel')
    c.add_argument('--key', required=True)
    c.add_argument('--out', metavar='FILE')
    c.set_defaults(handler=cmd_object_get, read_only=True)
    c = obj.add_parser('lineage')
    c.add_argument('--channel')
    c.add_argument('--key', required=True)
    c.set_defaults(handler=cmd_object_lineage, read_only=True)
    c = obj.add_parser('erase')
    c.add_argument('--channel')
    c.add_argument('--key')
    c.add_argument('--subject')
    c.set_defaults(handler=cmd_object_erase)

    c = commands.add_parser('audit', help='Query the audit trail')
    c.add_argument('--channel')
    c.add_argument('--actor', type=int)
    c.add_argument('--type')
    c.add_argument('--since')
    c.add_argument('--until')
    c.set_defaults(handler=cmd_audit, read_only=True)

    bench = commands.add_parser('bench', help='Benchmark harness').add_subparsers(
        dest='bench_command', metavar='ACTION', required=True, parser_class=TipsArgumentParser)
    c = bench.add_parser('run')
    c.add_argument('--workload', default='read', choices=[w.value for w in Workload])
    c.add_argument('--tx', type=int, default=100)
    c.add_argument('--workers', type=int, default=1)
    c.add_argument('--rate', type=float, help='Open-loop send rate (tx/s)')
    c.add_argument('--batch-size', type=int, default=10, help='Keys per GetAssetsFromBatch')
    c.add_argument('--orderer-batch-size', type=int)
    c.add_argument('--orderer-batch-timeout', type=float)
    c.add_argument('--format', default='human', choices=['human', 'json', 'csv'])
    c.add_argument('--out', metavar='FILE')
    c.set_defaults(handler=cmd_bench_run, standalone=True)
    c = bench.add_parser('sweep')
    c.add_argument('--config', required=True, metavar='FILE')
    c.add_argument('--format', default='human', choices=['human', 'json', 'csv'])
    c.add_argument('--out', metavar='FILE')
    c.set_defaults(handler=cmd_bench_sweep, standalone=True)
    c = bench.add_parser('reference', help='Show the published reference figures')
    c.add_argument('--format', default='human', choices=['human', 'json', 'csv'])
    c.set_defaults(handler=cmd_bench_reference, standalone=True)

    c = commands.add_parser('demo', help='Run the scripted exchange in an empty data dir')
    c.set_defaults(handler=cmd_demo, standalone=True)

    config = commands.add_parser('config', help='CLI settings').add_subparsers(
        dest='config_command', metavar='ACTION', required=True, parser_class=TipsArgumentParser)
    c = config.add_parser('set')
    c.add_argument('key')
    c.add_argument('value')
    c.set_defaults(handler=cmd_config_set)
    return p


def _render(output_format: Optional[str], result: Output, out=None) -> None:
    out = out or sys.stdout
    if output_format == "json":
        out.write(json.dumps(result.data, sort_keys=True) + "\n")
    elif result.text:
        out.write(result.text + ("" if result.text.endswith("\n") else "\n"))


def dispatch(argv: Optional[List[str]] = None, stdout=None, stderr=None) -> int:
    """Run one command; returns the process exit code"""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    output_format = None
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return int(e.code or 0)
        if args.command is None:
            parser.print_help(stdout)
            return 2

        config = TipsConfig.from_env(data_dir=Path(args.data_dir) if args.data_dir else None)
        configure_logging("DEBUG" if args.verbose > 1 else "INFO" if args.verbose else config.log_level)
        ctx = Context(args, config)
        output_format = args.output
        if getattr(args, 'standalone', False):
            result = args.handler(ctx)
        else:
            with ctx.workspace.lock():
                if output_format is None:
                    output_format = ctx.state.cli.output_format
                try:
                    result = args.handler(ctx)
                finally:
                    if ctx.loaded and not getattr(args, 'read_only', False):
                        ctx.workspace.save(ctx.state)
        _render(output_format, result, stdout)
        return 0
    except TipsError as e:
        return _report_error(e, output_format, stdout, stderr)
    except OSError as e:
        logger.debug("I/O failure", exc_info=True)
        target = f" {e.filename}" if e.filename else ""
        return _report_error(CliError("IO_ERROR", f"{e.strerror or e}{target}"), output_format, stdout, stderr)


def _report_error(error: TipsError, output_format: Optional[str], stdout, stderr) -> int:
    stderr.write(f"ERROR {error.code}: {error.message}\n")
    if output_format == "json":
        stdout.write(json.dumps({'error': error.to_dict()}, sort_keys=True) + "\n")
    return error.exit_code


def main() -> int:
    return dispatch(sys.argv[1:])
