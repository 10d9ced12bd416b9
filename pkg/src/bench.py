"""
Load generator and report aggregation for the in-process network.

Each run provisions a fresh two-org, two-peers-per-org network under a
temporary directory, drives the chosen workload from a pool of worker
threads and aggregates the per-transaction latency log with pandas.
"""
import json
import logging
import math
import random
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor, wait as wait_all
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import pandas as pd

from config.tips_config import TipsConfig
from .canonical import utc_now
from .errors import BenchError, TipsError
from .exchange import Agent, ThreatExchange
from .identity import CertificateAuthority, MembershipService, issue_identity
from .models.threat_bundle import generate_bundle
from .network import Network
from .objects import ObjectClient
from .offchain_store import OffChainStore

logger = logging.getLogger(__name__)

BENCH_ORGS = ("OrgA", "OrgB")
BENCH_CHANNEL = "bench"
REFERENCE_PATH = Path(__file__).resolve().parent.parent / "data" / "bench" / "published_reference.json"

# Seconds an open-loop arrival may stay in flight before the pool runs short of threads
OPEN_LOOP_LATENCY_BUDGET = 1.0

# Stable report columns, in output order
REPORT_FIELDS = ("send_rate", "throughput", "latency_min", "latency_avg", "latency_max", "failed", "duration")


class Workload(Enum):
    READ_CHECKSUM = "read"
    GET_ASSETS_FROM_BATCH = "batch"
    SEND_RECEIVE_ROUNDTRIP = "roundtrip"
    PUT_OBJECT = "put"

    @classmethod
    def parse(cls, text: str) -> 'Workload':
        for workload in cls:
            if text in (workload.value, workload.name.lower(), workload.name):
                return workload
        raise BenchError("INVALID_WORKLOAD", f"unknown workload {text!r}")


@dataclass(frozen=True)
class WorkloadSpec:
    workload: Workload
    tx_count: int
    worker_count: int = 1
    target_send_rate: Optional[float] = None
    batch_size: int = 10
    orderer_batch_size: Optional[int] = None
    orderer_batch_timeout: Optional[float] = None
    seed: int = 7

    def validate(self) -> 'WorkloadSpec':
        if self.tx_count < 1:
            raise BenchError("INVALID_WORKLOAD", "tx_count must be at least 1")
        if self.worker_count < 1:
            raise BenchError("INVALID_WORKLOAD", "worker_count must be at least 1")
        if self.batch_size < 1:
            raise BenchError("INVALID_WORKLOAD", "batch_size must be at least 1")
        if self.target_send_rate is not None and self.target_send_rate <= 0:
            raise BenchError("INVALID_WORKLOAD", "target_send_rate must be positive")
        if self.orderer_batch_size is not None and self.orderer_batch_size < 1:
            raise BenchError("INVALID_WORKLOAD", "orderer_batch_size must be at least 1")
        if self.orderer_batch_timeout is not None and self.orderer_batch_timeout <= 0:
            raise BenchError("INVALID_WORKLOAD", "orderer_batch_timeout must be positive")
        return self

    def config_for(self, base: TipsConfig) -> TipsConfig:
        return base.with_overrides(orderer_batch_size=self.orderer_batch_size,
                                   orderer_batch_timeout=self.orderer_batch_timeout)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'workload': self.workload.value,
            'tx_count': self.tx_count,
            'worker_count': self.worker_count,
            'target_send_rate': self.target_send_rate,
            'batch_size': self.batch_size,
            'orderer_batch_size': self.orderer_batch_size,
            'orderer_batch_timeout': self.orderer_batch_timeout,
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'WorkloadSpec':
        try:
            return cls(
                workload=Workload.parse(data['workload']),
                tx_count=int(data['tx_count']),
                worker_count=int(data.get('worker_count', 1)),
                target_send_rate=float(data['target_send_rate']) if data.get('target_send_rate') else None,
                batch_size=int(data.get('batch_size', 10)),
                orderer_batch_size=int(data['orderer_batch_size']) if data.get('orderer_batch_size') else None,
                orderer_batch_timeout=(float(data['orderer_batch_timeout'])
                                       if data.get('orderer_batch_timeout') else None),
                seed=int(data.get('seed', 7)),
            ).validate()
        except (KeyError, TypeError, ValueError) as e:
            raise BenchError("INVALID_WORKLOAD", f"bad workload entry {data!r}: {e}") from e


@dataclass(frozen=True)
class TxRecord:
    """One line of the raw per-transaction log; times are monotonic seconds"""
    index: int
    started: float
    finished: float
    ok: bool
    error: Optional[str] = None

    @property
    def latency(self) -> float:
        return self.finished - self.started


@dataclass(frozen=True)
class MetricsReport:
    send_rate: float
    throughput: float
    latency_min: float
    latency_avg: float
    latency_max: float
    failed: int
    committed: int
    duration: float
    config: Dict[str, Any] = field(default_factory=dict)
    model_throughput: Optional[float] = None
    error: Optional[str] = None
    note: Optional[str] = None
    log: Sequence[TxRecord] = field(default=(), compare=False, repr=False)

    @property
    def tx_count(self) -> int:
        return self.committed + self.failed

    def to_dict(self) -> Dict[str, Any]:
        data = {
            'send_rate': self.send_rate,
            'throughput': self.throughput,
            'latency_min': self.latency_min,
            'latency_avg': self.latency_avg,
            'latency_max': self.latency_max,
            'failed': self.failed,
            'committed': self.committed,
            'duration': self.duration,
            'config': self.config,
        }
        for name in ('model_throughput', 'error', 'note'):
            if getattr(self, name) is not None:
                data[name] = getattr(self, name)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MetricsReport':
        return cls(
            send_rate=float(data['send_rate']),
            throughput=float(data['throughput']),
            latency_min=float(data['latency_min']),
            latency_avg=float(data['latency_avg']),
            latency_max=float(data['latency_max']),
            failed=int(data['failed']),
            committed=int(data.get('committed', 0)),
            duration=float(data['duration']),
            config=dict(data.get('config', {})),
            model_throughput=data.get('model_throughput'),
            error=data.get('error'),
            note=data.get('note'),
        )

    @classmethod
    def failure(cls, spec: WorkloadSpec, error: TipsError) -> 'MetricsReport':
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, spec.tx_count, 0, 0.0, spec.to_dict(), error=error.code)


def summarize(log: Sequence[TxRecord], config: Optional[Dict[str, Any]] = None) -> MetricsReport:
    """Aggregate a raw latency log; the report is a pure function of the log"""
    if not log:
        raise BenchError("INVALID_WORKLOAD", "empty transaction log")
    frame = pd.DataFrame([{'started': r.started, 'finished': r.finished, 'ok': r.ok} for r in log])
    frame['latency'] = frame['finished'] - frame['started']
    committed = frame[frame['ok']]

    duration = float(frame['finished'].max() - frame['started'].min())
    send_span = float(frame['started'].max() - frame['started'].min())
    send_rate = len(frame) / send_span if send_span > 0 else (len(frame) / duration if duration > 0 else 0.0)
    throughput = len(committed) / duration if duration > 0 else 0.0
    if committed.empty:
        latency_min = latency_avg = latency_max = 0.0
    else:
        latency_min = float(committed['latency'].min())
        latency_max = float(committed['latency'].max())
        # a float mean can land an ulp outside its bounds
        latency_avg = min(max(float(committed['latency'].mean()), latency_min), latency_max)

    return MetricsReport(
        send_rate=send_rate,
        throughput=throughput,
        latency_min=latency_min,
        latency_avg=latency_avg,
        latency_max=latency_max,
        failed=int((~frame['ok']).sum()),
        committed=len(committed),
        duration=duration,
        config=dict(config or {}),
        log=tuple(log),
    )


def batching_model_throughput(offered_rate: Optional[float], batch_size: int, batch_timeout: float) -> float:
    """Committed tx/s predicted for a solo orderer: min(offered, batch_size / batch_timeout)"""
    ceiling = batch_size / batch_timeout
    return ceiling if offered_rate is None else min(offered_rate, ceiling)


class BenchFixture:
    """Fresh network plus the clients and preloaded state a workload needs"""

    def __init__(self, spec: WorkloadSpec, config: TipsConfig, root: Path):
        self.spec = spec
        ca = CertificateAuthority.create("bench-ca", utc_now())
        msp = MembershipService.for_authorities("BenchMSP", [ca], config.access_policies)
        self.network = Network(msp, OffChainStore(root / "offchain"), config)
        self.network.provision_peers(ca, BENCH_ORGS, peers_per_org=2)
        self.network.create_channel(BENCH_CHANNEL, BENCH_ORGS)
        now = utc_now()
        self.client = issue_identity(ca, msp, "bench-client", BENCH_ORGS[0], now)
        self.objects = ObjectClient(self.network, self.client, BENCH_CHANNEL)
        self.rng = random.Random(spec.seed)
        self._rng_lock = threading.Lock()
        self.asset_keys: List[str] = []
        self.exchange: Optional[ThreatExchange] = None
        self.sender: Optional[Agent] = None
        self.recipient: Optional[Agent] = None

        if spec.workload in (Workload.READ_CHECKSUM, Workload.GET_ASSETS_FROM_BATCH):
            # orderer not started yet: each put commits on its own flush
            for index in range(max(spec.batch_size, 10)):
                key = f"asset-{index:04d}"
                self.objects.put_object(key, f"asset payload {index}".encode("utf-8"))
                self.asset_keys.append(key)
        elif spec.workload is Workload.SEND_RECEIVE_ROUNDTRIP:
            self.exchange = ThreatExchange(self.network)
            self.sender = Agent(self.client)
            self.recipient = Agent(issue_identity(ca, msp, "bench-recipient", BENCH_ORGS[1], now))
            self.recipient.rotate_exchange_keys()
            self.exchange.publish_public_key(self.recipient, BENCH_CHANNEL)

    def transaction(self, index: int) -> None:
        workload = self.spec.workload
        if workload is Workload.READ_CHECKSUM:
            self.objects.get_checksum(self.asset_keys[index % len(self.asset_keys)])
        elif workload is Workload.GET_ASSETS_FROM_BATCH:
            start = index % len(self.asset_keys)
            keys = [self.asset_keys[(start + i) % len(self.asset_keys)] for i in range(self.spec.batch_size)]
            self.objects.get_assets_from_batch(keys)
        elif workload is Workload.PUT_OBJECT:
            self.objects.put_object(f"load-{index:08d}", f"load payload {index}".encode("utf-8"))
        else:
            with self._rng_lock:
                bundle = generate_bundle(self.rng, 1, created_by="bench")
            envelope = self.exchange.send_bundle(self.sender, BENCH_CHANNEL, self.recipient.serial, bundle)
            self.exchange.receive_bundle(self.recipient, BENCH_CHANNEL, envelope.envelope_id)


def _timed(fixture: BenchFixture, index: int, started: float) -> TxRecord:
    try:
        fixture.transaction(index)
        return TxRecord(index, started, time.monotonic(), True)
    except TipsError as e:
        logger.debug("Bench tx %d failed: %s", index, e)
        return TxRecord(index, started, time.monotonic(), False, e.code)
    except Exception:
        logger.exception("Bench tx %d raised", index)
        return TxRecord(index, started, time.monotonic(), False, "INTERNAL")


def open_loop_pool_size(spec: WorkloadSpec, config: TipsConfig) -> int:
    """Threads needed so every arrival within one batch timeout plus the latency budget has a sender"""
    in_flight = math.ceil(spec.target_send_rate * (config.orderer_batch_timeout + OPEN_LOOP_LATENCY_BUDGET))
    return min(spec.tx_count, max(spec.worker_count, in_flight))


def _open_loop(fixture: BenchFixture, spec: WorkloadSpec, pool: ThreadPoolExecutor) -> List[TxRecord]:
    """Fixed-rate arrivals; latency runs from the scheduled send time"""
    interval = 1.0 / spec.target_send_rate
    origin = time.monotonic()
    futures = []
    for index in range(spec.tx_count):
        due = origin + index * interval
        delay = due - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        futures.append(pool.submit(_timed, fixture, index, max(due, origin)))
    wait_all(futures)
    return [f.result() for f in futures]


def _closed_loop(fixture: BenchFixture, spec: WorkloadSpec, pool: ThreadPoolExecutor) -> List[TxRecord]:
    """worker_count clients, each sending its next transaction when the previous one finished"""
    counter = iter(range(spec.tx_count))
    counter_lock = threading.Lock()

    def worker() -> List[TxRecord]:
        records = []
        while True:
            with counter_lock:
                index = next(counter, None)
            if index is None:
                return records
            records.append(_timed(fixture, index, time.monotonic()))

    futures = [pool.submit(worker) for _ in range(spec.worker_count)]
    wait_all(futures)
    return sorted((r for f in futures for r in f.result()), key=lambda r: r.index)


def run_benchmark(spec: WorkloadSpec, base_config: Optional[TipsConfig] = None) -> MetricsReport:
    spec.validate()
    config = spec.config_for(base_config or TipsConfig())
    with tempfile.TemporaryDirectory(prefix="tips-bench-") as scratch:
        try:
            fixture = BenchFixture(spec, config, Path(scratch))
        except TipsError as e:
            raise BenchError("SETUP_FAILURE", f"could not provision benchmark network: {e}") from e

        # open-loop senders block until commit, so worker_count only bounds the closed loop
        threads = open_loop_pool_size(spec, config) if spec.target_send_rate else spec.worker_count
        fixture.network.start()
        try:
            with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="bench") as pool:
                if spec.target_send_rate:
                    log = _open_loop(fixture, spec, pool)
                else:
                    log = _closed_loop(fixture, spec, pool)
        finally:
            fixture.network.stop()

    echo = spec.to_dict()
    echo['orderer_batch_size'] = config.orderer_batch_size
    echo['orderer_batch_timeout'] = config.orderer_batch_timeout
    report = summarize(log, echo)
    logger.info("Benchmark %s finished: %d committed, %d failed, %.1f tx/s",
                spec.workload.value, report.committed, report.failed, report.throughput)
    return report


def sweep(specs: Sequence[WorkloadSpec], base_config: Optional[TipsConfig] = None,
          runner: Callable[..., MetricsReport] = run_benchmark) -> List[MetricsReport]:
    """Sequential runs on fresh networks; a failing spec yields an error report in its slot"""
    if not specs:
        raise BenchError("EMPTY_SWEEP", "a sweep needs at least one workload")
    base = base_config or TipsConfig()
    reports = []
    for spec in specs:
        try:
            report = runner(spec, base)
        except BenchError as e:
            logger.warning("Sweep entry %s failed: %s", spec.workload.value, e)
            reports.append(MetricsReport.failure(spec, e))
            continue
        effective = spec.config_for(base)
        model = batching_model_throughput(spec.target_send_rate, effective.orderer_batch_size,
                                          effective.orderer_batch_timeout)
        reports.append(replace(report, model_throughput=model))
    return reports


def load_sweep(path: Path) -> List[WorkloadSpec]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise BenchError("INVALID_WORKLOAD", f"cannot read sweep file {path}: {e}") from e
    entries = data.get('specs', []) if isinstance(data, dict) else data
    return [WorkloadSpec.from_dict(entry) for entry in entries]


def reference_report(path: Path = REFERENCE_PATH) -> MetricsReport:
    """Published Fabric 2.2 read figures, kept as a report-format fixture rather than a target"""
    return MetricsReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def emit_report(report: MetricsReport, fmt: str = "human") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2)
    row = {name: getattr(report, name) for name in REPORT_FIELDS}
    frame = pd.DataFrame([row], columns=list(REPORT_FIELDS))
    if fmt == "csv":
        return frame.to_csv(index=False)
    if fmt == "human":
        table = frame.T.rename(columns={0: "value"})
        lines = [table.to_string()]
        if report.model_throughput is not None:
            lines.append(f"model_throughput {report.model_throughput:.3f}")
        if report.error:
            lines.append(f"error {report.error}")
        if report.note:
            lines.append(f"note {report.note}")
        return "\n".join(lines)
    raise BenchError("INVALID_WORKLOAD", f"unknown report format {fmt!r}")


def emit_sweep(reports: Sequence[MetricsReport], fmt: str = "human") -> str:
    if fmt == "json":
        return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=2)
    rows = []
    for report in reports:
        row = {name: getattr(report, name) for name in REPORT_FIELDS}
        row['workload'] = report.config.get('workload')
        row['model_throughput'] = report.model_throughput
        row['error'] = report.error
        rows.append(row)
    frame = pd.DataFrame(rows)
    return frame.to_csv(index=False) if fmt == "csv" else frame.to_string(index=False)
