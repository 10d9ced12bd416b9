import json
import random
import time
from dataclasses import replace
from pathlib import Path

import pytest

from config.tips_config import TipsConfig
from src.bench import (
    REPORT_FIELDS,
    BenchFixture,
    MetricsReport,
    TxRecord,
    Workload,
    WorkloadSpec,
    batching_model_throughput,
    emit_report,
    emit_sweep,
    load_sweep,
    open_loop_pool_size,
    reference_report,
    run_benchmark,
    summarize,
    sweep,
)
from src.errors import BenchError

SWEEPS = Path(__file__).resolve().parent.parent / "data" / "sweeps"


def make_log(rng, count, failure_rate=0.0):
    log, clock = [], 0.0
    for index in range(count):
        clock += rng.uniform(0.0, 0.02)
        latency = rng.uniform(0.001, 0.5)
        log.append(TxRecord(index, clock, clock + latency, rng.random() >= failure_rate))
    return log


class TestSummarize:
    def test_hand_computed_log(self):
        log = [
            TxRecord(0, 0.0, 0.5, True),
            TxRecord(1, 1.0, 1.25, True),
            TxRecord(2, 2.0, 4.0, False, "TX_INVALID"),
        ]
        report = summarize(log, {'workload': 'put'})
        assert report.duration == pytest.approx(4.0)
        assert report.send_rate == pytest.approx(1.5)
        assert report.throughput == pytest.approx(0.5)
        assert (report.latency_min, report.latency_max) == (pytest.approx(0.25), pytest.approx(0.5))
        assert report.latency_avg == pytest.approx(0.375)
        assert (report.committed, report.failed) == (2, 1)
        assert report.config == {'workload': 'put'}

    def test_report_is_a_function_of_the_log(self):
        log = make_log(random.Random(3), 50, failure_rate=0.2)
        assert summarize(log) == summarize(list(log))

    def test_latency_ordering_and_conservation(self):
        rng = random.Random(11)
        for _ in range(100):
            log = make_log(rng, rng.randint(1, 40), failure_rate=rng.choice([0.0, 0.3]))
            report = summarize(log)
            assert report.committed + report.failed == len(log)
            if report.committed:
                assert report.latency_min <= report.latency_avg <= report.latency_max

    def test_all_failed(self):
        report = summarize([TxRecord(0, 0.0, 1.0, False, "TX_INVALID")])
        assert (report.committed, report.failed, report.throughput) == (0, 1, 0.0)
        assert report.latency_max == 0.0

    def test_empty_log(self):
        with pytest.raises(BenchError) as e:
            summarize([])
        assert e.value.code == "INVALID_WORKLOAD"


class TestModel:
    @pytest.mark.parametrize("offered,batch_size,timeout,expected", [
        (50.0, 10, 0.05, 50.0),
        (500.0, 10, 0.05, 200.0),
        (None, 10, 0.2, 50.0),
    ])
    def test_batching_ceiling(self, offered, batch_size, timeout, expected):
        assert batching_model_throughput(offered, batch_size, timeout) == pytest.approx(expected)


class TestWorkloads:
    def test_parse(self):
        assert Workload.parse("read") is Workload.READ_CHECKSUM
        assert Workload.parse("roundtrip") is Workload.SEND_RECEIVE_ROUNDTRIP
        with pytest.raises(BenchError) as e:
            Workload.parse("write-everything")
        assert e.value.code == "INVALID_WORKLOAD"

    @pytest.mark.parametrize("overrides", [
        {'tx_count': 0},
        {'worker_count': 0},
        {'batch_size': 0},
        {'target_send_rate': -1.0},
        {'orderer_batch_timeout': 0.0},
    ])
    def test_invalid_specs(self, overrides):
        values = dict(workload=Workload.PUT_OBJECT, tx_count=10)
        values.update(overrides)
        with pytest.raises(BenchError) as e:
            WorkloadSpec(**values).validate()
        assert e.value.code == "INVALID_WORKLOAD"

    def test_sweep_files(self):
        timeouts = load_sweep(SWEEPS / "batch_timeout.json")
        assert {spec.workload for spec in timeouts} == {Workload.PUT_OBJECT}
        assert all(spec.target_send_rate for spec in timeouts)
        reads = load_sweep(SWEEPS / "read_workloads.json")
        assert {spec.workload for spec in reads} == {
            Workload.READ_CHECKSUM, Workload.GET_ASSETS_FROM_BATCH, Workload.SEND_RECEIVE_ROUNDTRIP,
        }

    def test_bad_sweep_entry(self, tmp_path):
        path = tmp_path / "sweep.json"
        path.write_text(json.dumps([{'workload': 'put'}]), encoding="utf-8")
        with pytest.raises(BenchError) as e:
            load_sweep(path)
        assert e.value.code == "INVALID_WORKLOAD"


class TestReports:
    @pytest.fixture
    def report(self):
        return summarize(make_log(random.Random(5), 20, failure_rate=0.1), {'workload': 'read'})

    def test_json(self, report):
        data = json.loads(emit_report(report, "json"))
        assert data == json.loads(json.dumps(report.to_dict()))
        assert MetricsReport.from_dict(data) == report

    def test_csv_columns(self, report):
        header = emit_report(report, "csv").splitlines()[0]
        assert header.split(",") == list(REPORT_FIELDS)

    def test_human(self, report):
        text = emit_report(replace(report, model_throughput=42.0), "human")
        for name in REPORT_FIELDS:
            assert name in text
        assert "model_throughput 42.000" in text

    def test_unknown_format(self, report):
        with pytest.raises(BenchError):
            emit_report(report, "xml")

    def test_reference_fixture(self):
        reference = reference_report()
        assert reference.throughput == pytest.approx(91.6)
        assert reference.latency_min <= reference.latency_avg <= reference.latency_max
        assert reference.config['workload'] == "read"
        assert reference.note


class TestSweep:
    def test_empty_sweep(self):
        with pytest.raises(BenchError) as e:
            sweep([])
        assert e.value.code == "EMPTY_SWEEP"

    def test_failing_entry_keeps_its_slot(self):
        specs = [WorkloadSpec(Workload.PUT_OBJECT, 5, target_send_rate=20.0, orderer_batch_timeout=0.2),
                 WorkloadSpec(Workload.READ_CHECKSUM, 5)]

        def runner(spec, base):
            if spec.workload is Workload.READ_CHECKSUM:
                raise BenchError("SETUP_FAILURE", "no network")
            return summarize([TxRecord(0, 0.0, 0.1, True)], spec.to_dict())

        reports = sweep(specs, TipsConfig(), runner)
        assert reports[0].model_throughput == pytest.approx(20.0)
        assert reports[1].error == "SETUP_FAILURE"
        assert reports[1].failed == 5
        table = emit_sweep(reports, "csv")
        assert "SETUP_FAILURE" in table
        assert len(json.loads(emit_sweep(reports, "json"))) == 2


class TestRuns:
    def test_closed_loop_put(self):
        report = run_benchmark(WorkloadSpec(Workload.PUT_OBJECT, tx_count=12, worker_count=3))
        assert (report.committed, report.failed) == (12, 0)
        assert report.config['orderer_batch_size'] == 10
        assert 0 < report.latency_min <= report.latency_avg <= report.latency_max

    def test_batch_reads(self):
        report = run_benchmark(WorkloadSpec(Workload.GET_ASSETS_FROM_BATCH, tx_count=10, worker_count=2, batch_size=5))
        assert report.committed == 10

    def test_single_read_has_one_latency(self):
        report = run_benchmark(WorkloadSpec(Workload.READ_CHECKSUM, tx_count=1))
        assert (report.committed, report.failed) == (1, 0)
        assert report.latency_min == report.latency_avg == report.latency_max > 0

    def test_report_recomputes_from_its_log(self):
        report = run_benchmark(WorkloadSpec(Workload.PUT_OBJECT, tx_count=8, worker_count=2))
        assert len(report.log) == 8
        assert summarize(report.log, report.config) == report

    def test_unexpected_exception_is_a_failed_tx(self, monkeypatch):
        original = BenchFixture.transaction

        def flaky(fixture, index):
            if index % 2:
                raise RuntimeError("disk on fire")
            original(fixture, index)

        monkeypatch.setattr(BenchFixture, "transaction", flaky)
        report = run_benchmark(WorkloadSpec(Workload.READ_CHECKSUM, tx_count=6, worker_count=2))
        assert (report.committed, report.failed) == (3, 3)
        assert {r.error for r in report.log if not r.ok} == {"INTERNAL"}

    def test_open_loop_pool_follows_arrivals(self):
        config = TipsConfig(orderer_batch_timeout=0.5)
        busy = WorkloadSpec(Workload.PUT_OBJECT, tx_count=500, worker_count=1, target_send_rate=200.0)
        assert open_loop_pool_size(busy, config) == 300
        short = WorkloadSpec(Workload.PUT_OBJECT, tx_count=5, worker_count=1, target_send_rate=200.0)
        assert open_loop_pool_size(short, config) == 5

    @pytest.mark.slow
    def test_roundtrip(self):
        report = run_benchmark(WorkloadSpec(Workload.SEND_RECEIVE_ROUNDTRIP, tx_count=6, worker_count=2))
        assert (report.committed, report.failed) == (6, 0)

    @pytest.mark.slow
    def test_load_at_the_batching_ceiling(self):
        # 80 tx/s fills a 4-tx batch once per 50 ms timeout
        spec = WorkloadSpec(Workload.PUT_OBJECT, tx_count=240, worker_count=1, target_send_rate=80.0,
                            orderer_batch_size=4, orderer_batch_timeout=0.05)
        report, = sweep([spec])
        assert (report.committed, report.failed) == (240, 0)
        assert report.model_throughput == pytest.approx(80.0)
        assert report.throughput == pytest.approx(report.model_throughput, rel=0.15)

    @pytest.mark.slow
    def test_throughput_follows_offered_load_below_saturation(self):
        spec = WorkloadSpec(Workload.PUT_OBJECT, tx_count=120, worker_count=1, target_send_rate=40.0,
                            orderer_batch_timeout=0.05)
        report = run_benchmark(spec)
        assert report.failed == 0
        assert report.throughput == pytest.approx(40.0, rel=0.10)

    @pytest.mark.slow
    def test_thousand_batch_reads(self):
        started = time.monotonic()
        report = run_benchmark(WorkloadSpec(Workload.GET_ASSETS_FROM_BATCH, tx_count=1000, worker_count=8,
                                            batch_size=10))
        assert (report.committed, report.failed) == (1000, 0)
        assert time.monotonic() - started < 120
