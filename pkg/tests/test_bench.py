import csv
import json
import warnings

import pytest

from tpart import bench, tpcc
from tpart.bench import BenchConfig, emit_report, gen_workload, run_benchmark
from tpart.netsim import ConfigError, MetricsReport
from tpart.occ import VerifyReport
from tpart.tpcc import TpccScale

SCALE = TpccScale(warehouses=4, districts=2, items=50, customers=5)


def test_stream_is_deterministic():
    a = gen_workload(1, 50, SCALE, 0.3)
    assert a == gen_workload(1, 50, SCALE, 0.3)
    assert a != gen_workload(2, 50, SCALE, 0.3)
    assert bench.load_stream(bench.dump_stream(a)) == a


def test_stream_shape():
    for req in gen_workload(4, 200, SCALE, 0.3):
        assert 0 <= req.w_id < 4 and 1 <= req.d_id <= 2 and 1 <= req.c_id <= 5
        assert 5 <= len(req.items) <= 15
        ids = [it.item_id for it in req.items]
        assert len(set(ids)) == len(ids)
        assert all(1 <= it.qty <= 10 for it in req.items)


def test_remote_probability_extremes():
    assert all(it.supplier_w_id == r.w_id
               for r in gen_workload(1, 100, SCALE, 0.0) for it in r.items)
    assert all(it.supplier_w_id != r.w_id
               for r in gen_workload(1, 100, SCALE, 1.0) for it in r.items)


def test_one_warehouse_forces_local():
    one = TpccScale(warehouses=1, items=20)
    with pytest.warns(UserWarning):
        stream = gen_workload(1, 20, one, 0.5)
    assert all(it.supplier_w_id == 0 for r in stream for it in r.items)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gen_workload(1, 20, one, 0.0)


def small(tmp_path, **kw):
    kw.setdefault("scale", SCALE)
    kw.setdefault("txns", 60)
    return BenchConfig(out=str(tmp_path), **kw)


def test_run_writes_reports(tmp_path):
    result = run_benchmark(small(tmp_path, trace=True, clients=4))
    assert result.exit_code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["schema_version"] == bench.SCHEMA_VERSION
    assert report["config"]["resolved_mapping"] == [0, 1, 2, 3]
    assert report["config"]["physical"] == 4
    assert report["audits"]["consistency"]["ok"] and report["audits"]["serializability"]["ok"]
    assert (tmp_path / "mapping.txt").read_text() == "0 0\n1 1\n2 2\n3 3\n"
    history = (tmp_path / "history.log").read_text().splitlines()
    assert len(history) == sum(1 for _ in result.deployment.cluster.history.records)
    assert (tmp_path / "trace.log").read_text()


def test_same_config_same_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        run_benchmark(BenchConfig(variant="v2", scale=SCALE, clients=1, txns=80, seed=7,
                                  out=str(out), trace=True))
    for name in ("report.json", "history.log", "mapping.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_csv_and_json_agree(tmp_path):
    run_benchmark(small(tmp_path / "j", clients=2))
    run_benchmark(small(tmp_path / "c", clients=2, format="csv"))
    report = json.loads((tmp_path / "j" / "report.json").read_text())
    report["config"]["format"] = "csv"
    with open(tmp_path / "c" / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    flat = bench.flatten_report(report)
    assert list(rows[0]) == list(flat)
    assert rows[0] == {k: str(v) for k, v in flat.items()}


def test_empty_report(tmp_path):
    path = tmp_path / "empty.json"
    report = emit_report(MetricsReport(), {}, "json", str(path))
    data = json.loads(path.read_text())
    assert data == json.loads(json.dumps(report))
    assert data["schema_version"] == bench.SCHEMA_VERSION
    assert data["metrics"]["throughput"] == 0 and data["metrics"]["committed"] == 0
    with pytest.raises(ValueError):
        emit_report(MetricsReport(), {}, "xml", str(path))


@pytest.mark.parametrize("variant", tpcc.VARIANTS)
def test_local_workload_sends_no_messages(tmp_path, variant):
    result = run_benchmark(small(tmp_path, variant=variant, remote_prob=0.0, clients=4),
                           write_files=False)
    assert result.exit_code == 0
    assert result.metrics.messages_per_txn == 0


def test_v3_beats_v2_on_remote_orders(tmp_path):
    p50 = {}
    for v in ("v2", "v3"):
        result = run_benchmark(small(tmp_path, variant=v, remote_prob=0.5, clients=1,
                                     net_latency_us=100), write_files=False)
        p50[v] = result.metrics.latency_p50_us
    assert p50["v3"] < p50["v2"]


def test_v1_runs_on_one_partition(tmp_path):
    result = run_benchmark(small(tmp_path, variant="v1", clients=4, physical=4),
                           write_files=False)
    assert result.report["config"]["num_logical"] == 1
    assert result.report["config"]["resolved_mapping"] == [0]
    assert result.exit_code == 0


def test_mapping_file(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("0 0\n1 0\n2 1\n3 1\n")
    result = run_benchmark(small(tmp_path, mapping=str(path)), write_files=False)
    assert result.report["config"]["resolved_mapping"] == [0, 0, 1, 1]
    path.write_text("0 0\n1 0\n")
    with pytest.raises(ConfigError):
        run_benchmark(small(tmp_path, mapping=str(path)), write_files=False)


def test_auto_mapping_packs_onto_fewer_workers(tmp_path):
    result = run_benchmark(small(tmp_path, physical=2), write_files=False)
    mapping = result.report["config"]["resolved_mapping"]
    assert sorted(mapping.count(w) for w in (0, 1)) == [2, 2]


def test_config_validation():
    for bad in (dict(variant="v9"), dict(clients=0), dict(txns=0), dict(remote_prob=1.5),
                dict(format="xml"), dict(physical=0), dict(retry_limit=-1)):
        with pytest.raises(ConfigError):
            BenchConfig(**bad).validate()


def test_cli(tmp_path, capsys):
    code = bench.main(["--variant", "v3", "--warehouses", "2", "--items", "30", "--txns", "20",
                       "--clients", "2", "--out", str(tmp_path), "--format", "csv"])
    assert code == 0
    assert (tmp_path / "report.csv").exists()
    assert "committed 20/20" in capsys.readouterr().out
    assert bench.main(["--clients", "0", "--out", str(tmp_path)]) == bench.EXIT_CONFIG
    assert bench.main(["--mapping", str(tmp_path / "missing"), "--out", str(tmp_path),
                       "--txns", "5"]) == bench.EXIT_CONFIG


def test_audit_failures_set_exit_codes(tmp_path, monkeypatch):
    real = tpcc.gen_order

    def faulty(ctx, w_id, d_id, c_id, items):
        wh, dist, cust = real(ctx, w_id, d_id, c_id, items)
        del ctx.fragment.writes[("oorder", (w_id, d_id, dist["next_o_id"]))]
        return wh, dist, cust

    with monkeypatch.context() as m:
        m.setattr(tpcc, "gen_order", faulty)
        assert run_benchmark(small(tmp_path), write_files=False).exit_code == bench.EXIT_CONSISTENCY
    with monkeypatch.context() as m:
        m.setattr(bench, "verify_serializability",
                  lambda *a, **k: VerifyReport(False, ["forced"], 0))
        result = run_benchmark(small(tmp_path), write_files=False)
        assert result.exit_code == bench.EXIT_SERIALIZABILITY
        assert result.report["audits"]["serializability"]["problems"] == ["forced"]
