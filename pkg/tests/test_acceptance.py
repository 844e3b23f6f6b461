"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import itertools
import random
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from tpart.bench import BenchConfig, gen_workload, run_benchmark
from tpart.procmodel import decode_payload
from tpart.placement import WorkloadProfile, advise_mapping, estimate_cost
from tpart.tpcc import CORE_TABLES, NewOrderRequest, OrderItem, TpccScale, deploy


def verdict(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


GRID = [(v, c, w) for v in ("v2", "v3") for c in (1, 4, 8) for w in (2, 4)]


@pytest.fixture(scope="module")
def grid_runs():
    runs = {}
    start = time.perf_counter()
    for i, (variant, clients, warehouses) in enumerate(GRID):
        config = BenchConfig(variant=variant, scale=TpccScale(warehouses=warehouses),
                             clients=clients, txns=1000, remote_prob=0.3, seed=100 + i)
        runs[(variant, clients, warehouses)] = run_benchmark(config, write_files=False)
    return runs, time.perf_counter() - start


def test_criterion_1_serializability_grid(grid_runs):
    runs, elapsed = grid_runs
    failed = [k for k, r in runs.items() if not r.report["audits"]["serializability"]["ok"]]
    replayed = sum(r.report["audits"]["serializability"]["replayed"] for r in runs.values())
    verdict(1, not failed and elapsed < 60,
            f"{len(runs) - len(failed)}/{len(runs)} configs replay exactly "
            f"({replayed} committed roots), {elapsed:.1f}s of a 60s budget"
            + (f"; failing: {failed}" if failed else ""))


def test_criterion_2_variant_equivalence():
    scale = TpccScale()
    stream = gen_workload(21, 500, scale, remote_prob=0.3)
    outcomes = {}
    for variant in ("v1", "v2", "v3"):
        result = run_benchmark(BenchConfig(variant=variant, scale=scale, clients=1, seed=21),
                               write_files=False, stream=stream)
        pays = [t.value if t.committed else t.status for t in result.tickets]
        outcomes[variant] = (pays, result.deployment.cluster.table_digest(CORE_TABLES))
    same = outcomes["v1"] == outcomes["v2"] == outcomes["v3"]
    committed = sum(not isinstance(p, str) for p in outcomes["v1"][0])
    verdict(2, same and committed == 500,
            f"v1/v2/v3 total_pay sequences and non-replicated digests "
            f"{'identical' if same else 'DIFFER'} over {committed}/500 committed requests")


def test_criterion_3_remote_round_separation():
    lat, r_remote, n = 100, 3, 40
    scale = TpccScale(warehouses=4, items=60)
    rng = random.Random(3)
    stream = []
    for _ in range(n):
        w = rng.randrange(4)
        suppliers = [x for x in range(4) if x != w]
        items = rng.sample(range(1, 61), 2 * r_remote)
        lines = [OrderItem(i, suppliers[k % r_remote], rng.randint(1, 10))
                 for k, i in enumerate(items)]
        stream.append(NewOrderRequest(w, rng.randint(1, 2), rng.randint(1, 10), tuple(lines)))
    body = {}
    for variant in ("v2", "v3"):
        cluster = deploy(variant, scale, net_latency_us=lat).cluster
        body[variant] = []
        for req in stream:
            ticket = cluster.exec_root("new_order", req.to_args())
            cluster.drain()   # idle cluster for the next request
            assert ticket.committed and ticket.attempts == 1
            body[variant].append(ticket.body_latency)
    gaps = [a - b for a, b in zip(body["v2"], body["v3"])]
    bound = 2 * (r_remote - 1) * lat
    verdict(3, min(gaps) >= bound,
            f"v2 - v3 body latency min {min(gaps)}us, max {max(gaps)}us over {n} orders "
            f"with {r_remote} remote suppliers (bound {bound}us)")


def test_criterion_4_consistency(grid_runs):
    runs, _ = grid_runs
    extra = run_benchmark(BenchConfig(variant="v1", clients=8, txns=500, seed=4),
                          write_files=False)
    problems, checked = [], 0
    for key, result in list(runs.items()) + [(("v1", 8, 4), extra)]:
        problems += [f"{key}: {v}" for v in result.report["audits"]["consistency"]["violations"]]
        stores = result.deployment.cluster.stores
        committed = {}
        for t in result.tickets:
            if t.committed:
                w, d = decode_payload(t.args)[:2]
                committed[(w, d)] = committed.get((w, d), 0) + 1
        for store in stores:
            for (w, d), rec in store.rows("district").items():
                checked += 1
                if rec["next_o_id"] - 1 != committed.get((w, d), 0):
                    problems.append(f"{key}: district ({w},{d}) counter off")
    verdict(4, not problems,
            f"{len(runs) + 1} seeded runs, {checked} districts: next_o_id - 1 == committed "
            f"new_orders and zero audit violations" + (f"; first: {problems[0]}" if problems else ""))


def test_criterion_5_abort_monotonicity():
    scale = TpccScale()
    # every request re-targeted at district (0, 1); order lines keep their suppliers
    stream = [NewOrderRequest(0, 1, r.c_id, r.items)
              for r in gen_workload(5, 200, scale, remote_prob=0.3)]
    aborts = {}
    for clients in (1, 8):
        result = run_benchmark(BenchConfig(variant="v2", scale=scale, clients=clients, seed=5),
                               write_files=False, stream=stream)
        aborts[clients] = sum(result.metrics.attempt_aborts.values())
    verdict(5, aborts[8] > aborts[1] >= 0,
            f"pre-retry aborts on hot district (0,1): clients=8 -> {aborts[8]}, "
            f"clients=1 -> {aborts[1]}")


def test_criterion_6_determinism(tmp_path):
    same = []
    for name, config in (("v2-c1", dict(variant="v2", clients=1, txns=200, seed=7)),
                         ("v3-c8", dict(variant="v3", clients=8, txns=300, seed=7,
                                        format="csv"))):
        outs = [tmp_path / f"{name}-{k}" for k in (0, 1)]
        for out in outs:
            run_benchmark(BenchConfig(out=str(out), trace=True, **config))
        report = "report.csv" if config.get("format") == "csv" else "report.json"
        for f in (report, "history.log", "mapping.txt"):
            same.append((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes())
    verdict(6, all(same), f"{sum(same)}/{len(same)} report/history/mapping files byte-identical "
                          f"across paired runs")


def brute_force_min(load, traffic, k, alpha, beta):
    """Independent enumeration with plain loops."""
    n = len(load)
    best = None
    for assign in itertools.product(range(k), repeat=n):
        per = [0.0] * k
        for i, w in enumerate(assign):
            per[w] += load[i]
        remote = sum(traffic[i][j] for i in range(n) for j in range(i + 1, n)
                     if assign[i] != assign[j])
        cost = alpha * max(per) + beta * remote
        best = cost if best is None else min(best, cost)
    return best


def test_criterion_7_placement_oracle():
    rng = random.Random(2024)
    bad, worst = [], 0.0
    for case in range(50):
        n, k = rng.randint(2, 8), rng.randint(2, 3)
        load = [rng.uniform(1, 100) for _ in range(n)]
        traffic = [[0.0] * n for _ in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                traffic[i][j] = traffic[j][i] = rng.choice([0.0, rng.uniform(0, 20000)])
        alpha, beta = 1.0, rng.choice([0.001, 0.01])
        prof = WorkloadProfile(load, traffic)
        truth = brute_force_min(load, traffic, k, alpha, beta)
        exact = estimate_cost(prof, advise_mapping(prof, k, alpha, beta), alpha, beta, k)
        greedy = estimate_cost(prof, advise_mapping(prof, k, alpha, beta, "greedy"),
                               alpha, beta, k)
        worst = max(worst, greedy / truth)
        if not np.isclose(exact, truth, rtol=1e-12) or greedy > 2 * truth * (1 + 1e-12):
            bad.append(f"case {case}: n={n} k={k} beta={beta} load={load} traffic={traffic} "
                       f"truth={truth} exhaustive={exact} greedy={greedy}")
    verdict(7, not bad, f"50 instances: exhaustive optimal on all, worst greedy/optimal "
                        f"{worst:.3f}" + (f"; {bad[0]}" if bad else ""))


def test_criterion_8_throughput_scaling():
    runs = {}
    for physical in (4, 1):
        result = run_benchmark(BenchConfig(variant="v2", clients=8, txns=1000, remote_prob=0.0,
                                           seed=8, physical=physical), write_files=False)
        assert result.metrics.committed == 1000
        runs[physical] = result.metrics.throughput
    ratio = runs[4] / runs[1]
    verdict(8, ratio >= 2.5, f"4->4 {runs[4]:.0f} txn/s vs 4->1 {runs[1]:.0f} txn/s, "
                             f"ratio {ratio:.2f} (bound 2.5)")
