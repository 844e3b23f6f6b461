"""Benchmark driver: workload generation, closed-loop clients, audits and reports."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import random
import sys
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from . import placement, tpcc
from .netsim import Cluster, ConfigError, MetricsReport, Ticket
from .occ import verify_serializability
from .procmodel import decode_payload
from .tpcc import NewOrderRequest, OrderItem, TpccDeployment, TpccScale

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONSISTENCY = 3
EXIT_SERIALIZABILITY = 4


@dataclass
class BenchConfig:
    variant: str = "v2"
    scale: TpccScale = field(default_factory=TpccScale)
    clients: int = 1
    txns: int = 1000
    remote_prob: float = 0.1
    seed: int = 0
    net_latency_us: int = 100
    physical: int | None = None
    mapping: str = "auto"
    retry_limit: int = 5
    format: str = "json"
    trace: bool = False
    out: str = "."

    def validate(self) -> None:
        if self.variant not in tpcc.VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.clients < 1 or self.txns < 1:
            raise ConfigError("clients and txns must be >= 1")
        if not 0.0 <= self.remote_prob <= 1.0:
            raise ConfigError("remote_prob must be in [0, 1]")
        if self.format not in ("json", "csv"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.physical is not None and self.physical < 1:
            raise ConfigError("physical must be >= 1")
        if self.net_latency_us < 0 or self.retry_limit < 0:
            raise ConfigError("net_latency_us and retry_limit must be >= 0")

    @property
    def num_logical(self) -> int:
        return tpcc.num_logical(self.variant, self.scale)

    def num_physical(self, mapping: Sequence[int]) -> int:
        return max(max(mapping) + 1, self.physical or 1)

    def resolved(self, mapping: Sequence[int]) -> dict:
        d = asdict(self)
        del d["out"]   # where files go does not affect the run
        d["scale"] = asdict(self.scale)
        d["physical"] = self.num_physical(mapping)
        d["num_logical"] = self.num_logical
        d["resolved_mapping"] = list(mapping)
        return d


def gen_workload(seed: int, txns: int, scale: TpccScale,
                 remote_prob: float) -> list[NewOrderRequest]:
    """Deterministic new_order request stream."""
    rng = random.Random(f"workload:{seed}")
    if scale.warehouses == 1 and remote_prob > 0:
        warnings.warn("one warehouse: remote order lines are made local", stacklevel=2)
        remote_prob = 0.0
    stream = []
    for _ in range(txns):
        w = rng.randrange(scale.warehouses)
        d = rng.randint(1, scale.districts)
        c = rng.randint(1, scale.customers)
        n = min(rng.randint(5, tpcc.MAX_ORDER_LINES), scale.items)
        items = []
        for item_id in rng.sample(range(1, scale.items + 1), n):
            supplier = w
            if remote_prob and rng.random() < remote_prob:
                supplier = rng.choice([x for x in range(scale.warehouses) if x != w])
            items.append(OrderItem(item_id, supplier, rng.randint(1, 10)))
        stream.append(NewOrderRequest(w, d, c, tuple(items)))
    return stream


def dump_stream(stream: Sequence[NewOrderRequest]) -> str:
    return "".join(json.dumps(r.to_args(), separators=(",", ":")) + "\n" for r in stream)


def load_stream(text: str) -> list[NewOrderRequest]:
    return [NewOrderRequest.from_args(json.loads(ln)) for ln in text.splitlines() if ln.strip()]


def stream_profile(stream: Sequence[NewOrderRequest], num_logical: int) -> placement.WorkloadProfile:
    """Relative load and traffic implied by a request stream (per request, not per second)."""
    roots = Counter(r.w_id for r in stream)
    traffic = Counter()
    for r in stream:
        for s in r.suppliers():
            if s != r.w_id:
                traffic[(r.w_id, s)] += 1
    return placement.profile_from_counts(num_logical, roots, traffic, 1e6)


def drive(cluster: Cluster, requests: Sequence[NewOrderRequest], clients: int,
          txn_name: str = "new_order") -> list[Ticket]:
    """Closed loop: ``clients`` outstanding roots, each replaced when it finishes."""
    tickets: list[Ticket] = []
    pending = iter(requests)

    def feed(_done=None):
        req = next(pending, None)
        if req is not None:
            tickets.append(cluster.submit(txn_name, req.to_args(), on_done=feed))

    for _ in range(clients):
        feed()
    cluster.run_until_quiescent()
    return tickets


def committed_per_district(tickets: Sequence[Ticket]) -> dict[tuple[int, int], int]:
    counts: Counter = Counter()
    for t in tickets:
        if t.committed:
            w, d = decode_payload(t.args)[:2]
            counts[(w, d)] += 1
    return dict(counts)


@dataclass
class BenchResult:
    report: dict
    exit_code: int
    files: dict[str, str]
    deployment: TpccDeployment
    tickets: list[Ticket]
    metrics: MetricsReport


def resolve_mapping(config: BenchConfig, stream) -> tuple[int, ...]:
    n = config.num_logical
    if config.variant == "v1":
        return (0,)
    if config.mapping != "auto":
        with open(config.mapping) as fh:
            assign = placement.loads_mapping(fh.read())
        missing = [p for p in range(n) if p not in assign]
        if missing:
            raise ConfigError(f"mapping file leaves logical partitions {missing} unmapped")
        return tuple(assign[p] for p in range(n))
    physical = config.physical or n
    profile = stream_profile(stream, n)
    small = n <= placement.EXHAUSTIVE_CAP and physical ** n <= placement.EXHAUSTIVE_BUDGET
    strategy = "exhaustive" if small else "greedy"
    return placement.advise_mapping(profile, physical, strategy=strategy)


def run_benchmark(config: BenchConfig, write_files: bool = True,
                  stream: Sequence[NewOrderRequest] | None = None) -> BenchResult:
    """Load, drive, audit and report one run.

    ``stream`` replaces the generated workload (``txns`` and ``remote_prob``
    are then ignored for generation).
    """
    config.validate()
    if stream is None:
        stream = gen_workload(config.seed, config.txns, config.scale, config.remote_prob)
    mapping = resolve_mapping(config, stream)
    dep = tpcc.deploy(config.variant, config.scale, config.seed, mapping=mapping,
                      num_physical=config.num_physical(mapping),
                      net_latency_us=config.net_latency_us, retry_limit=config.retry_limit,
                      trace=config.trace)
    cluster = dep.cluster
    tickets = drive(cluster, stream, config.clients)
    metrics = cluster.metrics()
    consistency = tpcc.check_consistency(cluster.stores, config.scale, config.seed,
                                         committed_per_district(tickets))
    serial = verify_serializability(cluster.history, cluster.registry, dep.initial,
                                    cluster.stores)
    audits = {
        "consistency": {"ok": consistency.ok, "violations": consistency.violations[:20]},
        "serializability": {"ok": serial.ok, "replayed": serial.replayed,
                            "problems": serial.problems[:20]},
    }
    report = build_report(metrics, audits, config.resolved(mapping))
    if not consistency.ok:
        code = EXIT_CONSISTENCY
    elif not serial.ok:
        code = EXIT_SERIALIZABILITY
    else:
        code = EXIT_OK
    files = {}
    if write_files:
        files = write_outputs(config, report, mapping, cluster)
    return BenchResult(report, code, files, dep, tickets, metrics)


def build_report(metrics: MetricsReport, audits: dict, config: dict | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config or {},
        "metrics": metrics.to_dict(),
        "audits": audits,
        "workload": {"new_order_share_of_full_mix": tpcc.NEW_ORDER_MIX_SHARE,
                     "generated_share": 1.0},
    }


def flatten_report(report: dict) -> dict:
    """Dotted-key view used for CSV; lists, bools and None are JSON-encoded."""
    out: dict = {}

    def walk(prefix, value):
        if isinstance(value, dict):
            for k, v in value.items():
                walk(f"{prefix}.{k}" if prefix else str(k), v)
        elif isinstance(value, (list, bool)) or value is None:
            out[prefix] = json.dumps(value, separators=(",", ":"))
        else:
            out[prefix] = value

    walk("", report)
    return out


def write_report(report: dict, fmt: str, path: str) -> None:
    """Write ``report`` as one JSON object or a one-row CSV with dotted headers."""
    if fmt == "json":
        text = json.dumps(report, indent=2) + "\n"
    elif fmt == "csv":
        flat = flatten_report(report)
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(flat), lineterminator="\n")
        writer.writeheader()
        writer.writerow(flat)
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)


def emit_report(metrics: MetricsReport, audits: dict, fmt: str, path: str,
                config: dict | None = None) -> dict:
    report = build_report(metrics, audits, config)
    write_report(report, fmt, path)
    return report


def write_outputs(config: BenchConfig, report: dict, mapping, cluster: Cluster) -> dict[str, str]:
    os.makedirs(config.out, exist_ok=True)
    files = {"report": os.path.join(config.out, f"report.{config.format}"),
             "mapping": os.path.join(config.out, "mapping.txt")}
    write_report(report, config.format, files["report"])
    with open(files["mapping"], "w") as fh:
        fh.write(placement.dumps_mapping(mapping))
    if config.trace:
        files["history"] = os.path.join(config.out, "history.log")
        files["trace"] = os.path.join(config.out, "trace.log")
        with open(files["history"], "w") as fh:
            fh.write(cluster.history.dumps())
        with open(files["trace"], "w") as fh:
            fh.write("".join(line + "\n" for line in cluster.trace_lines()))
    return files


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tpart-bench",
                                description="Run the TPC-C new_order benchmark on the "
                                            "simulated cluster.")
    p.add_argument("--variant", choices=tpcc.VARIANTS, default="v2")
    p.add_argument("--warehouses", type=int, default=4)
    p.add_argument("--districts", type=int, default=2)
    p.add_argument("--items", type=int, default=100)
    p.add_argument("--customers", type=int, default=10)
    p.add_argument("--clients", type=int, default=1)
    p.add_argument("--txns", type=int, default=1000)
    p.add_argument("--remote-prob", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--net-latency-us", type=int, default=100)
    p.add_argument("--physical", type=int, default=None,
                   help="physical workers (default: one per logical partition)")
    p.add_argument("--mapping", default="auto", help="'auto' or a mapping file")
    p.add_argument("--retry-limit", type=int, default=5)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--trace", action="store_true", help="also write history.log and trace.log")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = BenchConfig(
            variant=args.variant,
            scale=TpccScale(args.warehouses, args.districts, args.items, args.customers),
            clients=args.clients, txns=args.txns, remote_prob=args.remote_prob,
            seed=args.seed, net_latency_us=args.net_latency_us, physical=args.physical,
            mapping=args.mapping, retry_limit=args.retry_limit, format=args.format,
            trace=args.trace, out=args.out)
        result = run_benchmark(config)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"tpart-bench: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    m = result.metrics
    audits = result.report["audits"]
    print(f"{config.variant}: committed {m.committed}/{m.submitted}, "
          f"throughput {m.throughput:.1f} txn/s, p50 {m.latency_p50_us:.0f}us, "
          f"aborts {sum(m.attempt_aborts.values())} attempts, "
          f"consistency {'ok' if audits['consistency']['ok'] else 'FAIL'}, "
          f"serializability {'ok' if audits['serializability']['ok'] else 'FAIL'}")
    print(f"report: {result.files['report']}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
