"""Deterministic discrete-event cluster.

One worker per physical partition hosts the executors of the logical
partitions mapped onto it.  A worker handles one event at a time in FIFO
order; every handled event (root start, invoke, result, validate, vote,
decide) occupies the worker for ``service_us`` simulated microseconds, and
the messages it emits leave when it finishes.  Messages between distinct
workers take ``net_latency_us`` (optionally jittered); messages between
co-located logical partitions arrive instantly but are still counted.
"""

from __future__ import annotations

import heapq
import random
from collections import Counter, deque
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import occ
from .occ import CommitRecord, HistoryLog, PartitionValidator, ValidationVote, fragment_summary
from .procmodel import (
    ABORTING_ERRORS,
    ParallelCall,
    Registry,
    SubCall,
    TransactionContext,
    decode_payload,
    encode_payload,
    start_body,
)
from .storage import (
    Catalog,
    Fragment,
    InFlightError,
    PartitionStore,
    digest_of_lines,
    state_digest,
)

BROADCAST_PROC = "__broadcast__"
_ZERO_MAPPER = "__partition_zero__"

MESSAGE_KINDS = ("invoke", "result", "validate", "vote", "decide", "broadcast")


class ConfigError(ValueError):
    pass


class LivelockError(RuntimeError):
    pass


@dataclass
class ClusterConfig:
    num_logical: int
    num_physical: int = 1
    mapping: tuple[int, ...] | None = None
    net_latency_us: int = 0
    seed: int = 0
    latency_jitter: float = 0.0
    service_us: int = 10
    retry_limit: int = 5
    max_time_us: int = 10**12
    trace: bool = False

    def __post_init__(self):
        if self.num_logical < 1:
            raise ConfigError("num_logical must be >= 1")
        if self.num_physical < 1:
            raise ConfigError("num_physical must be >= 1")
        if self.net_latency_us < 0 or self.service_us < 0:
            raise ConfigError("latencies must be >= 0")
        if not 0 <= self.latency_jitter < 1:
            raise ConfigError("latency_jitter must be in [0, 1)")
        if self.retry_limit < 0:
            raise ConfigError("retry_limit must be >= 0")
        if self.mapping is None:
            self.mapping = tuple(i % self.num_physical for i in range(self.num_logical))
        elif isinstance(self.mapping, dict):
            missing = [i for i in range(self.num_logical) if i not in self.mapping]
            if missing:
                raise ConfigError(f"logical partitions {missing} are not mapped")
            self.mapping = tuple(self.mapping[i] for i in range(self.num_logical))
        else:
            self.mapping = tuple(self.mapping)
        if len(self.mapping) != self.num_logical:
            raise ConfigError(
                f"mapping covers {len(self.mapping)} of {self.num_logical} logical partitions")
        bad = [p for p in self.mapping if not 0 <= p < self.num_physical]
        if bad:
            raise ConfigError(f"mapping targets unknown physical workers {bad}")

    @classmethod
    def from_file(cls, path) -> "ClusterConfig":
        """Read ``key = value`` lines; ``mapping`` is written ``0:0,1:1,...``."""
        kwargs: dict[str, Any] = {}
        types_ = {"num_logical": int, "num_physical": int, "net_latency_us": int, "seed": int,
                  "latency_jitter": float, "service_us": int, "retry_limit": int,
                  "max_time_us": int}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, value = (x.strip() for x in line.split("=", 1))
                if key == "mapping":
                    pairs = [item.split(":") for item in value.split(",") if item.strip()]
                    kwargs[key] = {int(a): int(b) for a, b in pairs}
                elif key == "trace":
                    kwargs[key] = value.lower() in ("1", "true", "yes", "on")
                elif key in types_:
                    kwargs[key] = types_[key](value)
                else:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mapping"] = list(self.mapping)
        return d


@dataclass(frozen=True)
class MessageEnvelope:
    kind: str
    src: int
    dst: int
    root_id: int
    payload: bytes
    send_time: int
    deliver_time: int
    local: bool = False
    meta: Any = None

    def trace_line(self) -> str:
        return (f"{self.kind}\t{self.src}\t{self.dst}\t{self.send_time}\t"
                f"{self.deliver_time}\t{self.root_id}")


@dataclass
class Ticket:
    id: int
    txn_name: str
    args: bytes
    partition: int
    submit_time: int
    on_done: Callable[["Ticket"], None] | None = None
    broadcast: bool = False
    attempts: int = 0
    done: bool = False
    status: str | None = None          # "committed" | "aborted"
    value: Any = None
    reason: str | None = None
    error: str | None = None
    end_time: int | None = None
    body_latency: int | None = None
    root_id: int | None = None

    @property
    def committed(self) -> bool:
        return self.status == "committed"

    @property
    def latency(self) -> int | None:
        return None if self.end_time is None else self.end_time - self.submit_time


@dataclass
class MetricsReport:
    submitted: int = 0
    committed: int = 0
    aborted: dict[str, int] = field(default_factory=dict)
    attempt_aborts: dict[str, int] = field(default_factory=dict)
    elapsed_us: int = 0
    throughput: float = 0.0
    latency_p50_us: float = 0.0
    latency_p95_us: float = 0.0
    latency_p99_us: float = 0.0
    body_latency_p50_us: float = 0.0
    messages: int = 0
    messages_by_kind: dict[str, int] = field(default_factory=dict)
    messages_per_txn: float = 0.0
    remote_subtxns_per_txn: float = 0.0
    busy_fraction: list[float] = field(default_factory=list)

    @property
    def aborted_total(self) -> int:
        return sum(self.aborted.values())

    def to_dict(self) -> dict:
        return asdict(self)


class _Worker:
    __slots__ = ("id", "queue", "busy", "busy_time")

    def __init__(self, wid):
        self.id = wid
        self.queue: deque = deque()
        self.busy = False
        self.busy_time = 0


class _Join:
    __slots__ = ("values", "pending", "single", "inline", "error")

    def __init__(self, n, single=False):
        self.values = [None] * n
        self.pending = 0
        self.single = single
        self.inline = False
        self.error = None


class _Task:
    __slots__ = ("id", "root_id", "attempt", "partition", "stack", "reply", "participants",
                 "join", "error")

    def __init__(self, tid, root_id, partition, reply=None, attempt=None):
        self.id = tid
        self.root_id = root_id
        self.attempt = attempt
        self.partition = partition
        self.stack: list = []
        self.reply = reply
        self.participants = {partition}
        self.join: _Join | None = None
        self.error: tuple[str, str] | None = None  # (reason, message)


class _Attempt:
    __slots__ = ("root_id", "ticket", "partition", "start_time", "body_end", "value",
                 "participants", "votes", "summaries")

    def __init__(self, root_id, ticket, partition, start_time):
        self.root_id = root_id
        self.ticket = ticket
        self.partition = partition
        self.start_time = start_time
        self.body_end = None
        self.value = b""
        self.participants: list[int] = []
        self.votes: dict[int, ValidationVote] = {}
        self.summaries: dict[int, dict] = {}


def _roundtrip(value):
    return decode_payload(encode_payload(value))


def _percentile(values, q):
    if not values:
        return 0.0
    return float(np.percentile(np.asarray(values, dtype=float), q, method="higher"))


class Cluster:
    """Handle on a running simulated cluster."""

    def __init__(self, config: ClusterConfig, registry: Registry, catalog: Catalog):
        self.config = config
        self.registry = registry
        self.catalog = catalog
        if BROADCAST_PROC not in registry.procedures:
            if _ZERO_MAPPER not in registry.mappers:
                registry.register_mapper(_ZERO_MAPPER, lambda *_: 0)
            registry.register_procedure(BROADCAST_PROC, _broadcast_body, _ZERO_MAPPER)
        registry.frozen = True
        catalog.frozen = True
        n = config.num_logical
        self.stores = [PartitionStore(p, catalog) for p in range(n)]
        self.validators = [PartitionValidator(s) for s in self.stores]
        self.workers = [_Worker(w) for w in range(config.num_physical)]
        self._rng = random.Random(config.seed)
        self._events: list = []
        self._seq = 0
        self._clock = 0
        self._send_time: int | None = None
        self._tasks: dict[int, _Task] = {}
        self._attempts: dict[int, _Attempt] = {}
        self._next_task = 0
        self._next_root = 1
        self._next_ticket = 0
        self._next_gi = 0
        self.history = HistoryLog()
        self.tickets: list[Ticket] = []
        self._waiting: dict[tuple[int, int], list[Ticket]] = {}   # (partition, blocker) -> retries
        self.reset_epoch()

    # -- public API ----------------------------------------------------------------

    def now(self) -> int:
        return self._clock

    def reset_epoch(self) -> None:
        """Start a fresh measurement window and history log (state is kept)."""
        self._epoch_start = self._clock
        self.history = HistoryLog()
        self.tickets = []
        self.trace: list[MessageEnvelope] = []
        self.kind_counts: Counter = Counter()
        self.traffic: Counter = Counter()          # (src, dst) logical -> messages
        self.root_counts: Counter = Counter()      # logical partition -> submitted roots
        self.attempt_aborts: Counter = Counter()
        self._busy_base = [w.busy_time for w in self.workers]

    def submit(self, txn_name: str, args: Sequence[Any] = (),
               on_done: Callable[[Ticket], None] | None = None) -> Ticket:
        args = _roundtrip(list(args))
        partition = self.registry.partition_for(txn_name, args, self.config.num_logical)
        return self._new_ticket(txn_name, args, partition, on_done)

    def broadcast(self, txn_name: str, args: Sequence[Any] = (),
                  on_done: Callable[[Ticket], None] | None = None) -> Ticket:
        """Run ``txn_name`` once on every logical partition under one root commit."""
        self.registry.procedure(txn_name)
        inner = [txn_name, _roundtrip(list(args))]
        return self._new_ticket(BROADCAST_PROC, inner, 0, on_done, broadcast=True)

    def wait(self, ticket: Ticket) -> Ticket:
        while not ticket.done:
            if not self._step():
                raise RuntimeError(f"ticket {ticket.id} cannot complete: cluster is quiescent")
        return ticket

    def exec_root(self, txn_name: str, args: Sequence[Any] = ()) -> Ticket:
        return self.wait(self.submit(txn_name, args))

    def drain(self) -> None:
        """Process events until none are left; the history stays open."""
        while self._step():
            pass

    def run_until_quiescent(self) -> MetricsReport:
        self.drain()
        self.history.frozen = True
        return self.metrics()

    def in_flight(self) -> bool:
        return bool(self._events or self._tasks or self._attempts
                    or any(v.in_flight() for v in self.validators))

    def digest(self, partition: int, include_replicated: bool = True) -> str:
        if self.validators[partition].in_flight():
            raise InFlightError(f"partition {partition} has in-flight transactions")
        return state_digest(self.stores[partition], include_replicated)

    def table_digest(self, tables: Sequence[str]) -> str:
        """Digest of the union of ``tables`` across all partitions."""
        lines = []
        for store in self.stores:
            lines += store.digest_lines(tables)
        return digest_of_lines(lines)

    def snapshot(self) -> list[PartitionStore]:
        return [s.snapshot() for s in self.stores]

    def trace_lines(self) -> list[str]:
        return [env.trace_line() for env in self.trace]

    def metrics(self) -> MetricsReport:
        tickets = [t for t in self.tickets if not t.broadcast]
        done = [t for t in tickets if t.done]
        committed = [t for t in done if t.committed]
        aborted = Counter(t.reason for t in done if not t.committed)
        elapsed = self._clock - self._epoch_start
        messages = sum(self.kind_counts.values())
        n = len(committed)
        busy = [w.busy_time - base for w, base in zip(self.workers, self._busy_base)]
        return MetricsReport(
            submitted=len(tickets),
            committed=n,
            aborted={r: aborted[r] for r in occ.ABORT_REASONS},
            attempt_aborts={r: self.attempt_aborts[r] for r in occ.ABORT_REASONS},
            elapsed_us=elapsed,
            throughput=(n / (elapsed / 1e6)) if elapsed else 0.0,
            latency_p50_us=_percentile([t.latency for t in committed], 50),
            latency_p95_us=_percentile([t.latency for t in committed], 95),
            latency_p99_us=_percentile([t.latency for t in committed], 99),
            body_latency_p50_us=_percentile([t.body_latency for t in committed], 50),
            messages=messages,
            messages_by_kind={k: self.kind_counts[k] for k in MESSAGE_KINDS},
            messages_per_txn=messages / n if n else 0.0,
            remote_subtxns_per_txn=self.kind_counts["invoke"] / n if n else 0.0,
            busy_fraction=[b / elapsed if elapsed else 0.0 for b in busy],
        )

    # -- event loop ------------------------------------------------------------------

    def _now(self) -> int:
        return self._clock if self._send_time is None else self._send_time

    def _push(self, time, src, item):
        heapq.heappush(self._events, (time, src, self._seq, item))
        self._seq += 1

    def _step(self) -> bool:
        if not self._events:
            return False
        time, _, _, item = heapq.heappop(self._events)
        if time > self.config.max_time_us:
            raise LivelockError(f"simulated time {time}us exceeds cap {self.config.max_time_us}us")
        self._clock = time
        if isinstance(item, _Worker):
            item.busy = False
            if item.queue:
                self._run(item)
        else:
            worker = self.workers[self.config.mapping[item.dst]]
            worker.queue.append(item)
            if not worker.busy:
                self._run(worker)
        return True

    def _run(self, worker: _Worker) -> None:
        env = worker.queue.popleft()
        worker.busy = True
        cost = self.config.service_us
        self._send_time = self._clock + cost
        try:
            handler = getattr(self, "_on_" + env.kind)
            handler(env)
        finally:
            self._send_time = None
        worker.busy_time += cost
        self._push(self._clock + cost, -2, worker)

    def _send(self, kind, src, dst, root_id, payload=b"", meta=None):
        now = self._now()
        mapping = self.config.mapping
        local = mapping[src] == mapping[dst]
        if local:
            delay = 0
        else:
            delay = self.config.net_latency_us
            if self.config.latency_jitter and delay:
                delay = round(delay * (1 + self.config.latency_jitter * self._rng.uniform(-1, 1)))
        env = MessageEnvelope(kind, src, dst, root_id, payload, now, now + delay, local, meta)
        self.kind_counts[kind] += 1
        self.traffic[(src, dst)] += 1
        if self.config.trace:
            self.trace.append(env)
        self._push(env.deliver_time, src, env)

    # -- roots -----------------------------------------------------------------------

    def _new_ticket(self, txn_name, args, partition, on_done, broadcast=False) -> Ticket:
        ticket = Ticket(self._next_ticket, txn_name, encode_payload(args), partition,
                        self._now(), on_done, broadcast)
        self._next_ticket += 1
        self.tickets.append(ticket)
        if not broadcast:
            self.root_counts[partition] += 1
        self._start_attempt(ticket)
        return ticket

    def _start_attempt(self, ticket: Ticket) -> None:
        ticket.attempts += 1
        root_id = self._next_root
        self._next_root += 1
        ticket.root_id = root_id
        env = MessageEnvelope("submit", -1, ticket.partition, root_id, ticket.args,
                              self._now(), self._now(), True, ticket)
        self._push(env.deliver_time, -1, env)

    def _on_submit(self, env: MessageEnvelope) -> None:
        ticket: Ticket = env.meta
        p = ticket.partition
        attempt = _Attempt(env.root_id, ticket, p, self._clock)
        self._attempts[env.root_id] = attempt
        ctx = self._context(env.root_id, p, 0, ticket.broadcast)
        task = self._new_task(env.root_id, p, attempt=attempt)
        task.stack.append((start_body(self.registry, ticket.txn_name, ctx,
                                      decode_payload(ticket.args)), ctx, None))
        self._advance(task, None)

    def _context(self, root_id, partition, depth, broadcast) -> TransactionContext:
        frag = self.validators[partition].fragment(root_id)
        return TransactionContext(root_id, partition, self.stores[partition], frag,
                                  self.registry, self.config.num_logical, depth, broadcast)

    def _new_task(self, root_id, partition, reply=None, attempt=None) -> _Task:
        task = _Task(self._next_task, root_id, partition, reply, attempt)
        self._next_task += 1
        self._tasks[task.id] = task
        return task

    # -- procedure driving -------------------------------------------------------------

    def _advance(self, task: _Task, value) -> None:
        while True:
            gen, ctx, slot = task.stack[-1]
            try:
                req = gen.send(value)
            except StopIteration as stop:
                task.stack.pop()
                value = stop.value
                if slot is not None or task.stack:
                    # handed to a local caller; results leaving the task are encoded anyway
                    value = _roundtrip(value)
                if slot is not None:
                    join = task.join
                    join.values[slot] = value
                    join.inline = False
                    if join.pending:
                        return
                    if join.error:
                        self._task_failed(task, join.error)
                        return
                    task.join = None
                    value = join.values
                if not task.stack:
                    self._task_done(task, value)
                    return
                continue
            except ABORTING_ERRORS as exc:
                # an error raised over a stale snapshot is a conflict, not the user's fault
                stale = self.validators[ctx.partition].stale_read(task.root_id)
                reason = occ.USER_ERROR if stale is None else occ.VALIDATION_CONFLICT
                self._task_error(task, (reason, f"{type(exc).__name__}: {exc}"))
                return
            value = None
            if isinstance(req, SubCall):
                if req.partition == ctx.partition:
                    child = ctx.child()
                    task.stack.append((start_body(self.registry, req.txn_name, child,
                                                  _roundtrip(list(req.args))), child, None))
                    continue
                task.join = _Join(1, single=True)
                self._invoke(task, ctx, req.txn_name, req.args, req.partition, 0)
                return
            if isinstance(req, ParallelCall):
                if not req.partitions:
                    value = []
                    continue
                join = task.join = _Join(len(req.partitions))
                local = None
                for slot_i, (args, p) in enumerate(zip(req.args_list, req.partitions)):
                    if p == ctx.partition:
                        local = (slot_i, args)
                    else:
                        self._invoke(task, ctx, req.txn_name, args, p, slot_i)
                if local is None:
                    return
                join.inline = True
                child = ctx.child()
                task.stack.append((start_body(self.registry, req.txn_name, child,
                                              _roundtrip(list(local[1]))), child, local[0]))
                continue
            raise TypeError(f"procedure yielded {req!r}; expected exec_sub/parallel_exec")

    def _invoke(self, task, ctx, txn_name, args, dst, slot):
        task.join.pending += 1
        kind = "broadcast" if ctx.broadcast else "invoke"
        meta = (task.id, slot, ctx.depth + 1, ctx.broadcast, txn_name)
        self._send(kind, ctx.partition, dst, task.root_id, encode_payload(list(args)), meta)

    def _on_invoke(self, env: MessageEnvelope) -> None:
        reply_task, slot, depth, broadcast, txn_name = env.meta
        ctx = self._context(env.root_id, env.dst, depth, broadcast)
        task = self._new_task(env.root_id, env.dst, reply=(env.src, reply_task, slot))
        task.stack.append((start_body(self.registry, txn_name, ctx,
                                      decode_payload(env.payload)), ctx, None))
        self._advance(task, None)

    _on_broadcast = _on_invoke

    def _on_result(self, env: MessageEnvelope) -> None:
        reply_task, slot, error, participants = env.meta
        task = self._tasks[reply_task]
        task.participants.update(participants)
        join = task.join
        join.pending -= 1
        if error is not None:
            join.error = join.error or error
        else:
            join.values[slot] = decode_payload(env.payload)
        if join.pending or join.inline:
            return
        error = task.error or join.error
        if error is not None:
            self._task_failed(task, error)
            return
        task.join = None
        self._advance(task, join.values[0] if join.single else join.values)

    def _task_error(self, task: _Task, error: tuple[str, str]) -> None:
        task.error = error
        join = task.join
        if join is not None:
            join.inline = False
            if join.pending:
                return
        self._task_failed(task, error)

    def _task_failed(self, task: _Task, error: tuple[str, str]) -> None:
        """``error`` is (abort reason, message); it travels back to the root unchanged."""
        del self._tasks[task.id]
        if task.reply is None:
            reason, message = error
            self._abort(task.attempt, reason, sorted(task.participants), message)
        else:
            dst, reply_task, slot = task.reply
            self._send("result", task.partition, dst, task.root_id, b"",
                       (reply_task, slot, error, tuple(sorted(task.participants))))

    def _task_done(self, task: _Task, value) -> None:
        del self._tasks[task.id]
        if task.reply is None:
            self._root_body_done(task, value)
        else:
            dst, reply_task, slot = task.reply
            self._send("result", task.partition, dst, task.root_id, encode_payload(value),
                       (reply_task, slot, None, tuple(sorted(task.participants))))

    # -- commit protocol ----------------------------------------------------------------

    def _root_body_done(self, task: _Task, value) -> None:
        attempt: _Attempt = task.attempt
        attempt.body_end = self._now()
        attempt.value = encode_payload(value)
        attempt.participants = sorted(task.participants)
        root = attempt.partition
        validator = self.validators[root]
        frag = validator.active.get(attempt.root_id)
        attempt.summaries[root] = fragment_summary(frag or Fragment())
        vote = validator.validate(attempt.root_id)
        attempt.votes[root] = vote
        remote = [p for p in attempt.participants if p != root]
        if not vote.valid:
            self._abort(attempt, vote.reason, attempt.participants, vote=vote)
            return
        if not remote:
            self._commit(attempt)
            return
        for p in remote:
            self._send("validate", root, p, attempt.root_id)

    def _on_validate(self, env: MessageEnvelope) -> None:
        validator = self.validators[env.dst]
        frag = validator.active.get(env.root_id)
        summary = fragment_summary(frag or Fragment())
        vote = validator.validate(env.root_id)
        payload = encode_payload([vote.seq, vote.reason])
        self._send("vote", env.dst, env.src, env.root_id, payload, (vote, summary))

    def _on_vote(self, env: MessageEnvelope) -> None:
        attempt = self._attempts[env.root_id]
        vote, summary = env.meta
        attempt.votes[env.src] = vote
        attempt.summaries[env.src] = summary
        if len(attempt.votes) < len(attempt.participants):
            return
        for p in attempt.participants:
            if not attempt.votes[p].valid:
                vote = attempt.votes[p]
                self._abort(attempt, vote.reason, attempt.participants, vote=vote)
                return
        self._commit(attempt)

    def _on_decide(self, env: MessageEnvelope) -> None:
        validator = self.validators[env.dst]
        if env.meta == "commit":
            validator.commit(env.root_id)
        else:
            validator.discard(env.root_id)
        self._release(env.dst, env.root_id)

    def _release(self, partition: int, root_id: int) -> None:
        """Start the retries that were waiting for ``root_id`` to leave ``partition``."""
        for ticket in self._waiting.pop((partition, root_id), ()):
            self._start_attempt(ticket)

    def _commit(self, attempt: _Attempt) -> None:
        root = attempt.partition
        gi = self._next_gi
        self._next_gi += 1
        self.validators[root].commit(attempt.root_id)
        self._release(root, attempt.root_id)
        for p in attempt.participants:
            if p != root:
                self._send("decide", root, p, attempt.root_id, b"\x01", "commit")
        ticket = attempt.ticket
        self.history.append(CommitRecord(
            attempt.root_id, ticket.txn_name, ticket.args, attempt.participants,
            {p: attempt.votes[p].seq for p in attempt.participants}, "committed",
            global_index=gi, result=attempt.value, access=dict(attempt.summaries)))
        del self._attempts[attempt.root_id]
        ticket.status = "committed"
        ticket.value = decode_payload(attempt.value)
        self._finish(ticket, attempt)

    def _abort(self, attempt: _Attempt, reason: str, participants, error: str | None = None,
               vote: occ.ValidationVote | None = None):
        """Discard every fragment of the attempt and retry or fail its ticket.

        Conflicts retry at once, except that a pending overlap retries as soon as
        the parked root it ran into has been decided on that partition.
        """
        root = attempt.partition
        if self.validators[root].discard(attempt.root_id):
            self._release(root, attempt.root_id)
        for p in participants:
            if p != root:
                self._send("decide", root, p, attempt.root_id, b"\x00", "abort")
        ticket = attempt.ticket
        self.attempt_aborts[reason] += 1
        self.history.append(CommitRecord(
            attempt.root_id, ticket.txn_name, ticket.args, list(participants),
            {p: v.seq for p, v in attempt.votes.items() if v.valid}, "aborted",
            reason=reason, access=dict(attempt.summaries)))
        del self._attempts[attempt.root_id]
        if reason != occ.USER_ERROR and ticket.attempts <= self.config.retry_limit:
            blocker = None if vote is None else vote.blocker
            if blocker is not None and blocker in self.validators[vote.partition].pending:
                self._waiting.setdefault((vote.partition, blocker), []).append(ticket)
            else:
                self._start_attempt(ticket)
            return
        ticket.status = "aborted"
        ticket.reason = reason
        ticket.error = error
        self._finish(ticket, attempt)

    def _finish(self, ticket: Ticket, attempt: _Attempt) -> None:
        ticket.done = True
        ticket.end_time = self._now()
        if attempt.body_end is not None:
            ticket.body_latency = attempt.body_end - attempt.start_time
        if ticket.on_done is not None:
            ticket.on_done(ticket)


def _broadcast_body(ctx, txn_name, args):
    n = ctx.num_partitions
    return (yield ctx.parallel_exec(txn_name, [args] * n, list(range(n))))


def spawn_cluster(config: ClusterConfig, registry: Registry, catalog: Catalog) -> Cluster:
    return Cluster(config, registry, catalog)
