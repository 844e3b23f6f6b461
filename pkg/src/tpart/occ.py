"""Distributed optimistic concurrency control.

Each logical partition validates the fragments parked on it with backward
validation and assigns local sequence numbers; the root's executor collects
one vote per participant and broadcasts a single decision.  Committed roots
receive a position in a cluster-wide commit log, and :func:`verify_serializability`
replays that log serially to check the run.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .procmodel import ABORTING_ERRORS, Registry, decode_payload, encode_payload, run_serial
from .storage import Fragment, PartitionStore, digest_of_lines

USER_ERROR = "user-error"
VALIDATION_CONFLICT = "validation-conflict"
PENDING_OVERLAP = "pending-overlap"
ABORT_REASONS = (USER_ERROR, VALIDATION_CONFLICT, PENDING_OVERLAP)


@dataclass(frozen=True)
class ValidationVote:
    partition: int
    seq: int | None = None          # local sequence number when valid
    conflict: tuple | None = None   # (table, key) of the first conflicting access
    reason: str | None = None
    blocker: int | None = None      # parked root responsible for a pending overlap

    @property
    def valid(self) -> bool:
        return self.conflict is None and self.reason is None


@dataclass
class PendingEntry:
    fragment: Fragment
    seq: int


class PartitionValidator:
    """Fragments and commit bookkeeping for one logical partition.

    Owned by that partition's executor; never touched from anywhere else.
    """

    def __init__(self, store: PartitionStore):
        self.store = store
        self.active: dict[int, Fragment] = {}
        self.pending: dict[int, PendingEntry] = {}
        self._pending_writes: dict[tuple, int] = {}
        self._pending_reads: dict[tuple, set[int]] = {}
        self.next_seq = 1

    def fragment(self, root_id: int) -> Fragment:
        frag = self.active.get(root_id)
        if frag is None:
            frag = self.active[root_id] = Fragment()
        return frag

    def in_flight(self) -> bool:
        return bool(self.active or self.pending)

    def stale_read(self, root_id: int) -> tuple | None:
        """First read of the root's open fragment whose version is no longer current."""
        frag = self.active.get(root_id)
        if frag is None:
            return None
        tables = self.store.tables
        for ident, version in frag.reads.items():
            rec = tables[ident[0]].get(ident[1])
            if (0 if rec is None else rec.version) != version:
                return ident
        return None

    def validate(self, root_id: int) -> ValidationVote:
        """Backward-validate the root's fragment here and park it if valid.

        A fragment is valid iff every version it read is still the committed
        one, and none of its keys overlaps a parked fragment in a way that
        would make the two non-commuting (its reads or writes against parked
        writes, its writes against parked reads).
        """
        part = self.store.partition_id
        frag = self.active.pop(root_id, None) or Fragment()
        tables = self.store.tables
        for ident, version in frag.reads.items():
            rec = tables[ident[0]].get(ident[1])
            if (0 if rec is None else rec.version) != version:
                return ValidationVote(part, conflict=ident, reason=VALIDATION_CONFLICT)
        pw = self._pending_writes
        if pw or self._pending_reads:
            for ident in frag.reads:
                if ident in pw:
                    return ValidationVote(part, conflict=ident, reason=PENDING_OVERLAP,
                                          blocker=pw[ident])
            pr = self._pending_reads
            for ident in frag.writes:
                if ident in pw or ident in pr:
                    blocker = pw[ident] if ident in pw else min(pr[ident])
                    return ValidationVote(part, conflict=ident, reason=PENDING_OVERLAP,
                                          blocker=blocker)
        seq = self.next_seq
        self.next_seq += 1
        self.pending[root_id] = PendingEntry(frag, seq)
        for ident in frag.writes:
            pw[ident] = root_id
        for ident in frag.reads:
            if ident not in frag.writes:
                self._pending_reads.setdefault(ident, set()).add(root_id)
        return ValidationVote(part, seq=seq)

    def _unpark(self, root_id: int) -> PendingEntry | None:
        entry = self.pending.pop(root_id, None)
        if entry is None:
            return None
        for ident in entry.fragment.writes:
            del self._pending_writes[ident]
        for ident in entry.fragment.reads:
            if ident not in entry.fragment.writes:
                readers = self._pending_reads[ident]
                readers.discard(root_id)
                if not readers:
                    del self._pending_reads[ident]
        return entry

    def commit(self, root_id: int) -> PendingEntry:
        entry = self._unpark(root_id)
        if entry is None:
            raise KeyError(f"root {root_id} is not pending on partition {self.store.partition_id}")
        self.store.apply(entry.fragment)
        return entry

    def discard(self, root_id: int) -> bool:
        """Drop whatever the root left here; True if there was anything."""
        had_active = self.active.pop(root_id, None) is not None
        return self._unpark(root_id) is not None or had_active


# -- history ------------------------------------------------------------------------

def _key_str(ident: tuple) -> str:
    table, key = ident
    return f"{table}:{','.join(map(str, key))}"


def fragment_summary(frag: Fragment) -> dict:
    return {
        "reads": [[_key_str(i), v] for i, v in frag.reads.items()],
        "writes": [_key_str(i) for i in frag.writes],
    }


@dataclass
class CommitRecord:
    root_id: int
    txn_name: str
    args: bytes
    participants: list[int]
    seqs: dict[int, int]
    outcome: str                      # "committed" | "aborted"
    reason: str | None = None
    global_index: int | None = None
    result: bytes = b""
    access: dict[int, dict] = field(default_factory=dict)

    @property
    def committed(self) -> bool:
        return self.outcome == "committed"

    def to_line(self) -> str:
        return json.dumps({
            "root_id": self.root_id,
            "txn": self.txn_name,
            "args": self.args.decode(),
            "participants": self.participants,
            "seqs": {str(p): s for p, s in sorted(self.seqs.items())},
            "outcome": self.outcome,
            "reason": self.reason,
            "global_index": self.global_index,
            "result": self.result.decode(),
            "access": {str(p): a for p, a in sorted(self.access.items())},
        }, separators=(",", ":"))

    @classmethod
    def from_line(cls, line: str) -> "CommitRecord":
        d = json.loads(line)
        return cls(
            root_id=d["root_id"], txn_name=d["txn"], args=d["args"].encode(),
            participants=d["participants"],
            seqs={int(p): s for p, s in d["seqs"].items()},
            outcome=d["outcome"], reason=d["reason"], global_index=d["global_index"],
            result=d["result"].encode(),
            access={int(p): a for p, a in d["access"].items()},
        )


class MalformedHistory(ValueError):
    pass


class HistoryLog:
    """Append-only list of commit/abort records."""

    def __init__(self, records: Iterable[CommitRecord] = ()):
        self.records: list[CommitRecord] = list(records)
        self.frozen = False

    def append(self, record: CommitRecord) -> None:
        if self.frozen:
            raise RuntimeError("history log is frozen")
        self.records.append(record)

    def committed(self) -> list[CommitRecord]:
        out = [r for r in self.records if r.committed]
        out.sort(key=lambda r: r.global_index)
        return out

    def __len__(self):
        return len(self.records)

    def dumps(self) -> str:
        return "".join(r.to_line() + "\n" for r in self.records)

    @classmethod
    def loads(cls, text: str) -> "HistoryLog":
        return cls(CommitRecord.from_line(line) for line in text.splitlines() if line.strip())


# -- verification -------------------------------------------------------------------

@dataclass
class VerifyReport:
    ok: bool
    problems: list[str]
    replayed: int = 0

    def __bool__(self):
        return self.ok


def _check_order(committed: Sequence[CommitRecord]) -> list[str]:
    """Conflicting accesses on a partition must follow that partition's local order."""
    problems = []
    # (partition, key) -> (max seq of writers, max seq of any accessor)
    seen: dict[tuple, list] = {}
    for rec in committed:
        for p, acc in rec.access.items():
            seq = rec.seqs.get(p)
            if seq is None:
                problems.append(f"root {rec.root_id}: no local sequence for partition {p}")
                continue
            writes = set(acc["writes"])
            keys = [k for k, _ in acc["reads"]] + [k for k in acc["writes"]]
            for k in dict.fromkeys(keys):
                slot = seen.setdefault((p, k), [0, 0])
                bound = slot[1] if k in writes else slot[0]
                if seq <= bound:
                    problems.append(
                        f"order inversion on partition {p} key {k}: root {rec.root_id} "
                        f"(global {rec.global_index}, seq {seq}) after seq {bound}")
                if k in writes:
                    slot[0] = max(slot[0], seq)
                slot[1] = max(slot[1], seq)
    return problems


def _check_versions(committed: Sequence[CommitRecord],
                    initial: Sequence[PartitionStore]) -> list[str]:
    """Every read version equals the number of earlier committed writes."""
    problems = []
    current: dict[tuple, int] = {}

    def version(p, k):
        if (p, k) not in current:
            table, raw = k.split(":", 1)
            key = tuple(int(x) for x in raw.split(","))
            current[(p, k)] = initial[p].version(table, key)
        return current[(p, k)]

    for rec in committed:
        for p, acc in rec.access.items():
            for k, v in acc["reads"]:
                if version(p, k) != v:
                    problems.append(
                        f"root {rec.root_id} read {k}@{v} on partition {p} but "
                        f"serial version is {version(p, k)}")
            for k in acc["writes"]:
                current[(p, k)] = version(p, k) + 1
    return problems


def verify_serializability(history: HistoryLog, registry: Registry,
                           initial_stores: Sequence[PartitionStore],
                           final_stores: Sequence[PartitionStore],
                           check_versions: bool = True) -> VerifyReport:
    """Replay committed roots serially in global order and compare with the live run.

    ``initial_stores`` are left untouched; the replay works on snapshots.
    """
    problems: list[str] = []
    committed = history.committed()
    indices = [r.global_index for r in committed]
    if any(i is None for i in indices) or len(set(indices)) != len(indices):
        raise MalformedHistory("committed records need distinct global indices")
    if len(initial_stores) != len(final_stores):
        raise MalformedHistory("initial and final partition counts differ")

    problems += _check_order(committed)
    if check_versions:
        problems += _check_versions(committed, initial_stores)

    stores = [s.snapshot() for s in initial_stores]
    for rec in committed:
        args = decode_payload(rec.args)
        try:
            value = run_serial(registry, stores, rec.txn_name, args, root_id=rec.root_id)
        except ABORTING_ERRORS as exc:
            problems.append(f"root {rec.root_id} aborted on replay: {exc!r}")
            continue
        if encode_payload(value) != rec.result:
            problems.append(
                f"root {rec.root_id} returned {rec.result.decode()!r} live but "
                f"{encode_payload(value).decode()!r} on replay")

    for live, replay in zip(final_stores, stores):
        if digest_of_lines(live.digest_lines()) != digest_of_lines(replay.digest_lines()):
            problems.append(f"partition {live.partition_id}: final digest differs from replay")
    return VerifyReport(not problems, problems, len(committed))


def abort_counts(records: Iterable[CommitRecord]) -> dict[str, int]:
    counts = defaultdict(int)
    for r in records:
        if not r.committed:
            counts[r.reason] += 1
    return {reason: counts[reason] for reason in ABORT_REASONS}
