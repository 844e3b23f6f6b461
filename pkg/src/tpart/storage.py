"""Partition-local, versioned, in-memory table store.

Every read and write goes through a :class:`Fragment`, the slice of a root
transaction's read/write set that lives on one logical partition.  Writes are
buffered in the fragment and only reach the :class:`PartitionStore` when the
root commits.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from types import MappingProxyType
from typing import Any, Iterable, Mapping

DECIMAL_QUANTUM = Decimal("0.000001")

EMPTY_DIGEST = hashlib.sha256(b"").hexdigest()


class StorageError(Exception):
    """Base class for data-access errors raised inside procedure bodies."""


class SchemaError(StorageError):
    pass


class UnknownTable(StorageError):
    pass


class UnknownColumn(StorageError):
    pass


class DuplicateKey(StorageError):
    pass


class RecordNotFound(StorageError):
    pass


class ReplicatedWriteError(StorageError):
    """Write to a replicated table outside a broadcast transaction."""


class InFlightError(StorageError):
    """Digest requested while transactions still hold fragments."""


def fixed(value: Any) -> Decimal:
    """Return ``value`` as a decimal with 1e-6 resolution."""
    if isinstance(value, float):
        value = repr(value)
    return Decimal(value).quantize(DECIMAL_QUANTUM, rounding=ROUND_HALF_EVEN)


def _normalize_scalar(value: Any) -> Any:
    if type(value) is int or type(value) is str:
        return value
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, (int, str)):
        return value
    if isinstance(value, (Decimal, float)):
        return fixed(value)
    raise SchemaError(f"unsupported scalar type {type(value).__name__}")


@dataclass(frozen=True)
class TableSchema:
    name: str
    key_arity: int
    columns: tuple[str, ...]
    replicated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.name or not self.name.isidentifier():
            raise SchemaError(f"invalid table name {self.name!r}")
        if self.key_arity < 1:
            raise SchemaError(f"table {self.name!r}: key_arity must be >= 1")
        if len(set(self.columns)) != len(self.columns):
            raise SchemaError(f"table {self.name!r}: duplicate column names")

    def normalize_key(self, key: Any) -> tuple[int, ...]:
        if isinstance(key, int):
            key = (key,)
        key = tuple(key)
        # type() rather than isinstance() so that bools are rejected
        ok = len(key) == self.key_arity
        if ok:
            for k in key:
                if type(k) is not int:
                    ok = False
                    break
        if not ok:
            raise SchemaError(
                f"table {self.name!r}: key must be {self.key_arity} integers, got {key!r}"
            )
        return key


@dataclass(frozen=True)
class Record:
    """An immutable committed (or buffered) row."""

    key: tuple[int, ...]
    values: Mapping[str, Any]
    version: int

    def __getitem__(self, column: str) -> Any:
        return self.values[column]


class Catalog:
    """Table definitions shared by every partition of a database."""

    def __init__(self):
        self._tables: dict[str, TableSchema] = {}
        self.frozen = False

    def define_table(self, schema: TableSchema) -> TableSchema:
        if self.frozen:
            raise SchemaError("catalog is frozen; engine already started")
        if schema.name in self._tables:
            raise SchemaError(f"duplicate table name {schema.name!r}")
        self._tables[schema.name] = schema
        return schema

    def __getitem__(self, name: str) -> TableSchema:
        try:
            return self._tables[name]
        except KeyError:
            raise UnknownTable(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._tables

    def __iter__(self):
        return iter(self._tables.values())

    def names(self) -> list[str]:
        return list(self._tables)


@dataclass
class Write:
    kind: str  # "add" | "update"
    values: dict[str, Any]


@dataclass
class Fragment:
    """Read/write set of one root transaction on one partition."""

    reads: dict[tuple[str, tuple], int] = field(default_factory=dict)
    writes: dict[tuple[str, tuple], Write] = field(default_factory=dict)

    def keys(self) -> set[tuple[str, tuple]]:
        return set(self.reads) | set(self.writes)

    def __bool__(self):
        return bool(self.reads or self.writes)


class PartitionStore:
    """Committed state of one logical partition."""

    def __init__(self, partition_id: int, catalog: Catalog):
        self.partition_id = partition_id
        self.catalog = catalog
        self.tables: dict[str, dict[tuple, Record]] = {s.name: {} for s in catalog}

    def lookup(self, table: str, key: tuple) -> Record | None:
        return self.tables[table].get(key)

    def version(self, table: str, key: tuple) -> int:
        rec = self.tables[table].get(key)
        return 0 if rec is None else rec.version

    def apply(self, fragment: Fragment) -> None:
        for (table, key), write in fragment.writes.items():
            rows = self.tables[table]
            old = rows.get(key)
            version = 1 if old is None else old.version + 1
            rows[key] = Record(key, MappingProxyType(dict(write.values)), version)

    def snapshot(self) -> "PartitionStore":
        # records are immutable, so per-table shallow copies are enough
        clone = PartitionStore.__new__(PartitionStore)
        clone.partition_id = self.partition_id
        clone.catalog = self.catalog
        clone.tables = {name: dict(rows) for name, rows in self.tables.items()}
        return clone

    def rows(self, table: str) -> dict[tuple, Record]:
        return self.tables[table]

    def digest_lines(self, tables: Iterable[str] | None = None,
                     include_replicated: bool = True) -> list[bytes]:
        lines = []
        for schema in self.catalog:
            if tables is not None and schema.name not in tables:
                continue
            if schema.replicated and not include_replicated:
                continue
            for key, rec in self.tables[schema.name].items():
                lines.append(_canonical_line(schema, key, rec.values))
        return lines


def _encode_scalar(value: Any) -> str:
    if isinstance(value, int):
        return f"i:{value}"
    if isinstance(value, Decimal):
        return f"d:{value}"
    return "s:" + value.replace("\\", "\\\\").replace("|", "\\|")


def _canonical_line(schema: TableSchema, key: tuple, values: Mapping[str, Any]) -> bytes:
    body = "|".join(_encode_scalar(values[c]) for c in schema.columns)
    return f"{schema.name}|{','.join(map(str, key))}|{body}".encode()


def digest_of_lines(lines: Iterable[bytes]) -> str:
    h = hashlib.sha256()
    for line in sorted(lines):
        h.update(line)
        h.update(b"\n")
    return h.hexdigest()


def state_digest(store: PartitionStore, include_replicated: bool = True,
                 tables: Iterable[str] | None = None) -> str:
    """Order-independent SHA-256 over committed ``(table, key, values)`` triples."""
    return digest_of_lines(store.digest_lines(tables, include_replicated))


# -- transactional access -------------------------------------------------------
#
# ``ctx`` is anything exposing ``store``, ``fragment`` and ``broadcast``; in
# practice a procmodel.TransactionContext.  Reads of replicated tables are not
# tracked: their content only changes inside broadcast load transactions.


def get(ctx, table: str, key: Any) -> Record | None:
    schema = ctx.store.catalog[table]
    key = schema.normalize_key(key)
    ident = (table, key)
    frag = ctx.fragment
    pending = frag.writes.get(ident)
    committed = ctx.store.tables[table].get(key)
    if pending is not None:
        version = 0 if committed is None else committed.version
        return Record(key, MappingProxyType(dict(pending.values)), version)
    if not schema.replicated and ident not in frag.reads:
        frag.reads[ident] = 0 if committed is None else committed.version
    return committed


def add(ctx, table: str, key: Any, values: Mapping[str, Any]) -> None:
    schema = ctx.store.catalog[table]
    key = schema.normalize_key(key)
    if schema.replicated and not ctx.broadcast:
        raise ReplicatedWriteError(f"write to replicated table {table!r}")
    if set(values) != set(schema.columns):
        raise UnknownColumn(
            f"table {table!r}: expected columns {list(schema.columns)}, got {sorted(values)}"
        )
    ident = (table, key)
    frag = ctx.fragment
    committed = ctx.store.tables[table].get(key)
    if ident in frag.writes or committed is not None:
        raise DuplicateKey(f"{table}{key}")
    if not schema.replicated and ident not in frag.reads:
        frag.reads[ident] = 0
    frag.writes[ident] = Write(
        "add", {c: _normalize_scalar(values[c]) for c in schema.columns}
    )


def update(ctx, table: str, key: Any, updates: Mapping[str, Any]) -> None:
    schema = ctx.store.catalog[table]
    key = schema.normalize_key(key)
    if schema.replicated and not ctx.broadcast:
        raise ReplicatedWriteError(f"write to replicated table {table!r}")
    for column in updates:
        if column not in schema.columns:
            raise UnknownColumn(f"table {table!r} has no column {column!r}")
    ident = (table, key)
    frag = ctx.fragment
    pending = frag.writes.get(ident)
    if pending is not None:
        for column, value in updates.items():
            pending.values[column] = _normalize_scalar(value)
        return
    committed = ctx.store.tables[table].get(key)
    if committed is None:
        raise RecordNotFound(f"{table}{key}")
    if not schema.replicated and ident not in frag.reads:
        frag.reads[ident] = committed.version
    merged = dict(committed.values)
    for column, value in updates.items():
        merged[column] = _normalize_scalar(value)
    frag.writes[ident] = Write("update", merged)
