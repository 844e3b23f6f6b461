"""Procedures, partition mappers and the subtransaction invocation model.

A procedure body is called as ``body(ctx, *args)``.  Bodies that need to run
work on another logical partition are generator functions and *yield* the
request object returned by :meth:`TransactionContext.exec_sub` or
:meth:`TransactionContext.parallel_exec`; the runtime sends the result back
into the generator::

    def new_order(ctx, w_id, d_id, c_id, items):
        ...
        stock = yield ctx.exec_sub("update_stock", [items], supplier)

Bodies that never leave their partition can be plain functions.
"""

from __future__ import annotations

import json
import types
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Callable, Sequence

from . import storage
from .storage import Fragment, PartitionStore


class RegistryError(Exception):
    pass


class PartitionRangeError(RegistryError):
    pass


class UserAbort(Exception):
    """Raised by a procedure body to abort its root transaction."""


ABORTING_ERRORS = (UserAbort, storage.StorageError, PartitionRangeError)


# -- canonical payload encoding --------------------------------------------------

def _default(obj):
    if isinstance(obj, Decimal):
        return {"$d": str(obj)}
    raise TypeError(f"cannot encode {type(obj).__name__} in a message payload")


def _hook(obj):
    if len(obj) == 1 and "$d" in obj:
        return Decimal(obj["$d"])
    return obj


def encode_payload(value: Any) -> bytes:
    """Deterministic byte encoding; ``None`` encodes to zero bytes.

    Dict keys starting with ``$`` are reserved for tagged scalars.
    """
    if value is None:
        return b""
    return json.dumps(value, default=_default, sort_keys=True,
                      separators=(",", ":")).encode()


def decode_payload(data: bytes) -> Any:
    if not data:
        return None
    return json.loads(data, object_hook=_hook)


# -- registry ----------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionMapper:
    name: str
    fn: Callable[..., int]


@dataclass(frozen=True)
class Procedure:
    name: str
    body: Callable
    mapper_name: str


class Registry:
    """Named procedures and mappers, identical on every logical partition."""

    def __init__(self):
        self.mappers: dict[str, PartitionMapper] = {}
        self.procedures: dict[str, Procedure] = {}
        self.frozen = False

    def _check_open(self):
        if self.frozen:
            raise RegistryError("registry is frozen; cluster already started")

    def register_mapper(self, name: str, fn: Callable[..., int]) -> None:
        self._check_open()
        if name in self.mappers:
            raise RegistryError(f"duplicate mapper {name!r}")
        self.mappers[name] = PartitionMapper(name, fn)

    def register_procedure(self, name: str, body: Callable, mapper_name: str) -> None:
        self._check_open()
        if mapper_name not in self.mappers:
            raise RegistryError(f"unknown mapper {mapper_name!r}")
        if name in self.procedures:
            raise RegistryError(f"duplicate procedure {name!r}")
        self.procedures[name] = Procedure(name, body, mapper_name)

    def procedure(self, name: str) -> Procedure:
        try:
            return self.procedures[name]
        except KeyError:
            raise RegistryError(f"unknown procedure {name!r}") from None

    def map_partition(self, mapper_name: str, args: Sequence[Any],
                      num_partitions: int | None = None) -> int:
        try:
            mapper = self.mappers[mapper_name]
        except KeyError:
            raise RegistryError(f"unknown mapper {mapper_name!r}") from None
        partition = mapper.fn(*args)
        if num_partitions is not None:
            check_partition(partition, num_partitions)
        return partition

    def partition_for(self, txn_name: str, args: Sequence[Any], num_partitions: int) -> int:
        return self.map_partition(self.procedure(txn_name).mapper_name, args, num_partitions)


def check_partition(partition: Any, num_partitions: int) -> int:
    if not isinstance(partition, int) or isinstance(partition, bool) \
            or not 0 <= partition < num_partitions:
        raise PartitionRangeError(
            f"partition {partition!r} outside [0, {num_partitions})")
    return partition


# -- invocation requests -------------------------------------------------------------

@dataclass(frozen=True)
class SubCall:
    txn_name: str
    args: tuple
    partition: int


@dataclass(frozen=True)
class ParallelCall:
    txn_name: str
    args_list: tuple
    partitions: tuple


@dataclass
class TransactionContext:
    """Execution scope of one (sub)transaction on one logical partition."""

    root_id: int
    partition: int
    store: PartitionStore
    fragment: Fragment
    registry: Registry
    num_partitions: int
    depth: int = 0
    broadcast: bool = False
    children: list[tuple[str, int]] = field(default_factory=list)

    def get(self, table, *key):
        if len(key) == 1 and isinstance(key[0], (tuple, list)):
            key = key[0]
        return storage.get(self, table, key)

    def add(self, table, key, values):
        storage.add(self, table, key, values)

    def update(self, table, key, updates):
        storage.update(self, table, key, updates)

    def exec_sub(self, txn_name: str, args: Sequence[Any], partition: int) -> SubCall:
        self.registry.procedure(txn_name)
        check_partition(partition, self.num_partitions)
        self.children.append((txn_name, partition))
        return SubCall(txn_name, tuple(args), partition)

    def parallel_exec(self, txn_name: str, args_list: Sequence[Sequence[Any]],
                      partitions: Sequence[int]) -> ParallelCall:
        self.registry.procedure(txn_name)
        if len(args_list) != len(partitions):
            raise RegistryError("args_list and partitions differ in length")
        if len(set(partitions)) != len(partitions):
            raise RegistryError(f"duplicate target partitions in {list(partitions)}")
        for p in partitions:
            check_partition(p, self.num_partitions)
            self.children.append((txn_name, p))
        return ParallelCall(txn_name, tuple(tuple(a) for a in args_list), tuple(partitions))

    def child(self, partition: int | None = None, store=None, fragment=None) -> "TransactionContext":
        """Context for a subtransaction.  Same-partition children share the fragment."""
        if partition is None or partition == self.partition:
            return TransactionContext(self.root_id, self.partition, self.store, self.fragment,
                                      self.registry, self.num_partitions, self.depth + 1,
                                      self.broadcast)
        return TransactionContext(self.root_id, partition, store, fragment, self.registry,
                                  self.num_partitions, self.depth + 1, self.broadcast)


def _body(body, ctx, args):
    out = body(ctx, *args)
    if isinstance(out, types.GeneratorType):
        return (yield from out)
    return out


def start_body(registry: Registry, txn_name: str, ctx: TransactionContext, args: Sequence[Any]):
    """Generator driving a procedure body; the body is first called on the first send."""
    return _body(registry.procedure(txn_name).body, ctx, args)


def run_serial(registry: Registry, stores: Sequence[PartitionStore], txn_name: str,
               args: Sequence[Any], root_id: int = 0, broadcast: bool = False) -> Any:
    """Run one root transaction to completion with no concurrency and apply it.

    Subtransactions run synchronously in call order; parallel fan-outs run one
    child after another.  Arguments and results pass through the payload codec
    so bodies see exactly the value types they would see on a cluster.  Raises
    whatever aborted the body, in which case nothing is applied.
    """
    num = len(stores)
    fragments: dict[int, Fragment] = {}

    def call(name, call_args, partition, depth):
        call_args = decode_payload(encode_payload(list(call_args)))
        frag = fragments.setdefault(partition, Fragment())
        ctx = TransactionContext(root_id, partition, stores[partition], frag, registry,
                                 num, depth, broadcast)
        gen = start_body(registry, name, ctx, call_args)
        value = None
        while True:
            try:
                req = gen.send(value)
            except StopIteration as stop:
                return decode_payload(encode_payload(stop.value))
            if isinstance(req, SubCall):
                value = call(req.txn_name, req.args, req.partition, depth + 1)
            elif isinstance(req, ParallelCall):
                value = [call(req.txn_name, a, p, depth + 1)
                         for a, p in zip(req.args_list, req.partitions)]
            else:
                raise TypeError(f"procedure {name!r} yielded {req!r}")

    root = registry.partition_for(txn_name, args, num)
    result = call(txn_name, args, root, 0)
    for partition in sorted(fragments):
        stores[partition].apply(fragments[partition])
    return result
