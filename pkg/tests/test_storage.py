from decimal import Decimal

import pytest

from conftest import commit, ctx_for, kv_catalog
from tpart import storage
from tpart.storage import (EMPTY_DIGEST, Catalog, DuplicateKey, PartitionStore,
                           RecordNotFound, ReplicatedWriteError, SchemaError, TableSchema,
                           UnknownColumn, UnknownTable, fixed, state_digest)
from tpart.tpcc import TpccScale, deploy


def test_define_tables():
    cat = Catalog()
    item = cat.define_table(TableSchema("item", 1, ("price", "name"), replicated=True))
    district = cat.define_table(TableSchema("district", 2, ("tax", "next_o_id")))
    assert item.replicated and not district.replicated
    assert cat["district"].key_arity == 2
    with pytest.raises(SchemaError):
        cat.define_table(TableSchema("district", 2, ("tax",)))
    with pytest.raises(UnknownTable):
        cat["nope"]


def test_bad_schemas():
    with pytest.raises(SchemaError):
        TableSchema("t", 0, ("a",))
    with pytest.raises(SchemaError):
        TableSchema("t", 1, ("a", "a"))
    with pytest.raises(SchemaError):
        TableSchema("not a name", 1, ())


def test_frozen_catalog_rejects_tables():
    cat = kv_catalog()
    cat.frozen = True
    with pytest.raises(SchemaError):
        cat.define_table(TableSchema("late", 1, ()))


def test_key_normalization():
    schema = TableSchema("t", 2, ())
    assert schema.normalize_key([1, 2]) == (1, 2)
    with pytest.raises(SchemaError):
        schema.normalize_key((1,))
    with pytest.raises(SchemaError):
        schema.normalize_key((1, True))
    with pytest.raises(SchemaError):
        schema.normalize_key((1, "2"))


def test_loaded_district_is_local_to_its_warehouse():
    dep = deploy("v2", TpccScale(warehouses=2, districts=2, items=10, customers=3))
    on_1 = ctx_for(dep.cluster.stores[1], num_partitions=2)
    rec = on_1.get("district", 1, 1)
    assert rec["next_o_id"] == 1
    # district (0, 1) lives on partition 0; from partition 1 it is simply absent
    assert on_1.get("district", 0, 1) is None
    assert sorted(dep.cluster.stores[1].rows("district")) == [(1, 1), (1, 2)]


def test_read_your_writes(store):
    ctx = ctx_for(store)
    ctx.add("kv", (1,), {"v": 5})
    assert ctx.get("kv", 1)["v"] == 5
    ctx.update("kv", (1,), {"v": 6})
    assert ctx.get("kv", 1)["v"] == 6
    assert store.lookup("kv", (1,)) is None


def test_add_commit_and_abort(store):
    ctx = ctx_for(store)
    ctx.add("kv", (1,), {"v": 1})
    commit(ctx)
    assert store.lookup("kv", (1,)).version == 1
    aborted = ctx_for(store)
    aborted.add("kv", (2,), {"v": 2})
    # an abort is simply never applying the fragment
    assert store.lookup("kv", (2,)) is None
    with pytest.raises(DuplicateKey):
        ctx_for(store).add("kv", (1,), {"v": 9})


def test_add_checks_columns(store):
    with pytest.raises(UnknownColumn):
        ctx_for(store).add("kv", (1,), {"v": 1, "w": 2})
    with pytest.raises(UnknownColumn):
        ctx_for(store).add("kv", (1,), {})


def test_add_duplicate_within_fragment(store):
    ctx = ctx_for(store)
    ctx.add("kv", (1,), {"v": 1})
    with pytest.raises(DuplicateKey):
        ctx.add("kv", (1,), {"v": 2})


def test_update_versions(store):
    ctx = ctx_for(store)
    ctx.add("kv", (1,), {"v": 1})
    commit(ctx)
    for expected in (2, 3):
        ctx = ctx_for(store)
        ctx.update("kv", (1,), {"v": expected})
        commit(ctx)
        assert store.lookup("kv", (1,)).version == expected
    with pytest.raises(RecordNotFound):
        ctx_for(store).update("kv", (7,), {"v": 0})
    with pytest.raises(UnknownColumn):
        ctx_for(store).update("kv", (1,), {"w": 0})


def test_reads_record_versions(store):
    ctx = ctx_for(store)
    ctx.add("kv", (1,), {"v": 1})
    commit(ctx)
    ctx = ctx_for(store)
    ctx.get("kv", 1)
    ctx.get("kv", 2)
    assert ctx.fragment.reads == {("kv", (1,)): 1, ("kv", (2,)): 0}


def test_replicated_writes_need_broadcast(store):
    with pytest.raises(ReplicatedWriteError):
        ctx_for(store).add("ref", (1,), {"v": 1})
    ctx = ctx_for(store, broadcast=True)
    ctx.add("ref", (1,), {"v": 1})
    commit(ctx)
    reader = ctx_for(store)
    assert reader.get("ref", 1)["v"] == 1
    assert reader.fragment.reads == {}


def test_decimals_are_fixed_point(store):
    assert fixed(0.1) == Decimal("0.100000")
    assert fixed(Decimal("1.0000005")) == Decimal("1.000000")
    ctx = ctx_for(store)
    ctx.add("kv", (1,), {"v": 0.25})
    assert ctx.get("kv", 1)["v"] == Decimal("0.250000")
    with pytest.raises(SchemaError):
        ctx.add("kv", (2,), {"v": [1]})


def test_digest_properties(store):
    assert state_digest(store) == EMPTY_DIGEST
    other = PartitionStore(0, store.catalog)
    for s in (store, other):
        ctx = ctx_for(s)
        ctx.add("kv", (2,), {"v": "b"})
        ctx.add("kv", (1,), {"v": "a|b"})
        commit(ctx)
    assert state_digest(store) == state_digest(other)
    ctx = ctx_for(other)
    ctx.update("kv", (1,), {"v": "a"})
    commit(ctx)
    assert state_digest(store) != state_digest(other)


def test_digest_ignores_versions(store):
    other = PartitionStore(0, store.catalog)
    ctx = ctx_for(store)
    ctx.add("kv", (1,), {"v": 1})
    commit(ctx)
    ctx = ctx_for(other)
    ctx.add("kv", (1,), {"v": 0})
    commit(ctx)
    ctx = ctx_for(other)
    ctx.update("kv", (1,), {"v": 1})
    commit(ctx)
    assert store.lookup("kv", (1,)).version != other.lookup("kv", (1,)).version
    assert state_digest(store) == state_digest(other)


def test_same_seed_loads_digest_equal():
    scale = TpccScale(warehouses=2, items=10)
    a, b = deploy("v2", scale, seed=3), deploy("v2", scale, seed=3)
    assert [a.cluster.digest(p) for p in range(2)] == [b.cluster.digest(p) for p in range(2)]


def test_snapshot_is_independent(store):
    ctx = ctx_for(store)
    ctx.add("kv", (1,), {"v": 1})
    commit(ctx)
    snap = store.snapshot()
    ctx = ctx_for(store)
    ctx.update("kv", (1,), {"v": 2})
    commit(ctx)
    assert snap.lookup("kv", (1,))["v"] == 1
    assert storage.state_digest(snap) != storage.state_digest(store)
