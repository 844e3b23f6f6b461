import pytest

from tpart.netsim import ClusterConfig, spawn_cluster
from tpart.procmodel import Registry, TransactionContext
from tpart.storage import Catalog, Fragment, PartitionStore, TableSchema


def kv_catalog():
    cat = Catalog()
    cat.define_table(TableSchema("kv", 1, ("v",)))
    cat.define_table(TableSchema("ref", 1, ("v",), replicated=True))
    return cat


def ctx_for(store, registry=None, num_partitions=1, broadcast=False, root_id=1):
    return TransactionContext(root_id, store.partition_id, store, Fragment(),
                              registry or Registry(), num_partitions, broadcast=broadcast)


def commit(ctx):
    ctx.store.apply(ctx.fragment)


# --- a tiny key/value workload used by engine-level tests -----------------------------

def put(ctx, k, v):
    if ctx.get("kv", k) is None:
        ctx.add("kv", (k,), {"v": v})
    else:
        ctx.update("kv", (k,), {"v": v})
    return v


def put_at(ctx, p, k, v):
    return put(ctx, k, v)


def incr(ctx, k):
    from tpart.procmodel import UserAbort
    rec = ctx.get("kv", k)
    if rec is None:
        raise UserAbort(f"no key {k} on partition {ctx.partition}")
    ctx.update("kv", (k,), {"v": rec["v"] + 1})
    return rec["v"] + 1


def read(ctx, k):
    rec = ctx.get("kv", k)
    return None if rec is None else rec["v"]


def fail(ctx, k):
    ctx.add("kv", (k,), {"v": 0})
    raise ValueError("not an aborting error")


def boom(ctx, k):
    from tpart.procmodel import UserAbort
    ctx.add("kv", (k,), {"v": -1})
    raise UserAbort("boom")


def incr_remote(ctx, k, targets):
    """Increment k locally and on each target partition in sequence."""
    out = [incr(ctx, k)]
    for p in targets:
        out.append((yield ctx.exec_sub("incr_here", [k], p)))
    return out


def incr_parallel(ctx, k, targets):
    out = yield ctx.parallel_exec("incr_here", [[k]] * len(targets), targets)
    return out


def kv_registry():
    reg = Registry()
    reg.register_mapper("by_key", lambda k, *_: k % 4)
    reg.register_mapper("at", lambda p, *_: p)
    reg.register_procedure("put_at", put_at, "at")
    reg.register_procedure("put", put, "by_key")
    reg.register_procedure("incr", incr, "by_key")
    reg.register_procedure("read", read, "by_key")
    reg.register_procedure("fail", fail, "by_key")
    reg.register_procedure("boom", boom, "by_key")
    reg.register_procedure("incr_here", incr, "by_key")
    reg.register_procedure("incr_remote", incr_remote, "by_key")
    reg.register_procedure("incr_parallel", incr_parallel, "by_key")
    return reg


@pytest.fixture
def kv_cluster():
    def make(num_logical=4, num_physical=4, **kw):
        cfg = ClusterConfig(num_logical=num_logical, num_physical=num_physical, **kw)
        return spawn_cluster(cfg, kv_registry(), kv_catalog())
    return make


@pytest.fixture
def store():
    return PartitionStore(0, kv_catalog())


# --- acceptance summary ------------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
