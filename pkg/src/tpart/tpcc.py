"""TPC-C new_order on the transactional-partitioning model.

Three deployments of the same transaction:

``v1``
    everything on a single logical partition, helpers called inline;
``v2``
    one logical partition per warehouse, with one blocking
    ``new_order_update_stock`` subtransaction per supplier warehouse;
``v3``
    like v2, but ``item`` and the stock district strings are replicated so
    the supplier subtransactions carry no result and run in parallel.

Warehouses are numbered ``0..W-1`` so the identity mapper sends warehouse
``w`` to logical partition ``w``; districts, customers and items start at 1.
"""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Sequence

from .netsim import Cluster, ClusterConfig, spawn_cluster
from .procmodel import Registry, UserAbort
from .storage import Catalog, PartitionStore, TableSchema, fixed

VARIANTS = ("v1", "v2", "v3")
MAX_ORDER_LINES = 15
NEW_ORDER_MIX_SHARE = 0.43  # share of the full TPC-C mix; the generator runs new_order only

# tables compared across variants
CORE_TABLES = ("warehouse", "district", "customer", "stock", "new_order", "oorder", "order_line")


@dataclass(frozen=True)
class TpccScale:
    warehouses: int = 4
    districts: int = 2
    items: int = 100
    customers: int = 10

    def __post_init__(self):
        for name in ("warehouses", "districts", "items", "customers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class OrderItem:
    item_id: int
    supplier_w_id: int
    qty: int


@dataclass(frozen=True)
class NewOrderRequest:
    w_id: int
    d_id: int
    c_id: int
    items: tuple[OrderItem, ...]

    def to_args(self) -> list:
        return [self.w_id, self.d_id, self.c_id,
                [[it.item_id, it.supplier_w_id, it.qty] for it in self.items]]

    @classmethod
    def from_args(cls, args: Sequence) -> "NewOrderRequest":
        w_id, d_id, c_id, items = args
        return cls(w_id, d_id, c_id, tuple(OrderItem(*it) for it in items))

    def suppliers(self) -> list[int]:
        return list(dict.fromkeys(it.supplier_w_id for it in self.items))


# -- schema and deterministic initial data -----------------------------------------

def build_catalog(scale: TpccScale, variant: str) -> Catalog:
    dist_cols = tuple(dist_column(d) for d in range(1, scale.districts + 1))
    catalog = Catalog()
    for schema in (
        TableSchema("warehouse", 1, ("name", "tax")),
        TableSchema("district", 2, ("name", "tax", "next_o_id")),
        TableSchema("customer", 3, ("last", "discount")),
        TableSchema("item", 1, ("name", "price"), replicated=True),
        TableSchema("stock", 2, ("quantity", "ytd", "order_cnt", "remote_cnt") + dist_cols),
        TableSchema("new_order", 3, ()),
        TableSchema("oorder", 3, ("c_id", "ol_cnt", "all_local")),
        TableSchema("order_line", 4,
                    ("i_id", "supply_w_id", "quantity", "amount", "dist_info")),
    ):
        catalog.define_table(schema)
    if variant == "v3":
        catalog.define_table(TableSchema("stock_dist_info", 3, ("dist_info",), replicated=True))
    return catalog


def dist_column(d_id: int) -> str:
    return f"dist_{d_id:02d}"


def dist_info(w_id: int, item_id: int, d_id: int) -> str:
    return f"S-{w_id}-{item_id}-{d_id}"


def _rng(seed, *parts) -> random.Random:
    return random.Random(":".join(map(str, ("tpcc", seed) + parts)))


def item_price(seed: int, item_id: int) -> Decimal:
    return fixed(Decimal(_rng(seed, "item", item_id).randint(100, 10000)) / 100)


def initial_stock_quantity(seed: int, w_id: int, item_id: int) -> int:
    return _rng(seed, "stock", w_id, item_id).randint(10, 100)


def new_stock_quantity(quantity: int, ordered: int) -> int:
    """TPC-C stock rule: decrement, refilling by 91 when it would drop below 10."""
    left = quantity - ordered
    return left if left >= 10 else left + 91


# -- loaders (initialization transactions) -------------------------------------------

def load_warehouse(ctx, w_id, seed, districts, customers, items):
    rng = _rng(seed, "warehouse", w_id)
    ctx.add("warehouse", (w_id,), {"name": f"W{w_id}",
                                   "tax": fixed(Decimal(rng.randint(0, 2000)) / 10000)})
    for d in range(1, districts + 1):
        ctx.add("district", (w_id, d), {"name": f"D{w_id}-{d}",
                                        "tax": fixed(Decimal(rng.randint(0, 2000)) / 10000),
                                        "next_o_id": 1})
        for c in range(1, customers + 1):
            ctx.add("customer", (w_id, d, c), {
                "last": f"C{w_id}-{d}-{c}",
                "discount": fixed(Decimal(rng.randint(0, 5000)) / 10000)})
    for i in range(1, items + 1):
        row = {"quantity": initial_stock_quantity(seed, w_id, i), "ytd": 0,
               "order_cnt": 0, "remote_cnt": 0}
        for d in range(1, districts + 1):
            row[dist_column(d)] = dist_info(w_id, i, d)
        ctx.add("stock", (i, w_id), row)


def load_items(ctx, seed, items):
    for i in range(1, items + 1):
        ctx.add("item", (i,), {"name": f"item-{i}", "price": item_price(seed, i)})


def load_stock_dist_info(ctx, warehouses, districts, items):
    for w in range(warehouses):
        for i in range(1, items + 1):
            for d in range(1, districts + 1):
                ctx.add("stock_dist_info", (i, w, d), {"dist_info": dist_info(w, i, d)})


# -- helpers --------------------------------------------------------------------------

def check_request(scale: TpccScale, w_id, d_id, c_id, items) -> None:
    if not (0 <= w_id < scale.warehouses and 1 <= d_id <= scale.districts
            and 1 <= c_id <= scale.customers):
        raise UserAbort(f"bad ids w={w_id} d={d_id} c={c_id}")
    if not 1 <= len(items) <= MAX_ORDER_LINES:
        raise UserAbort(f"order has {len(items)} lines")
    for item_id, supplier, qty in items:
        if qty < 1 or not 0 <= supplier < scale.warehouses:
            raise UserAbort(f"bad order line {[item_id, supplier, qty]}")


def gen_order(ctx, w_id, d_id, c_id, items):
    """Read warehouse/district/customer, allocate the order id and insert the order."""
    wh = ctx.get("warehouse", w_id)
    dist = ctx.get("district", w_id, d_id)
    cust = ctx.get("customer", w_id, d_id, c_id)
    if wh is None or dist is None or cust is None:
        raise UserAbort(f"unknown warehouse/district/customer {w_id}/{d_id}/{c_id}")
    o_id = dist["next_o_id"]
    ctx.add("new_order", (w_id, d_id, o_id), {})
    ctx.update("district", (w_id, d_id), {"next_o_id": o_id + 1})
    all_local = int(all(s == w_id for _, s, _ in items))
    ctx.add("oorder", (w_id, d_id, o_id),
            {"c_id": c_id, "ol_cnt": len(items), "all_local": all_local})
    return wh, dist, cust


def get_amount(ctx, item_id, qty) -> Decimal:
    item = ctx.get("item", item_id)
    if item is None:
        raise UserAbort(f"unknown item {item_id}")
    return item["price"] * qty


def update_stock(ctx, item_id, supplier, qty, w_id):
    stock = ctx.get("stock", item_id, supplier)
    if stock is None:
        raise UserAbort(f"no stock for item {item_id} at warehouse {supplier}")
    ctx.update("stock", (item_id, supplier), {
        "quantity": new_stock_quantity(stock["quantity"], qty),
        "ytd": stock["ytd"] + qty,
        "order_cnt": stock["order_cnt"] + 1,
        "remote_cnt": stock["remote_cnt"] + (supplier != w_id),
    })
    return stock


def get_dist_info_stock(ctx, item_id, supplier, d_id, replicated=False) -> str:
    if replicated:
        row = ctx.get("stock_dist_info", item_id, supplier, d_id)
        if row is None:
            raise UserAbort(f"no stock district info for {item_id}/{supplier}/{d_id}")
        return row["dist_info"]
    stock = ctx.get("stock", item_id, supplier)
    if stock is None:
        raise UserAbort(f"no stock for item {item_id} at warehouse {supplier}")
    return stock[dist_column(d_id)]


def add_order_line(ctx, w_id, d_id, o_id, number, item_id, supplier, qty, amount, info):
    ctx.add("order_line", (w_id, d_id, o_id, number), {
        "i_id": item_id, "supply_w_id": supplier, "quantity": qty,
        "amount": amount, "dist_info": info})


def total_pay(wh, dist, cust, total) -> Decimal:
    return fixed((1 + wh["tax"] + dist["tax"]) * total * (1 - cust["discount"]))


def group_by_supplier(items) -> list[tuple[int, list]]:
    """Order lines per supplier warehouse, in order of first appearance."""
    groups: dict[int, list] = {}
    for number, (item_id, supplier, qty) in enumerate(items, 1):
        groups.setdefault(supplier, []).append([number, item_id, supplier, qty])
    return list(groups.items())


# -- the three variants ------------------------------------------------------------------

def make_new_order_v1(scale: TpccScale):
    def new_order(ctx, w_id, d_id, c_id, items):
        check_request(scale, w_id, d_id, c_id, items)
        wh, dist, cust = gen_order(ctx, w_id, d_id, c_id, items)
        o_id = dist["next_o_id"]
        total = Decimal(0)
        for number, (item_id, supplier, qty) in enumerate(items, 1):
            amount = get_amount(ctx, item_id, qty)
            total += amount
            info = get_dist_info_stock(ctx, item_id, supplier, d_id)
            update_stock(ctx, item_id, supplier, qty, w_id)
            add_order_line(ctx, w_id, d_id, o_id, number, item_id, supplier, qty, amount, info)
        return total_pay(wh, dist, cust, total)
    return new_order


def new_order_update_stock(ctx, w_id, d_id, subset):
    """Per supplier: amounts, district strings and stock updates for its order lines."""
    result = []
    for number, item_id, supplier, qty in subset:
        amount = get_amount(ctx, item_id, qty)
        info = get_dist_info_stock(ctx, item_id, supplier, d_id)
        update_stock(ctx, item_id, supplier, qty, w_id)
        result.append([number, info, amount])
    return result


def make_new_order_v2(scale: TpccScale):
    def new_order(ctx, w_id, d_id, c_id, items):
        check_request(scale, w_id, d_id, c_id, items)
        wh, dist, cust = gen_order(ctx, w_id, d_id, c_id, items)
        o_id = dist["next_o_id"]
        results = []
        for supplier, subset in group_by_supplier(items):
            results.append((yield ctx.exec_sub("new_order_update_stock",
                                               [w_id, d_id, subset], supplier)))
        total = Decimal(0)
        for result in results:
            for number, info, amount in result:
                item_id, supplier, qty = items[number - 1]
                total += amount
                add_order_line(ctx, w_id, d_id, o_id, number, item_id, supplier, qty,
                               amount, info)
        return total_pay(wh, dist, cust, total)
    return new_order


def new_order_update_stock_v3(ctx, w_id, d_id, subset):
    # amounts and district strings are recomputed by the caller from replicas
    for number, item_id, supplier, qty in subset:
        update_stock(ctx, item_id, supplier, qty, w_id)
    return None


def make_new_order_v3(scale: TpccScale):
    def new_order(ctx, w_id, d_id, c_id, items):
        check_request(scale, w_id, d_id, c_id, items)
        wh, dist, cust = gen_order(ctx, w_id, d_id, c_id, items)
        o_id = dist["next_o_id"]
        groups = group_by_supplier(items)
        yield ctx.parallel_exec("new_order_update_stock",
                                [[w_id, d_id, subset] for _, subset in groups],
                                [supplier for supplier, _ in groups])
        total = Decimal(0)
        for number, (item_id, supplier, qty) in enumerate(items, 1):
            amount = get_amount(ctx, item_id, qty)
            total += amount
            info = get_dist_info_stock(ctx, item_id, supplier, d_id, replicated=True)
            add_order_line(ctx, w_id, d_id, o_id, number, item_id, supplier, qty, amount, info)
        return total_pay(wh, dist, cust, total)
    return new_order


def build_registry(variant: str, scale: TpccScale) -> Registry:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    reg = Registry()
    if variant == "v1":
        reg.register_mapper("map", lambda w_id, *_: 0)
    else:
        reg.register_mapper("map", lambda w_id, *_: w_id)
    reg.register_mapper("anywhere", lambda *_: 0)
    reg.register_procedure("load_warehouse", load_warehouse, "map")
    reg.register_procedure("load_items", load_items, "anywhere")
    if variant == "v1":
        reg.register_procedure("new_order", make_new_order_v1(scale), "map")
    elif variant == "v2":
        reg.register_procedure("new_order", make_new_order_v2(scale), "map")
        reg.register_procedure("new_order_update_stock", new_order_update_stock, "map")
    else:
        reg.register_procedure("load_stock_dist_info", load_stock_dist_info, "anywhere")
        reg.register_procedure("new_order", make_new_order_v3(scale), "map")
        reg.register_procedure("new_order_update_stock", new_order_update_stock_v3, "map")
    return reg


def num_logical(variant: str, scale: TpccScale) -> int:
    return 1 if variant == "v1" else scale.warehouses


# -- deployment ------------------------------------------------------------------------------

class LoadError(RuntimeError):
    pass


@dataclass
class TpccDeployment:
    variant: str
    scale: TpccScale
    seed: int
    cluster: Cluster
    initial: list[PartitionStore] = field(default_factory=list)

    @property
    def registry(self) -> Registry:
        return self.cluster.registry


def load_initial(cluster: Cluster, variant: str, scale: TpccScale, seed: int) -> None:
    """Populate an empty cluster with initialization transactions."""
    if any(rows for store in cluster.stores for rows in store.tables.values()):
        raise LoadError("database is not empty")
    tickets = [cluster.broadcast("load_items", [seed, scale.items])]
    if variant == "v3":
        tickets.append(cluster.broadcast(
            "load_stock_dist_info", [scale.warehouses, scale.districts, scale.items]))
    for w in range(scale.warehouses):
        tickets.append(cluster.submit(
            "load_warehouse", [w, seed, scale.districts, scale.customers, scale.items]))
    cluster.run_until_quiescent()
    failed = [t for t in tickets if not t.committed]
    if failed:
        raise LoadError(f"{len(failed)} loader transactions aborted: {failed[0].error}")
    cluster.reset_epoch()


def deploy(variant: str, scale: TpccScale | None = None, seed: int = 0, *,
           num_physical: int | None = None, mapping=None, **config) -> TpccDeployment:
    """Build catalog and registry for ``variant``, spawn a cluster and load it."""
    scale = scale or TpccScale()
    n = num_logical(variant, scale)
    if num_physical is None:
        num_physical = n if mapping is None else max(mapping) + 1
    cfg = ClusterConfig(num_logical=n, num_physical=num_physical, mapping=mapping,
                        seed=seed, **config)
    cluster = spawn_cluster(cfg, build_registry(variant, scale), build_catalog(scale, variant))
    load_initial(cluster, variant, scale, seed)
    return TpccDeployment(variant, scale, seed, cluster, cluster.snapshot())


# -- consistency audit ----------------------------------------------------------------------

@dataclass
class ConsistencyReport:
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def _union(stores: Sequence[PartitionStore], table: str) -> dict:
    rows = {}
    for store in stores:
        rows.update(store.rows(table))
    return rows


def check_consistency(stores: Sequence[PartitionStore], scale: TpccScale, seed: int,
                      committed_per_district: dict[tuple[int, int], int] | None = None
                      ) -> ConsistencyReport:
    """Audit the invariants new_order maintains; returns every violation found."""
    v: list[str] = []
    districts = _union(stores, "district")
    orders = _union(stores, "oorder")
    new_orders = _union(stores, "new_order")
    lines = _union(stores, "order_line")
    stock = _union(stores, "stock")

    order_ids = defaultdict(set)
    for (w, d, o) in orders:
        order_ids[(w, d)].add(o)
    new_order_ids = defaultdict(set)
    for (w, d, o) in new_orders:
        new_order_ids[(w, d)].add(o)
    line_counts = defaultdict(int)
    for (w, d, o, _n) in lines:
        line_counts[(w, d, o)] += 1

    for w in range(scale.warehouses):
        for d in range(1, scale.districts + 1):
            rec = districts.get((w, d))
            if rec is None:
                v.append(f"district ({w},{d}) missing")
                continue
            n = rec["next_o_id"] - 1
            expected = set(range(1, n + 1))
            if order_ids[(w, d)] != expected:
                v.append(f"district ({w},{d}): next_o_id-1={n} but oorder ids "
                         f"{sorted(order_ids[(w, d)])[:5]}... ({len(order_ids[(w, d)])} rows)")
            if new_order_ids[(w, d)] != expected:
                v.append(f"district ({w},{d}): next_o_id-1={n} but "
                         f"{len(new_order_ids[(w, d)])} new_order rows")
            if committed_per_district is not None and committed_per_district.get((w, d), 0) != n:
                v.append(f"district ({w},{d}): next_o_id-1={n} but "
                         f"{committed_per_district.get((w, d), 0)} committed new_orders")

    for key, rec in orders.items():
        if line_counts[key] != rec["ol_cnt"]:
            v.append(f"order {key}: {line_counts[key]} order lines, expected {rec['ol_cnt']}")

    ordered_qty = defaultdict(int)
    ordered_cnt = defaultdict(int)
    for rec in lines.values():
        ordered_qty[(rec["i_id"], rec["supply_w_id"])] += rec["quantity"]
        ordered_cnt[(rec["i_id"], rec["supply_w_id"])] += 1
    for (i, w), rec in stock.items():
        qty = ordered_qty[(i, w)]
        if rec["ytd"] != qty or rec["order_cnt"] != ordered_cnt[(i, w)]:
            v.append(f"stock ({i},{w}): ytd/order_cnt {rec['ytd']}/{rec['order_cnt']} "
                     f"vs ordered {qty}/{ordered_cnt[(i, w)]}")
        refill = rec["quantity"] - initial_stock_quantity(seed, w, i) + qty
        if refill < 0 or refill % 91:
            v.append(f"stock ({i},{w}): quantity {rec['quantity']} does not reconcile "
                     f"with {qty} ordered units")
    return ConsistencyReport(v)
