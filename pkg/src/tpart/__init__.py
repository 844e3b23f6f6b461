"""Logically partitioned transactional engine on a deterministic simulated cluster."""

from .netsim import Cluster, ClusterConfig, MetricsReport, spawn_cluster
from .occ import HistoryLog, verify_serializability
from .placement import WorkloadProfile, advise_mapping, estimate_cost
from .procmodel import Registry, TransactionContext, UserAbort
from .storage import Catalog, PartitionStore, TableSchema, state_digest

__version__ = "0.1.0"

__all__ = [
    "Catalog", "Cluster", "ClusterConfig", "HistoryLog", "MetricsReport", "PartitionStore",
    "Registry", "TableSchema", "TransactionContext", "UserAbort", "WorkloadProfile",
    "advise_mapping", "estimate_cost", "spawn_cluster", "state_digest",
    "verify_serializability",
]
