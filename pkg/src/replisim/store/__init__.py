"""Durable store, lock domains, ephemeral queue, WAL and reconciliation."""
from .cleanup import Category, CleanupAborted, CleanupReport, categorize, queue_cleanup
from .disk import AssetHandle, DownloadIndex, LocalDisk
from .durable import TABLES, BillingMode, DurableStore, ThroughputExceeded, WriteCapacity
from .locks import LockBusy, LockDomain, LockManager, PendingLimitExceeded
from .queue import (STAGE_ORDER, BatchLease, EphemeralQueueStore, FlowJob, JobStatus,
                    LeaseExpired, Stage)
from .reconcile import (ReconcileReport, WalStateError, reconcile_sink_states, resolve_creating,
                        resolve_upload, startup_reconcile, wal_begin)

__all__ = [
    "AssetHandle", "BatchLease", "BillingMode", "Category", "CleanupAborted", "CleanupReport",
    "DownloadIndex", "DurableStore", "EphemeralQueueStore", "FlowJob", "JobStatus", "LeaseExpired",
    "LocalDisk", "LockBusy", "LockDomain", "LockManager", "PendingLimitExceeded", "ReconcileReport",
    "STAGE_ORDER", "Stage", "TABLES", "ThroughputExceeded", "WalStateError", "WriteCapacity",
    "categorize", "queue_cleanup", "reconcile_sink_states", "resolve_creating", "resolve_upload",
    "startup_reconcile", "wal_begin",
]
