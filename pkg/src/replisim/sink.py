"""Replication targets: a block-producing chain and eventually-consistent storage nodes."""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .domain import SECOND, SeededRng, Signal, SimClock
from .store.disk import AssetHandle

MAX_BATCH = 10
ASSET_KINDS = ("media", "thumbnail")


class SinkError(Exception):
    pass


class SinkUnreachable(SinkError):
    pass


class NonceCollision(SinkError):
    pass


class NonceGap(SinkError):
    pass


class BatchRejected(SinkError):
    pass


class NotYetVisible(SinkError):
    pass


class NodeDown(SinkError):
    pass


@dataclass(frozen=True)
class Extrinsic:
    video_id: str
    channel_id: str


@dataclass
class BatchReceipt:
    batch_id: int
    account: str
    submitted_at: int
    finalizes_at: int
    nonces: tuple[int, ...]
    extrinsics: tuple[Extrinsic, ...]
    done: Signal
    object_ids: dict[str, int] = field(default_factory=dict)
    finalized: bool = False


@dataclass(frozen=True)
class ObjectInfo:
    object_id: int
    video_id: str
    batch_id: int
    finalized_at: int


class ChainSim:
    """Append-only object registry; batches finalize atomically at block boundaries."""

    def __init__(self, clock: SimClock, block_interval_s: int = 6):
        self.clock = clock
        self.block_interval = block_interval_s * SECOND
        self.objects: dict[str, list[int]] = {}
        self.object_info: dict[int, ObjectInfo] = {}
        self.channels: set[int] = set()
        self.members: dict[str, int] = {}
        self.pending: dict[int, BatchReceipt] = {}
        self.receipts: list[BatchReceipt] = []
        self.reachable = True
        self.reject_batches = 0
        self._used_nonces: dict[str, int] = {}
        self._reserved: dict[str, int] = {}
        self._object_ids = itertools.count(1)
        self._batch_ids = itertools.count(1)
        self._member_ids = itertools.count(1)

    @property
    def height(self) -> int:
        return self.clock.now // self.block_interval

    def next_boundary(self, t: int) -> int:
        return (t // self.block_interval + 1) * self.block_interval

    def _check_reachable(self) -> None:
        if not self.reachable:
            raise SinkUnreachable("chain RPC unreachable")

    # nonces -----------------------------------------------------------------

    def next_nonce(self, account: str) -> int:
        """Next free nonce, counting batches still waiting for a block."""
        self._check_reachable()
        return self._reserved.get(account, 0)

    def has_pending(self, account: Optional[str] = None) -> bool:
        return any(account is None or r.account == account for r in self.pending.values())

    # submission ---------------------------------------------------------------

    def submit_batch(self, account: str, extrinsics: list[Extrinsic], nonces: list[int]) -> BatchReceipt:
        self._check_reachable()
        if not extrinsics:
            raise ValueError("empty batch")
        if len(extrinsics) > MAX_BATCH:
            raise ValueError(f"batch of {len(extrinsics)} exceeds {MAX_BATCH}")
        if len(nonces) != len(extrinsics):
            raise ValueError("one nonce per extrinsic required")
        expected = self._reserved.get(account, 0)
        if len(set(nonces)) != len(nonces) or min(nonces) < expected:
            raise NonceCollision(f"{account}: nonces {nonces} reuse values below {expected}")
        if list(nonces) != list(range(nonces[0], nonces[0] + len(nonces))) or nonces[0] != expected:
            raise NonceGap(f"{account}: expected consecutive nonces from {expected}, got {nonces}")
        if self.reject_batches > 0:
            self.reject_batches -= 1
            raise BatchRejected("batch dispatch failed")
        self._reserved[account] = nonces[-1] + 1
        now = self.clock.now
        receipt = BatchReceipt(
            batch_id=next(self._batch_ids), account=account, submitted_at=now,
            finalizes_at=self.next_boundary(now), nonces=tuple(nonces),
            extrinsics=tuple(extrinsics), done=Signal(self.clock),
        )
        self.pending[receipt.batch_id] = receipt
        self.clock.schedule_at(receipt.finalizes_at, lambda: self._finalize(receipt),
                               owner="chain", label=f"finalize batch {receipt.batch_id}")
        return receipt

    def _finalize(self, receipt: BatchReceipt) -> None:
        for ext in receipt.extrinsics:
            oid = next(self._object_ids)
            self.objects.setdefault(ext.video_id, []).append(oid)
            self.object_info[oid] = ObjectInfo(oid, ext.video_id, receipt.batch_id, self.clock.now)
            receipt.object_ids[ext.video_id] = oid
        self._used_nonces[receipt.account] = receipt.nonces[-1] + 1
        receipt.finalized = True
        del self.pending[receipt.batch_id]
        self.receipts.append(receipt)
        receipt.done.fire(receipt)

    # queries ------------------------------------------------------------------

    def query_video(self, video_id: str) -> list[int]:
        self._check_reachable()
        return list(self.objects.get(video_id, []))

    def create_membership(self, handle: str) -> int:
        self._check_reachable()
        if handle not in self.members:
            self.members[handle] = next(self._member_ids)
        return self.members[handle]

    def total_objects(self) -> int:
        return sum(len(v) for v in self.objects.values())

    def duplicate_count(self) -> int:
        return self.total_objects() - sum(1 for v in self.objects.values() if v)

    def duplicated_videos(self) -> dict[str, int]:
        return {vid: len(oids) for vid, oids in self.objects.items() if len(oids) > 1}


class StorageNodeSim:
    def __init__(self, node_id: str, delay_ms: Callable[[int], int], active: bool = True):
        self.node_id = node_id
        self.listed_active = active
        self.up = True
        self._delay_ms = delay_ms

    def visibility_delay(self, object_id: int) -> int:
        return self._delay_ms(object_id)


class StorageNetwork:
    """Storage nodes plus the query view of which assets were accepted."""

    def __init__(self, clock: SimClock, chain: ChainSim, nodes: list[StorageNodeSim]):
        self.clock = clock
        self.chain = chain
        self.nodes = {n.node_id: n for n in nodes}
        self.accepted: dict[int, set[str]] = {}
        self.query_reachable = True
        self.uploads_attempted = 0

    @classmethod
    def uniform(cls, clock: SimClock, chain: ChainSim, rng: SeededRng, count: int = 3,
                max_delay_s: float = 30.0,
                schedule: Optional[dict[int, float]] = None) -> "StorageNetwork":
        """Nodes whose visibility delay is uniform in [0, max_delay_s] per object.

        ``schedule`` pins the delay (seconds) for specific object ids.
        """
        def make(node_id: str) -> StorageNodeSim:
            def delay(object_id: int) -> int:
                if schedule and object_id in schedule:
                    return int(schedule[object_id] * SECOND)
                return int(rng.fresh("visibility", node_id, object_id).uniform(0, max_delay_s) * SECOND)
            return StorageNodeSim(node_id, delay)
        return cls(clock, chain, [make(f"node-{i}") for i in range(count)])

    def active_nodes(self) -> list[StorageNodeSim]:
        return [self.nodes[k] for k in sorted(self.nodes) if self.nodes[k].listed_active]

    def choose_node(self, rng: random.Random) -> StorageNodeSim:
        nodes = self.active_nodes()
        if not nodes:
            raise NodeDown("no active storage nodes")
        return rng.choice(nodes)

    def upload_asset(self, node: StorageNodeSim, object_id: int, kind: str,
                     asset: AssetHandle) -> str:
        """Offer one asset; raises NotYetVisible or NodeDown. ``asset`` is streamed, not read."""
        if kind not in ASSET_KINDS:
            raise ValueError(kind)
        self.uploads_attempted += 1
        if not node.up or not node.listed_active:
            raise NodeDown(node.node_id)
        info = self.chain.object_info.get(object_id)
        if info is None or self.clock.now < info.finalized_at + node.visibility_delay(object_id):
            raise NotYetVisible(f"object {object_id} not yet visible on {node.node_id}")
        self.accepted.setdefault(object_id, set()).add(kind)
        return "accepted"

    def is_accepted(self, object_id: int) -> tuple[bool, bool]:
        if not self.query_reachable:
            raise SinkUnreachable("query node unreachable")
        kinds = self.accepted.get(object_id, set())
        return ("media" in kinds, "thumbnail" in kinds)


@dataclass
class Sink:
    chain: ChainSim
    storage: StorageNetwork

    def set_reachable(self, reachable: bool) -> None:
        self.chain.reachable = reachable
        self.storage.query_reachable = reachable


def query_objects(sink: Sink, *, video_id: Optional[str] = None,
                  object_id: Optional[int] = None) -> dict:
    """Read-only existence/acceptance report used by reconciliation."""
    if video_id is not None:
        oids = sink.chain.query_video(video_id)
        return {"video_id": video_id, "exists": bool(oids), "object_ids": oids}
    if object_id is not None:
        media, thumb = sink.storage.is_accepted(object_id)
        return {"object_id": object_id, "is_accepted": (media, thumb)}
    raise ValueError("video_id or object_id required")
