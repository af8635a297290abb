"""Operator-run queue cleanup: categorize queued videos, back up, then delete/mark."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Protocol

from ..domain import MAX_VIDEO_DURATION_S, MAX_VIDEO_SIZE_BYTES, VideoRecord, VideoState, transition
from .durable import DurableStore

METADATA_BATCH = 50
DELETE_BATCH = 25


class CleanupAborted(Exception):
    pass


class MetadataSource(Protocol):
    def video_metadata(self, video_ids: list[str]) -> dict[str, Any]: ...


class Category(str, Enum):
    MISSING = "missing"
    PRIVATE = "private_or_members_only"
    AGE_RESTRICTED = "age_restricted"
    LIVESTREAM = "livestream"
    EXCEEDS_DURATION = "exceeds_duration"
    EXCEEDS_SIZE = "exceeds_size"
    REGION_RESTRICTED = "region_restricted"
    MISSING_METADATA = "missing_metadata"
    VALID = "valid"


def categorize(meta: Any) -> tuple[Category, Optional[VideoState]]:
    """Map fetched metadata to a cleanup category and the state to mark, if any."""
    if meta is None or getattr(meta, "deleted", False):
        return Category.MISSING, None
    if meta.private:
        return Category.PRIVATE, VideoState.PRIVATE
    if meta.members_only:
        return Category.PRIVATE, VideoState.MEMBERS_ONLY
    if meta.age_restricted:
        return Category.AGE_RESTRICTED, VideoState.AGE_RESTRICTED
    if meta.live:
        return Category.LIVESTREAM, VideoState.LIVE_OFFLINE
    if not meta.metadata_complete:
        return Category.MISSING_METADATA, None
    if meta.duration_s > MAX_VIDEO_DURATION_S:
        return Category.EXCEEDS_DURATION, VideoState.SKIPPED
    if meta.size_bytes > MAX_VIDEO_SIZE_BYTES:
        return Category.EXCEEDS_SIZE, VideoState.SKIPPED
    if meta.region_restricted:
        return Category.REGION_RESTRICTED, VideoState.SKIPPED
    return Category.VALID, None


@dataclass
class CleanupReport:
    examined: int = 0
    counts: dict[str, int] = field(default_factory=dict)
    deleted: list[str] = field(default_factory=list)
    marked: dict[str, str] = field(default_factory=dict)
    requeued: list[str] = field(default_factory=list)
    backup_path: Optional[str] = None
    metadata_batches: int = 0
    delete_batches: int = 0

    def to_dict(self) -> dict:
        return {
            "examined": self.examined, "counts": dict(sorted(self.counts.items())),
            "deleted": len(self.deleted), "marked": len(self.marked),
            "requeued": len(self.requeued), "backup_path": self.backup_path,
            "metadata_batches": self.metadata_batches, "delete_batches": self.delete_batches,
        }


def queue_cleanup(store: DurableStore, platform: MetadataSource, backup_dir: str,
                  now: int) -> CleanupReport:
    """Clean every queued (New) video.

    The JSON backup of the records to be deleted is written before any store
    mutation; if it cannot be written nothing is changed.
    """
    queued = store.videos_in_state(VideoState.NEW)
    report = CleanupReport(examined=len(queued))
    plan: list[tuple[VideoRecord, Category, Optional[VideoState]]] = []
    for start in range(0, len(queued), METADATA_BATCH):
        batch = queued[start:start + METADATA_BATCH]
        metas = platform.video_metadata([v.id for v in batch])
        report.metadata_batches += 1
        for video in batch:
            category, target = categorize(metas.get(video.id))
            report.counts[category.value] = report.counts.get(category.value, 0) + 1
            plan.append((video, category, target))

    doomed = [v for v, c, _ in plan if c is Category.MISSING]
    path = os.path.join(backup_dir, f"queue-cleanup-{now:013d}.json")
    try:
        os.makedirs(backup_dir, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump([v.to_dict() for v in doomed], fh, indent=1, sort_keys=True)
    except OSError as exc:
        raise CleanupAborted(f"backup write failed: {exc}") from exc
    report.backup_path = path

    for start in range(0, len(doomed), DELETE_BATCH):
        for video in doomed[start:start + DELETE_BATCH]:
            store.delete_video(video.channel_id, video.id)
            report.deleted.append(video.id)
        report.delete_batches += 1
    for video, category, target in plan:
        if target is not None:
            store.save_video(transition(video, target, now=now))
            report.marked[video.id] = target.value
        elif category is Category.MISSING_METADATA:
            report.requeued.append(video.id)
    return report
