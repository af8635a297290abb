"""Pre-commit WAL step and the four-phase startup reconciliation."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Generator, Optional

from ..domain import SECOND, SimClock, VideoRecord, VideoState, force_state, transition
from .disk import DownloadIndex, LocalDisk
from .durable import DurableStore, ThroughputExceeded
from .queue import EphemeralQueueStore

if TYPE_CHECKING:
    from ..sink import Sink


class WalStateError(Exception):
    pass


def wal_begin(store: DurableStore, channel_id: str, video_id: str, now: int) -> VideoRecord:
    """Durably mark a video CreatingVideo before anything is sent to the chain.

    ThroughputExceeded propagates; the caller must not submit if this raises.
    """
    video = store.get_video(channel_id, video_id)
    if video is None:
        raise WalStateError(f"unknown video {video_id}")
    if video.state not in (VideoState.NEW, VideoState.CREATION_FAILED):
        raise WalStateError(f"{video_id} is {video.state.value}, expected New or CreationFailed")
    updated = transition(video, VideoState.CREATING_VIDEO, now=now)
    store.save_video(updated)
    return updated


@dataclass
class ReconcileReport:
    flushed_jobs: int = 0
    assets_found: int = 0
    used_space: int = 0
    creating_to_created: int = 0
    creating_to_new: int = 0
    upload_to_succeeded: int = 0
    upload_to_failed: int = 0
    sink_retries: int = 0
    write_retries: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def resolve_creating(video: VideoRecord, on_chain: list[int], now: int) -> VideoRecord:
    if on_chain:
        return force_state(video, VideoState.VIDEO_CREATED, now=now, reason="reconcile",
                           sink_object_id=on_chain[0])
    return force_state(video, VideoState.NEW, now=now, reason="reconcile")


def resolve_upload(video: VideoRecord, accepted: tuple[bool, bool], now: int) -> VideoRecord:
    if all(accepted):
        out = transition(video, VideoState.UPLOAD_SUCCEEDED, now=now)
    else:
        out = transition(video, VideoState.UPLOAD_FAILED, now=now)
    out.asset_accepted = tuple(accepted)
    return out


def reconcile_sink_states(store: DurableStore, sink: "Sink", now: int,
                          report: ReconcileReport) -> None:
    """Phases 3 and 4. Raises SinkUnreachable before writing anything for a video."""
    for video in store.videos_in_state(VideoState.CREATING_VIDEO):
        resolved = resolve_creating(video, sink.chain.query_video(video.id), now)
        store.save_video(resolved)
        if resolved.state is VideoState.VIDEO_CREATED:
            report.creating_to_created += 1
        else:
            report.creating_to_new += 1
    for video in store.videos_in_state(VideoState.UPLOAD_STARTED):
        resolved = resolve_upload(video, sink.storage.is_accepted(video.sink_object_id), now)
        store.save_video(resolved)
        if resolved.state is VideoState.UPLOAD_SUCCEEDED:
            report.upload_to_succeeded += 1
        else:
            report.upload_to_failed += 1


def startup_reconcile(store: DurableStore, sink: "Sink", disk: LocalDisk, *,
                      queue: EphemeralQueueStore, downloads: DownloadIndex, clock: SimClock,
                      account: Optional[str] = None, retry_base_ms: int = 1 * SECOND,
                      retry_cap_ms: int = 60 * SECOND) -> Generator:
    """Process body: flush, rescan disk, then settle CreatingVideo and UploadStarted.

    While the chain or query node is unreachable it backs off and retries; no
    guess is ever written.
    """
    from ..sink import SinkUnreachable

    report = ReconcileReport()
    report.flushed_jobs = len(queue.jobs)
    queue.flush()
    report.assets_found = downloads.rebuild(disk)
    report.used_space = downloads.used_space

    # a batch submitted by the previous process may still be in the mempool;
    # judge chain state only once it has landed
    while sink.chain.has_pending(account):
        yield sink.chain.next_boundary(clock.now) - clock.now

    delay = retry_base_ms
    while True:
        try:
            reconcile_sink_states(store, sink, clock.now, report)
            return report
        except SinkUnreachable:
            report.sink_retries += 1
        except ThroughputExceeded:
            report.write_retries += 1
        yield delay
        delay = min(retry_cap_ms, delay * 2)
