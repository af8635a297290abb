"""Four-stage replication pipeline: download, metadata, batched creation, upload.

One :class:`Pipeline` is one process incarnation. Everything it owns (job
queue, locks, download index, proxy pool state) is lost on a crash; the
durable store, the local disk and the sink outlive it.
"""
from __future__ import annotations

import dataclasses
import hashlib
import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Generator, Iterable, Optional

from .domain import (DAY, MAX_VIDEO_DURATION_S, MAX_VIDEO_SIZE_BYTES, MB, MINUTE, SECOND,
                     ChannelRecord, ChannelStatus, SeededRng, Signal, SimClock, TokenBundle,
                     VideoRecord, VideoState, force_state, is_legal, transition)
from .platform_sim import (InvalidGrant, PlatformSim, QuotaExceeded, ScrapeOutcome,
                           ServiceUnavailable, TokenStatus, VideoMeta, VideoUnavailableError,
                           token_lifecycle)
from .proxynet import SPIN_INTERVAL_S, SleepPolicy, pre_download_sleep
from .scheduler import DEFAULT_CONSTANTS, PriorityConstants, compute_priority, inputs_for
from .sink import (ASSET_KINDS, BatchRejected, Extrinsic, NodeDown, NotYetVisible, Sink,
                   SinkUnreachable)
from .store import (BatchLease, DownloadIndex, DurableStore,
                    EphemeralQueueStore, FlowJob, LocalDisk, LockManager, ReconcileReport, Stage,
                    ThroughputExceeded, startup_reconcile, wal_begin)
from .store.cleanup import Category, categorize
from .store.locks import PROXY_DOMAIN

OWNER = "sync"


class TierCapExceeded(Exception):
    pass


class ChannelIneligible(Exception):
    pass


class PostprocessingError(Exception):
    pass


@dataclass(frozen=True)
class StageConfig:
    name: Stage
    concurrency: int
    timeout_s: float
    kind: str = "concurrent"


DEFAULT_STAGES: dict[Stage, StageConfig] = {
    Stage.DOWNLOAD: StageConfig(Stage.DOWNLOAD, 2, 10_800),
    Stage.METADATA: StageConfig(Stage.METADATA, 2, 1_800),
    # batch size 10, paced by the 6 s block
    Stage.CREATION: StageConfig(Stage.CREATION, 10, 6, "batch"),
    # 5 attempts x 6 s
    Stage.UPLOAD: StageConfig(Stage.UPLOAD, 20, 30),
}

RESUMABLE_STATES = (VideoState.NEW, VideoState.CREATION_FAILED, VideoState.VIDEO_CREATED,
                    VideoState.UPLOAD_FAILED)
ADMITTED_STATES = frozenset({VideoState.CREATING_VIDEO, VideoState.VIDEO_CREATED,
                             VideoState.UPLOAD_STARTED, VideoState.UPLOAD_SUCCEEDED,
                             VideoState.UPLOAD_FAILED})
UNAVAILABLE_REASONS = {
    "deleted": VideoState.DELETED,
    "private": VideoState.PRIVATE,
    "members_only": VideoState.MEMBERS_ONLY,
    "age_restricted": VideoState.AGE_RESTRICTED,
    "live": VideoState.LIVE_OFFLINE,
    "region_restricted": VideoState.SKIPPED,
}


@dataclass
class PipelineConfig:
    stages: dict[Stage, StageConfig] = field(default_factory=lambda: dict(DEFAULT_STAGES))
    bandwidth_bps: float = 10 * MB
    metadata_bps: float = 100 * MB
    wal_enabled: bool = True
    swallow_write_errors: bool = False
    sleep: SleepPolicy = SleepPolicy()
    pre_download_checks: bool = True
    download_only: bool = False
    upload_attempts: int = 5
    upload_interval_s: int = 6
    creation_max_blocks: int = 10
    lease_duration_s: int = 60
    lease_renewal_s: int = 30
    spin_interval_s: int = SPIN_INTERVAL_S
    poll_interval_min: float = 1440
    stats_batch: int = 50
    ingest_batch: int = 100
    inter_batch_sleep_ms: int = 100
    account: str = "sync-operator"
    write_retry_base_ms: int = 1 * SECOND
    write_retry_cap_ms: int = 60 * SECOND
    # official-API sync path that uses each channel's stored tokens
    api_path_enabled: bool = False
    opt_out_on_invalid_token: bool = True
    ingest_videos: bool = True
    postprocessing_faults: frozenset = frozenset()
    priority_constants: PriorityConstants = DEFAULT_CONSTANTS
    keep_trace: bool = False

    def stage(self, stage: Stage) -> StageConfig:
        return self.stages[stage]


COUNTER_FIELDS = (
    "polls", "poll_errors", "videos_ingested", "videos_filtered", "tier_cap_rejections",
    "downloads_completed", "download_errors", "bot_challenges", "predownload_rejections",
    "predownload_deferrals",
    "proxy_spins", "metadata_completed", "metadata_failures", "creation_batches",
    "creation_failures", "videos_created", "uploads_succeeded", "uploads_failed",
    "uploads_abandoned", "write_retries", "skipped_created_writes", "skipped_other_writes",
    "token_refreshes", "opt_outs", "api_errors",
)


class PipelineMetrics:
    """Counters that outlive process incarnations (they model an external metrics sink)."""

    def __init__(self) -> None:
        self.counters: dict[str, int] = {k: 0 for k in COUNTER_FIELDS}
        self.stage_totals = {s: {"completed": 0, "failed": 0, "retried": 0} for s in Stage}
        self.errors_by_day: Counter = Counter()
        self.max_active = {s: 0 for s in Stage}
        self.connections = 0
        self.max_footprint = 0
        self.poll_sleep_ms = 0
        self.poll_batches = {"stats": 0, "ingest": 0}
        self.trace: list[tuple] = []
        self.batch_nonces: list[tuple[int, ...]] = []
        self.last_poll_at: Optional[int] = None

    def bump(self, name: str, n: int = 1) -> None:
        self.counters[name] += n

    def error(self, now: int) -> None:
        self.counters["download_errors"] += 1
        self.errors_by_day[now // DAY] += 1


def content_hash(asset_key: str, size: int) -> str:
    return hashlib.blake2b(f"{asset_key}:{size}".encode(), digest_size=32).hexdigest()


def ingest_filter(meta: VideoMeta) -> Optional[VideoState]:
    """The filter edge applied to newly listed videos; None means admit."""
    if meta.deleted:
        return VideoState.DELETED
    if meta.private:
        return VideoState.PRIVATE
    if meta.members_only:
        return VideoState.MEMBERS_ONLY
    if meta.age_restricted:
        return VideoState.AGE_RESTRICTED
    if meta.live:
        return VideoState.LIVE_OFFLINE
    if meta.unlisted or meta.region_restricted:
        return VideoState.SKIPPED
    if meta.duration_s > MAX_VIDEO_DURATION_S or meta.size_bytes > MAX_VIDEO_SIZE_BYTES:
        return VideoState.SKIPPED
    return None


def batch_plan(n_channels: int, stats_batch: int = 50, ingest_batch: int = 100) -> tuple[int, int, int]:
    """(stats batches, ingestion batches, total inter-batch sleeps)."""
    stats = -(-n_channels // stats_batch)
    ingest = -(-n_channels // ingest_batch)
    return stats, ingest, max(0, stats + ingest - 1)


def _chunks(items: list, size: int) -> Iterable[list]:
    for i in range(0, len(items), size):
        yield items[i:i + size]


class Pipeline:
    def __init__(self, *, clock: SimClock, store: DurableStore, disk: LocalDisk,
                 platform: PlatformSim, sink: Sink, pool, config: PipelineConfig,
                 rng: SeededRng, metrics: Optional[PipelineMetrics] = None, incarnation: int = 0):
        self.clock = clock
        self.store = store
        self.disk = disk
        self.platform = platform
        self.sink = sink
        self.pool = pool
        self.config = config
        self.metrics = metrics or PipelineMetrics()
        self.incarnation = incarnation
        self.queue = EphemeralQueueStore()
        self.downloads = DownloadIndex()
        self.locks = LockManager.default(clock, len(pool.endpoints))
        self.reconcile_report: Optional[ReconcileReport] = None
        self.ready = Signal(clock)
        self._wake = {s: Signal(clock) for s in Stage}
        self._poll_wake: Optional[Signal] = None
        self._tickets = itertools.count()
        self._open: Counter = Counter()
        self._rng_bind = rng.stream(f"bind/{incarnation}")
        self._rng_sleep = rng.stream(f"sleep/{incarnation}")
        self._rng_node = rng.stream(f"node/{incarnation}")
        self._rng_tokens = rng.stream(f"tokens/{incarnation}")
        self.sleep_trace: Optional[list] = [] if config.keep_trace else None

    # lifecycle ----------------------------------------------------------------

    def start(self, *, poll: bool = True, reconcile: bool = True) -> None:
        self.clock.spawn(self._boot(poll, reconcile), owner=OWNER, label="boot")

    def _boot(self, poll: bool, reconcile: bool) -> Generator:
        if reconcile:
            self.reconcile_report = yield from startup_reconcile(
                self.store, self.sink, self.disk, queue=self.queue, downloads=self.downloads,
                clock=self.clock, account=self.config.account)
        else:
            self.downloads.rebuild(self.disk)
        for stage in (Stage.DOWNLOAD, Stage.METADATA, Stage.UPLOAD):
            for n in range(self.config.stage(stage).concurrency):
                self.clock.spawn(self._worker(stage), owner=OWNER, label=f"{stage.value}-{n}")
        self.clock.spawn(self._creation_worker(), owner=OWNER, label="creation")
        if poll:
            self.clock.spawn(self._poller(), owner=OWNER, label="poller")
        self.ready.fire(self.reconcile_report)

    def crash(self) -> None:
        """Lose the process: connections drop and every pending step is discarded."""
        for identity, n in sorted(self._open.items()):
            for _ in range(n):
                self.platform.detector.close_connection(identity)
                self.metrics.connections -= 1
        self._open.clear()
        self.clock.drop_owner(OWNER)

    def set_poll_interval(self, minutes: float) -> None:
        self.config.poll_interval_min = minutes
        if self._poll_wake is not None:
            self._poll_wake.fire()

    # queue plumbing -----------------------------------------------------------

    def _notify(self, *stages: Stage) -> None:
        for stage in stages or tuple(Stage):
            sig = self._wake[stage]
            self._wake[stage] = Signal(self.clock)
            sig.fire()

    def _trace(self, job: FlowJob, event: str) -> None:
        if self.config.keep_trace:
            self.metrics.trace.append((self.clock.now, job.seq, job.video_id, job.stage.value, event))

    def _took(self, job: FlowJob) -> None:
        self._trace(job, "start")
        m = self.metrics
        m.max_active[job.stage] = max(m.max_active[job.stage], self.queue.active_count(job.stage))
        footprint = self.queue.active_count(Stage.DOWNLOAD) + self.queue.active_count(Stage.METADATA)
        m.max_footprint = max(m.max_footprint, footprint)

    def _complete(self, job: FlowJob, **result) -> None:
        self._trace(job, "complete")
        self.queue.complete(job, **result)
        self.metrics.stage_totals[job.stage]["completed"] += 1
        self._notify()

    def _fail(self, job: FlowJob, reason: str) -> None:
        for failed in self.queue.fail(job, reason):
            self._trace(failed, "failed")
            self.metrics.stage_totals[failed.stage]["failed"] += 1
        self._notify()

    def _requeue(self, job: FlowJob) -> None:
        self._trace(job, "requeued")
        self.queue.requeue(job)
        self.metrics.stage_totals[job.stage]["retried"] += 1
        self._notify(job.stage)

    def _write(self, fn: Callable[[], object], kind: str = "other") -> Generator:
        """Run a store write; throttling is retried with backoff or, on the legacy
        path, swallowed. Returns True when the write landed."""
        delay = self.config.write_retry_base_ms
        while True:
            try:
                fn()
                return True
            except ThroughputExceeded:
                if self.config.swallow_write_errors:
                    self.metrics.bump("skipped_created_writes" if kind == "created"
                                      else "skipped_other_writes")
                    return False
                self.metrics.bump("write_retries")
                yield delay
                delay = min(self.config.write_retry_cap_ms, delay * 2)

    def _save_video(self, video: VideoRecord, kind: str = "other") -> Generator:
        return (yield from self._write(lambda: self.store.save_video(video), kind))

    def _mark(self, video: VideoRecord, target: VideoState) -> Generator:
        if is_legal(video.state, target):
            yield from self._save_video(transition(video, target, now=self.clock.now))

    # admission ----------------------------------------------------------------

    def enqueue_video(self, video: VideoRecord, priority: int, *,
                      channel: Optional[ChannelRecord] = None,
                      channel_videos: Optional[list[VideoRecord]] = None,
                      admitted: Optional[list[int]] = None) -> list[FlowJob]:
        """Queue a full flow for ``video`` if the channel's tier caps allow it.

        ``admitted`` is an optional running [count, bytes] total for the channel
        (excluding ``video``); it is updated in place on success so a caller
        enqueueing many videos does not rescan the channel each time.
        """
        channel = channel or self.store.find_channel(video.channel_id)
        if channel is None or channel.status is not ChannelStatus.VERIFIED:
            raise ChannelIneligible(f"channel {video.channel_id} not enrolled")
        if video.state not in RESUMABLE_STATES:
            raise ChannelIneligible(f"{video.id} is {video.state.value}")
        if self.queue.has_flow(video.id):
            raise ChannelIneligible(f"{video.id} already queued")
        if admitted is None:
            if channel_videos is None:
                channel_videos = self.store.videos_for_channel(channel.id)
            count, size = self._admitted(channel.id, channel_videos, exclude=video.id)
        else:
            count, size = admitted
        if count + 1 > channel.tier.video_cap:
            raise TierCapExceeded(f"{channel.id}: {count} videos at {channel.tier.value} cap")
        if size + video.size_bytes > channel.tier.size_cap:
            raise TierCapExceeded(f"{channel.id}: size cap {channel.tier.size_cap} bytes")
        jobs = self.queue.add_flow(video.id, video.channel_id, priority)
        if admitted is not None:
            admitted[0] += 1
            admitted[1] += video.size_bytes
        self._notify(Stage.DOWNLOAD)
        return jobs

    def _admitted(self, channel_id: str, videos: list[VideoRecord],
                  exclude: Optional[str] = None) -> tuple[int, int]:
        count = size = 0
        for v in videos:
            if v.id == exclude:
                continue
            if v.state in ADMITTED_STATES or self.queue.has_flow(v.id):
                count += 1
                size += v.size_bytes
        return count, size

    # workers ------------------------------------------------------------------

    def _worker(self, stage: Stage) -> Generator:
        run = {Stage.DOWNLOAD: self.run_download, Stage.METADATA: self.run_metadata,
               Stage.UPLOAD: self.run_upload}[stage]
        while True:
            job = self.queue.take(stage)
            if job is None:
                yield self._wake[stage]
                continue
            self._took(job)
            yield from run(job)

    # download -----------------------------------------------------------------

    def _bind(self) -> Generator:
        ticket = (self.incarnation, next(self._tickets))
        while True:
            yield self.locks.acquire(PROXY_DOMAIN)
            endpoint = self.pool.bind(self._rng_bind, ticket)
            self.locks.release(PROXY_DOMAIN)
            if endpoint is not None:
                return endpoint
            self.metrics.bump("proxy_spins")
            yield self.config.spin_interval_s * SECOND

    def _open_conn(self, identity: str) -> None:
        self.platform.detector.open_connection(identity)
        self._open[identity] += 1
        self.metrics.connections += 1

    def _close_conn(self, identity: str, endpoint: str) -> None:
        self.platform.detector.close_connection(identity)
        self._open[identity] -= 1
        if not self._open[identity]:
            del self._open[identity]
        self.metrics.connections -= 1
        self.pool.release(endpoint)

    def _oversize(self, size: int, duration: int) -> bool:
        return size > MAX_VIDEO_SIZE_BYTES or duration > MAX_VIDEO_DURATION_S

    def _precheck(self, video: VideoRecord) -> Generator:
        """Metadata-only screening before any scrape; returns a failure reason or None."""
        if self._oversize(video.size_bytes, video.duration_s):
            self.metrics.bump("predownload_rejections")
            yield from self._mark(video, VideoState.SKIPPED)
            return "exceeds caps"
        try:
            meta = self.platform.video_metadata([video.id]).get(video.id)
        except ServiceUnavailable:
            self.metrics.bump("predownload_deferrals")
            return "metadata service unavailable"
        category, target = categorize(meta)
        if category is Category.VALID:
            return None
        if category is Category.MISSING_METADATA:
            # transient: stays New and is retried next cycle
            self.metrics.bump("predownload_deferrals")
            return category.value
        self.metrics.bump("predownload_rejections")
        yield from self._mark(video, VideoState.DELETED if category is Category.MISSING else target)
        return category.value

    def run_download(self, job: FlowJob) -> Generator:
        cfg = self.config
        video = self.store.get_video(job.channel_id, job.video_id)
        if video is None or video.state not in RESUMABLE_STATES:
            self._fail(job, "not downloadable")
            return
        if self.downloads.has(video.id):
            self._complete(job, cached=True)
            return
        if cfg.pre_download_checks:
            verdict = yield from self._precheck(video)
            if verdict is not None:
                self._fail(job, verdict)
                return

        endpoint = yield from self._bind()
        identity = self.pool.identity(endpoint)
        self._open_conn(identity)
        bandwidth = cfg.bandwidth_bps * self.pool.bandwidth_factor(endpoint)
        timeout_ms = int(cfg.stage(Stage.DOWNLOAD).timeout_s * SECOND)
        thumb_bytes = 0
        size = 0
        for kind in ("check", "thumbnail", "video"):
            pause = pre_download_sleep(cfg.sleep, self._rng_sleep, self.sleep_trace,
                                       now=self.clock.now, identity=identity)
            if pause:
                yield pause
            try:
                resp = self.platform.scrape(identity, kind, video.id)
            except VideoUnavailableError as exc:
                self._close_conn(identity, endpoint)
                self.metrics.error(self.clock.now)
                target = UNAVAILABLE_REASONS.get(exc.reason)
                if cfg.pre_download_checks and target is not None:
                    yield from self._mark(video, target)
                self._fail(job, exc.reason)
                return
            if resp.outcome is ScrapeOutcome.BOT_CHALLENGE:
                self.metrics.bump("bot_challenges")
                self._close_conn(identity, endpoint)
                self.pool.report_faulty(endpoint)
                self._requeue(job)
                return
            if kind == "check":
                if self._oversize(resp.meta.size_bytes, resp.meta.duration_s):
                    if cfg.pre_download_checks:
                        self._close_conn(identity, endpoint)
                        self.metrics.bump("predownload_rejections")
                        yield from self._mark(video, VideoState.SKIPPED)
                        self._fail(job, "exceeds caps")
                        return
            elif kind == "thumbnail":
                thumb_bytes = resp.size_bytes
                yield max(1, int(thumb_bytes / bandwidth * SECOND))
            else:
                size = resp.size_bytes
                if not cfg.pre_download_checks and self._oversize(size, resp.meta.duration_s):
                    # the downloader's own max-filesize guard trips mid-transfer
                    self._close_conn(identity, endpoint)
                    self.metrics.error(self.clock.now)
                    self._fail(job, "size cap exceeded")
                    return
                if size == 0:
                    self._close_conn(identity, endpoint)
                    yield from self._mark(video, VideoState.EMPTY_DOWNLOAD)
                    self._fail(job, "empty download")
                    return
                transfer = int(size / bandwidth * SECOND)
                if transfer > timeout_ms:
                    yield timeout_ms
                    self._close_conn(identity, endpoint)
                    yield from self._mark(video, VideoState.DOWNLOAD_TIMED_OUT)
                    self._fail(job, "download timed out")
                    return
                yield transfer
        self._close_conn(identity, endpoint)
        key = f"{video.id}:{size}"
        media = self.disk.write(self.disk.video_path(video.id), size, key)
        thumb = self.disk.write(self.disk.thumbnail_path(video.id), thumb_bytes, key + ":thumb")
        self.downloads.record(video.id, media, thumb)
        self.metrics.bump("downloads_completed")
        if cfg.download_only:
            self._trace(job, "complete")
            self.metrics.stage_totals[Stage.DOWNLOAD]["completed"] += 1
            self.queue.drop_flow(video.id)
            return
        self._complete(job, bytes=size)

    # metadata -----------------------------------------------------------------

    def run_metadata(self, job: FlowJob) -> Generator:
        cfg = self.config
        video = self.store.get_video(job.channel_id, job.video_id)
        media = self.downloads.video_paths.get(job.video_id)
        if video is None:
            self._fail(job, "video missing")
            return
        if media is None or job.video_id in cfg.postprocessing_faults:
            self.metrics.bump("metadata_failures")
            yield from self._mark(video, VideoState.POSTPROCESSING_ERROR)
            self._fail(job, "PostprocessingError")
            return
        work = int(media.size / cfg.metadata_bps * SECOND)
        timeout_ms = int(cfg.stage(Stage.METADATA).timeout_s * SECOND)
        if work > timeout_ms:
            yield timeout_ms
            self.metrics.bump("metadata_failures")
            self._fail(job, "metadata timed out")
            return
        yield work
        self.metrics.bump("metadata_completed")
        self._complete(job, hash=content_hash(media.content_key, media.size),
                       descriptor={"duration_s": video.duration_s, "codec": "h264",
                                   "resolution": "1920x1080"})

    # creation -----------------------------------------------------------------

    def _creation_worker(self) -> Generator:
        size = self.config.stage(Stage.CREATION).concurrency
        holder = f"creation-{self.incarnation}"
        while True:
            if self.queue.peek_ready(Stage.CREATION) is None:
                yield self._wake[Stage.CREATION]
                continue
            yield from self.locks.acquire_all("queueRecalc", "queueBatch")
            jobs = self.queue.take_many(Stage.CREATION, size)
            for job in jobs:
                self._took(job)
            lease = BatchLease(holder, self.clock.now + self.config.lease_duration_s * SECOND,
                               self.config.lease_duration_s, self.config.lease_renewal_s)
            self.queue.leases[holder] = lease
            yield from self.run_creation_batch(jobs, lease)
            self.locks.release_all("queueRecalc", "queueBatch")

    def run_creation_batch(self, jobs: list[FlowJob], lease: BatchLease) -> Generator:
        cfg = self.config
        chain = self.sink.chain
        todo: list[tuple[FlowJob, VideoRecord]] = []
        for job in jobs:
            video = self.store.get_video(job.channel_id, job.video_id)
            if video is None:
                self._fail(job, "video missing")
            elif video.state.has_sink_object:
                self._complete(job, object_id=video.sink_object_id, reused=True)
            elif video.state not in (VideoState.NEW, VideoState.CREATION_FAILED):
                self._fail(job, f"unexpected state {video.state.value}")
            else:
                if cfg.wal_enabled:
                    video = yield from self._durable_wal(video)
                todo.append((job, video))
        if not todo:
            return

        try:
            first = chain.next_nonce(cfg.account)
            nonces = list(range(first, first + len(todo)))
            receipt = chain.submit_batch(
                cfg.account, [Extrinsic(v.id, v.channel_id) for _, v in todo], nonces)
        except (SinkUnreachable, BatchRejected) as exc:
            self.metrics.bump("creation_failures", len(todo))
            for job, video in todo:
                if video.state is VideoState.CREATING_VIDEO:
                    yield from self._mark(video, VideoState.CREATION_FAILED)
                self._fail(job, type(exc).__name__)
            return
        self.metrics.bump("creation_batches")
        self.metrics.batch_nonces.append(tuple(nonces))

        deadline = receipt.submitted_at + cfg.creation_max_blocks * chain.block_interval
        renew_every = cfg.lease_renewal_s * SECOND
        next_renewal = self.clock.now + renew_every
        while not receipt.finalized:
            if self.clock.now >= deadline:
                # outcome unknown; the CreatingVideo rows are settled by reconciliation
                for job, _ in todo:
                    self._fail(job, "LeaseExpired")
                return
            wake = min(next_renewal, receipt.finalizes_at, deadline)
            yield max(0, wake - self.clock.now)
            if self.clock.now >= next_renewal and not receipt.finalized:
                lease.renew(self.clock.now)
                next_renewal = self.clock.now + renew_every
        for job, video in todo:
            oid = receipt.object_ids[video.id]
            if cfg.wal_enabled:
                created = transition(video, VideoState.VIDEO_CREATED, now=self.clock.now,
                                     sink_object_id=oid)
            else:
                created = force_state(video, VideoState.VIDEO_CREATED, now=self.clock.now,
                                      reason="legacy", sink_object_id=oid)
            yield from self._save_video(created, "created")
            self.metrics.bump("videos_created")
            self._complete(job, object_id=oid)

    def _durable_wal(self, video: VideoRecord) -> Generator:
        delay = self.config.write_retry_base_ms
        while True:
            try:
                return wal_begin(self.store, video.channel_id, video.id, self.clock.now)
            except ThroughputExceeded:
                # never swallowed: submitting without the intent record is the bug
                self.metrics.bump("write_retries")
                yield delay
                delay = min(self.config.write_retry_cap_ms, delay * 2)

    # upload -------------------------------------------------------------------

    def run_upload(self, job: FlowJob) -> Generator:
        cfg = self.config
        video = self.store.get_video(job.channel_id, job.video_id)
        if video is not None and video.state is VideoState.UPLOAD_SUCCEEDED:
            self._complete(job, already=True)
            return
        if video is None or video.state not in (VideoState.VIDEO_CREATED, VideoState.UPLOAD_FAILED):
            # the store is the source of truth; a row that never reached
            # VideoCreated is picked up again by the next polling cycle
            self.metrics.bump("uploads_abandoned")
            self._fail(job, "not created")
            return
        media = self.downloads.video_paths.get(video.id)
        thumb = self.downloads.thumbnail_paths.get(video.id)
        if media is None or thumb is None:
            self._fail(job, "assets missing")
            return
        started = transition(video, VideoState.UPLOAD_STARTED, now=self.clock.now)
        yield from self._save_video(started)
        accepted = [False, False]
        storage = self.sink.storage
        for attempt in range(cfg.upload_attempts):
            if attempt:
                yield cfg.upload_interval_s * SECOND
            try:
                node = storage.choose_node(self._rng_node)
            except NodeDown:
                continue
            for i, (kind, handle) in enumerate(zip(ASSET_KINDS, (media, thumb))):
                if accepted[i]:
                    continue
                try:
                    storage.upload_asset(node, video.sink_object_id, kind, handle)
                    accepted[i] = True
                except (NotYetVisible, NodeDown):
                    break
            if all(accepted):
                break
        ok = all(accepted)
        final = transition(started, VideoState.UPLOAD_SUCCEEDED if ok else VideoState.UPLOAD_FAILED,
                           now=self.clock.now)
        final.asset_accepted = (accepted[0], accepted[1])
        yield from self._save_video(final)
        if ok:
            self.metrics.bump("uploads_succeeded")
            self.downloads.forget(video.id, self.disk)
            self._complete(job)
        else:
            self.metrics.bump("uploads_failed")
            self._fail(job, "UploadFailed")

    # polling ------------------------------------------------------------------

    def _poller(self) -> Generator:
        while True:
            self.metrics.last_poll_at = self.clock.now
            yield from self.poll_channels()
            while True:
                due = self.metrics.last_poll_at + int(self.config.poll_interval_min * MINUTE)
                if self.clock.now >= due:
                    break
                wake = Signal(self.clock)
                self._poll_wake = wake
                self.clock.schedule(due - self.clock.now, wake.fire, owner=OWNER, label="poll-timer")
                yield wake
                self._poll_wake = None

    def poll_channels(self) -> Generator:
        """One polling cycle; returns the number of newly ingested videos."""
        cfg = self.config
        self.metrics.bump("polls")
        ids = self.store.channel_ids()
        first = True
        for batch in _chunks(ids, cfg.stats_batch):
            if not first:
                yield cfg.inter_batch_sleep_ms
                self.metrics.poll_sleep_ms += cfg.inter_batch_sleep_ms
            first = False
            self.metrics.poll_batches["stats"] += 1
            yield from self._refresh_stats(batch)
        ingested = 0
        for batch in _chunks(ids, cfg.ingest_batch):
            if not first:
                yield cfg.inter_batch_sleep_ms
                self.metrics.poll_sleep_ms += cfg.inter_batch_sleep_ms
            first = False
            self.metrics.poll_batches["ingest"] += 1
            if not cfg.ingest_videos:
                continue
            for cid in batch:
                try:
                    ingested += yield from self._ingest_channel(cid)
                except (ServiceUnavailable, QuotaExceeded):
                    self.metrics.bump("poll_errors")
        return ingested

    def _refresh_stats(self, batch: list[str]) -> Generator:
        try:
            stats = self.platform.channel_stats(batch)
        except ServiceUnavailable:
            self.metrics.bump("poll_errors", len(batch))
            stats = {}
        for cid in batch:
            fresh = stats.get(cid)
            if fresh is None and not self.config.api_path_enabled:
                continue
            channel = self.store.find_channel(cid)
            if channel is None or channel.status is not ChannelStatus.VERIFIED:
                continue
            if self.config.api_path_enabled and isinstance(channel.auth_artifact, TokenBundle):
                channel = yield from self._api_sync(channel)
                if channel.status is not ChannelStatus.VERIFIED:
                    continue
            if fresh is not None and (fresh["subscriber_count"], fresh["video_count"]) != (
                    channel.subscriber_count, channel.video_count):
                channel.subscriber_count = fresh["subscriber_count"]
                channel.video_count = fresh["video_count"]
                channel.age_hours = fresh["age_hours"]
                yield from self._write(lambda: self.store.save_channel(channel))

    def _api_sync(self, channel: ChannelRecord) -> Generator:
        bundle = channel.auth_artifact
        now = self.clock.now
        status = token_lifecycle(bundle, now, testing_consent=self.platform.testing_consent)
        try:
            if status is TokenStatus.EXPIRED_ACCESS:
                bundle = self.platform.token_exchange(bundle, self._rng_tokens)
                self.metrics.bump("token_refreshes")
                channel = dataclasses.replace(channel, auth_artifact=bundle)
                yield from self._write(lambda: self.store.save_channel(channel))
            elif status is not TokenStatus.VALID:
                raise InvalidGrant(status.value)
            self.platform.api_call("channels.list", service="sync")
        except InvalidGrant:
            if self.config.opt_out_on_invalid_token:
                # the legacy handler read an invalid grant as the creator leaving
                channel = dataclasses.replace(channel, status=ChannelStatus.OPTED_OUT,
                                              pre_opt_out_status=channel.tier)
                yield from self._write(lambda: self.store.save_channel(channel))
                self.metrics.bump("opt_outs")
            else:
                self.metrics.bump("api_errors")
        except (ServiceUnavailable, QuotaExceeded):
            self.metrics.bump("api_errors")
        return channel

    def _ingest_channel(self, cid: str) -> Generator:
        channel = self.store.find_channel(cid)
        if channel is None or channel.status is not ChannelStatus.VERIFIED:
            return 0
        now = self.clock.now
        listing = self.platform.operational_api_query("channel_videos", channel_id=cid)
        videos = {v.id: v for v in self.store.videos_for_channel(cid)}
        new = 0
        for meta in listing:
            if meta.id in videos:
                continue
            fresh = channel.last_polled_at is not None and meta.visible_from > channel.last_polled_at
            record = VideoRecord(meta.id, cid, meta.published_at, meta.duration_s, meta.size_bytes,
                                 is_fresh=fresh, title=meta.title)
            target = ingest_filter(meta)
            if target is not None:
                record = transition(record, target, now=now)
                self.metrics.bump("videos_filtered")
            if (yield from self._save_video(record)):
                videos[meta.id] = record
                new += 1
        self.metrics.bump("videos_ingested", new)

        eligible = [v for v in videos.values() if not v.state.is_unavailable]
        done = sum(1 for v in eligible if v.state is VideoState.UPLOAD_SUCCEEDED)
        backlog = round(100.0 * (len(eligible) - done) / len(eligible), 6) if eligible else 0.0
        channel.backlog_pct = backlog
        channel.last_polled_at = now
        yield from self._write(lambda: self.store.save_channel(channel))

        candidates = []
        for v in videos.values():
            if v.state not in RESUMABLE_STATES or self.queue.has_flow(v.id):
                continue
            if self.config.download_only and self.downloads.has(v.id):
                continue
            prio = compute_priority(inputs_for(v, channel), self.config.priority_constants)
            candidates.append((prio, v))
        # stable: equal priorities keep ingestion order
        candidates.sort(key=lambda c: c[0])
        admitted = list(self._admitted(cid, list(videos.values())))
        for prio, v in candidates:
            try:
                self.enqueue_video(v, prio, channel=channel, admitted=admitted)
            except TierCapExceeded:
                self.metrics.bump("tier_cap_rejections")
                break
        return new

    # observation ----------------------------------------------------------------

    def stage_snapshot(self) -> dict[str, dict[str, int]]:
        out = {}
        for stage in Stage:
            live = self.queue.stage_counts(stage)
            totals = self.metrics.stage_totals[stage]
            out[stage.value] = {"queued": live["queued"], "active": live["active"],
                                "completed": totals["completed"], "failed": totals["failed"],
                                "retried": totals["retried"]}
        return out
