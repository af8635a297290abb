import dataclasses

import pytest

from replisim.domain import (GB, MB, SECOND, ChannelRecord, ChannelStatus, SeededRng, SimClock,
                             Tier, VideoRecord, VideoState)
from replisim.pipeline import (ChannelIneligible, Pipeline, PipelineConfig, StageConfig,
                               TierCapExceeded, batch_plan, ingest_filter)
from replisim.platform_sim import ChannelMeta, PlatformCorpus, PlatformSim, VideoMeta
from replisim.proxynet import SleepPolicy, make_pool
from replisim.sink import ChainSim, Sink, StorageNetwork
from replisim.store import DurableStore, LocalDisk, Stage

S = VideoState
EPOCH = 1_704_067_200


class World:
    def __init__(self, n_videos=3, *, size=10 * MB, duration=60, tier=Tier.SILVER,
                 storage_delay_s=0, schedule=None, proxies=8, **cfg):
        self.clock = SimClock()
        self.corpus = PlatformCorpus(EPOCH)
        self.corpus.add_channel(ChannelMeta("c1", "@c1", 100, n_videos, -100 * 86_400_000))
        for i in range(n_videos):
            self.corpus.add_video(VideoMeta(f"v{i:02d}", "c1", f"t{i}", EPOCH - 86_400 * (i + 1),
                                            duration, size))
        self.store = DurableStore(self.clock)
        self.store.save_channel(ChannelRecord("c1", "u1", tier=tier, status=ChannelStatus.VERIFIED))
        self.platform = PlatformSim(self.clock, self.corpus)
        chain = ChainSim(self.clock)
        storage = StorageNetwork.uniform(self.clock, chain, SeededRng(1), count=2,
                                         max_delay_s=storage_delay_s, schedule=schedule)
        self.sink = Sink(chain, storage)
        self.disk = LocalDisk()
        cfg.setdefault("sleep", SleepPolicy(enabled=False))
        cfg.setdefault("keep_trace", True)
        self.config = PipelineConfig(**cfg)
        self.pipeline = Pipeline(
            clock=self.clock, store=self.store, disk=self.disk, platform=self.platform,
            sink=self.sink, pool=make_pool(self.clock, 2, [f"p{i}" for i in range(proxies)]),
            config=self.config, rng=SeededRng(3))

    def run(self, until=None, poll=True):
        self.pipeline.start(poll=poll, reconcile=False)
        self.clock.run(until=until if until is not None else 6 * 3600 * SECOND)
        return self

    def states(self):
        return {v.id: v.state for v in self.store.videos()}

    def counters(self):
        return self.pipeline.metrics.counters


def with_stages(**conc):
    from replisim.pipeline import DEFAULT_STAGES
    stages = dict(DEFAULT_STAGES)
    for name, kw in conc.items():
        stage = Stage(name)
        stages[stage] = dataclasses.replace(stages[stage], **kw)
    return stages


def test_happy_path_replicates_everything():
    w = World(6).run()
    assert set(w.states().values()) == {S.UPLOAD_SUCCEEDED}
    assert w.sink.chain.duplicate_count() == 0
    assert w.sink.chain.total_objects() == 6
    # uploaded assets are removed from the local disk
    assert w.disk.files == {}
    c = w.counters()
    assert c["videos_created"] == c["uploads_succeeded"] == c["downloads_completed"] == 6


def test_dag_order_from_trace():
    w = World(8).run()
    events = {}
    for t, _, vid, stage, ev in w.pipeline.metrics.trace:
        events.setdefault(vid, []).append((t, stage, ev))
    order = [s.value for s in Stage]
    for vid, evs in events.items():
        starts = [(t, s) for t, s, e in evs if e == "start"]
        completes = {s: t for t, s, e in evs if e == "complete"}
        assert [s for _, s in starts] == order
        for (t, stage), prev in zip(starts[1:], order):
            assert t >= completes[prev]


def test_concurrency_ceilings():
    w = World(30, size=100 * MB).run()
    m = w.pipeline.metrics
    assert m.max_active[Stage.DOWNLOAD] == 2
    assert m.max_active[Stage.METADATA] <= 2
    assert m.max_active[Stage.CREATION] <= 10
    assert m.max_active[Stage.UPLOAD] <= 20
    assert m.max_footprint <= 4
    assert all(len(n) <= 10 for n in m.batch_nonces)
    flat = [n for batch in m.batch_nonces for n in batch]
    assert flat == list(range(len(flat)))


def test_raised_download_concurrency():
    w = World(20, size=100 * MB, stages=with_stages(Download={"concurrency": 5})).run()
    assert w.pipeline.metrics.max_active[Stage.DOWNLOAD] == 5


def test_download_duration_is_size_over_bandwidth():
    w = World(1, size=50 * MB).run()
    trace = [(t, ev) for t, _, _, stage, ev in w.pipeline.metrics.trace if stage == "Download"]
    (t0, e0), (t1, e1) = trace
    assert (e0, e1) == ("start", "complete")
    thumb_ms = 2 * MB * SECOND // (10 * MB)
    assert t1 - t0 == thumb_ms + 50 * MB * SECOND // (10 * MB)


def test_bronze_video_cap():
    w = World(9, size=1 * MB, tier=Tier.BRONZE).run()
    states = w.states()
    assert sum(s is S.UPLOAD_SUCCEEDED for s in states.values()) == 5
    assert sum(s is S.NEW for s in states.values()) == 4
    assert w.counters()["tier_cap_rejections"] >= 1


def test_bronze_size_cap():
    w = World(5, size=300 * MB, tier=Tier.BRONZE).run(until=12 * 3600 * SECOND)
    assert sum(s is S.UPLOAD_SUCCEEDED for s in w.states().values()) == 3


def _download_order(w):
    return [vid for _, _, vid, stage, ev in w.pipeline.metrics.trace
            if stage == "Download" and ev == "start"]


def test_saturated_priorities_keep_ingestion_order():
    w = World(4)
    for vid in ("v03", "v01", "v00", "v02"):
        w.corpus._by_channel["c1"].remove(vid)
        w.corpus._by_channel["c1"].append(vid)
    w.run()
    assert _download_order(w) == ["v03", "v01", "v00", "v02"]


def test_scaled_recency_puts_newest_first():
    from replisim.scheduler import PriorityConstants
    w = World(4, priority_constants=PriorityConstants(recency_scale=100_000)).run()
    # v00 was published most recently
    assert _download_order(w) == ["v00", "v01", "v02", "v03"]


def test_batch_plan():
    assert batch_plan(250) == (5, 3, 7)
    assert batch_plan(0) == (0, 0, 0)
    assert batch_plan(1) == (1, 1, 1)


def test_poll_inter_batch_sleep():
    w = World(0)
    for i in range(2, 251):
        w.store.save_channel(ChannelRecord(f"c{i}", f"u{i}", status=ChannelStatus.VERIFIED))
    w.run(until=10 * SECOND)
    m = w.pipeline.metrics
    assert m.poll_batches == {"stats": 5, "ingest": 3}
    assert m.poll_sleep_ms == 700


def _enqueue(w, meta_kwargs=None, **video_kwargs):
    rec = VideoRecord("x", "c1", EPOCH, video_kwargs.get("duration", 60),
                      video_kwargs.get("size", 10 * MB))
    meta = VideoMeta("x", "c1", "t", EPOCH, rec.duration_s, rec.size_bytes, listed=False,
                     **(meta_kwargs or {}))
    w.corpus.add_video(meta)
    w.store.save_video(rec)
    w.pipeline.start(poll=False, reconcile=False)
    w.clock.run(until=1)
    w.pipeline.enqueue_video(rec, 0)
    w.clock.run(until=6 * 3600 * SECOND)
    return w.store.get_video("c1", "x")


def test_oversize_rejected_before_download():
    w = World(0, tier=Tier.DIAMOND)
    assert _enqueue(w, size=16 * GB).state is S.SKIPPED
    assert w.counters()["predownload_rejections"] == 1
    assert w.counters()["downloads_completed"] == 0
    assert w.platform.detector.trace == []


def test_oversize_legacy_fails_mid_download():
    w = World(0, tier=Tier.DIAMOND, pre_download_checks=False)
    assert _enqueue(w, size=16 * GB).state is S.NEW
    assert w.counters()["download_errors"] == 1


def test_ingest_filter():
    base = dict(id="a", channel_id="c", title="t", published_at=0, duration_s=60, size_bytes=1)
    assert ingest_filter(VideoMeta(**base)) is None
    assert ingest_filter(VideoMeta(**base, private=True)) is S.PRIVATE
    assert ingest_filter(VideoMeta(**base, unlisted=True)) is S.SKIPPED
    assert ingest_filter(VideoMeta(**{**base, "duration_s": 10_801})) is S.SKIPPED
    assert ingest_filter(VideoMeta(**{**base, "size_bytes": 15_000 * MB + 1})) is S.SKIPPED


def test_precheck_marks_private():
    w = World(0)
    assert _enqueue(w, {"private": True}).state is S.PRIVATE
    assert w.platform.detector.trace == []


def test_postprocessing_error():
    w = World(0, postprocessing_faults=frozenset({"x"}))
    assert _enqueue(w).state is S.POSTPROCESSING_ERROR
    assert w.counters()["metadata_failures"] == 1


def test_metadata_timeout_leaves_video_new():
    w = World(0, metadata_bps=1 * MB, stages=with_stages(Metadata={"timeout_s": 5}))
    assert _enqueue(w, size=10 * MB).state is S.NEW
    assert w.counters()["metadata_failures"] == 1


def test_download_timeout():
    w = World(0, stages=with_stages(Download={"timeout_s": 2}))
    assert _enqueue(w, size=100 * MB).state is S.DOWNLOAD_TIMED_OUT


def test_empty_download():
    w = World(0)
    assert _enqueue(w, {"empty": True}).state is S.EMPTY_DOWNLOAD


def test_upload_waits_for_visibility():
    w = World(1, schedule={1: 20}).run()
    v = w.store.get_video("c1", "v00")
    assert v.state is S.UPLOAD_SUCCEEDED and v.asset_accepted == (True, True)


def test_upload_fails_when_never_visible_then_retried_next_poll():
    w = World(1, schedule={1: 40}, poll_interval_min=10).run(until=5 * 60 * SECOND)
    v = w.store.get_video("c1", "v00")
    assert v.state is S.UPLOAD_FAILED and v.sink_object_id == 1
    w.clock.run(until=30 * 60 * SECOND)
    v = w.store.get_video("c1", "v00")
    assert v.state is S.UPLOAD_SUCCEEDED and v.sink_object_id == 1
    assert w.sink.chain.duplicate_count() == 0


def test_enqueue_guards():
    w = World(1)
    rec = VideoRecord("v00", "c1", EPOCH, 60, MB)
    w.store.save_video(rec)
    w.pipeline.enqueue_video(rec, 0)
    with pytest.raises(ChannelIneligible):
        w.pipeline.enqueue_video(rec, 0)
    with pytest.raises(ChannelIneligible):
        w.pipeline.enqueue_video(VideoRecord("q", "nobody", 0, 1, 1), 0)
    bronze = World(0, tier=Tier.BRONZE)
    with pytest.raises(TierCapExceeded):
        bronze.pipeline.enqueue_video(VideoRecord("big", "c1", 0, 1, 2 * GB), 0)


def test_bot_challenge_rotates_proxy():
    w = World(1)
    det = w.platform.detector
    det.states.clear()
    # pre-block the first endpoint the pipeline will bind
    for ep in ("p0", "p1", "p2", "p3", "p4", "p5", "p6"):
        det.state(ep).blocked_until = 10 ** 12
    w.run()
    assert w.states() == {"v00": S.UPLOAD_SUCCEEDED}
    assert w.counters()["bot_challenges"] >= 1
    assert w.pipeline.pool.reports == w.counters()["bot_challenges"]


def _synced(w, n):
    for i in range(n):
        w.store.save_video(VideoRecord(f"s{i}", "c1", EPOCH, 60, MB, state=S.UPLOAD_SUCCEEDED,
                                       sink_object_id=100 + i))


def test_bronze_cap_boundary():
    w = World(0, tier=Tier.BRONZE)
    _synced(w, 4)
    rec = VideoRecord("x", "c1", EPOCH, 60, MB)
    assert len(w.pipeline.enqueue_video(rec, 0)) == 4
    w = World(0, tier=Tier.BRONZE)
    _synced(w, 5)
    with pytest.raises(TierCapExceeded):
        w.pipeline.enqueue_video(rec, 0)


def test_terminal_video_not_enqueued():
    w = World(0)
    with pytest.raises(ChannelIneligible):
        w.pipeline.enqueue_video(VideoRecord("x", "c1", EPOCH, 60, MB, state=S.UPLOAD_SUCCEEDED,
                                             sink_object_id=1), 0)


def test_bot_challenge_excludes_proxy_for_ttl():
    w = World(1, proxies=2)
    w.platform.detector.state("p0").blocked_until = 10 ** 12
    w.platform.detector.state("p1").blocked_until = 10 ** 12
    w.run(until=60 * SECOND)
    pool = w.pipeline.pool
    assert pool.reports >= 1
    for ep, until in pool.faulty.items():
        assert until - 14_400 * SECOND <= w.clock.now


def test_full_batch_of_ten():
    w = World(0, tier=Tier.GOLD)
    q = w.pipeline.queue
    for i in range(12):
        w.store.save_video(VideoRecord(f"x{i:02d}", "c1", EPOCH, 60, MB))
        w.pipeline.enqueue_video(w.store.get_video("c1", f"x{i:02d}"), i)
        for stage in (Stage.DOWNLOAD, Stage.METADATA):
            q.complete(q.take(stage))
    w.run(until=60 * SECOND, poll=False)
    m = w.pipeline.metrics
    assert m.batch_nonces == [tuple(range(10)), (10, 11)]
    assert m.counters["videos_created"] == 12
    oids = [w.store.get_video("c1", f"x{i:02d}").sink_object_id for i in range(12)]
    assert len(set(oids)) == 12


def test_metadata_just_over_limit_times_out():
    # 1801 s of processing at 1 MB/s against the 1800 s ceiling
    w = World(0, metadata_bps=1 * MB, tier=Tier.DIAMOND)
    assert _enqueue(w, size=1801 * MB).state is S.NEW
    assert w.counters()["metadata_failures"] == 1
    failed = [j for j in w.pipeline.metrics.trace if j[4] == "failed"]
    assert [f[3] for f in failed] == ["Metadata", "Creation", "Upload"]
