"""Scenario runtime: wires the simulated world together, injects faults, emits metrics."""
from __future__ import annotations

import csv
import io
import json
import operator
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from ..domain import (DAY, MB, SECOND, ChannelRecord, ChannelStatus, SeededRng, SimClock, Tier,
                      TokenBundle, VerificationVideo, VideoRecord, VideoState)
from ..pipeline import DEFAULT_STAGES, Pipeline, PipelineConfig, PipelineMetrics
from ..platform_sim import (DEFAULT_RATIONING, VERIFICATION_TITLE, Detector, DetectorParams,
                            PlatformCorpus, PlatformSim, QuotaLedger, VideoMeta)
from ..proxynet import SleepPolicy, make_pool
from ..sink import ChainSim, Sink, StorageNetwork
from ..store import (BillingMode, CleanupAborted, DurableStore, LocalDisk, Stage, queue_cleanup)
from ..store.cleanup import Category
from .config import ConfigInvalid, FaultInjection, ScenarioConfig
from .signup import SignupContext, SignupError, signup_channel

# Category mix of the polluted queue entries observed in production (719 total)
POLLUTION_MIX = {
    Category.MISSING.value: 180,
    Category.PRIVATE.value: 150,
    Category.AGE_RESTRICTED.value: 90,
    Category.LIVESTREAM.value: 60,
    Category.EXCEEDS_DURATION.value: 80,
    Category.EXCEEDS_SIZE.value: 120,
    Category.REGION_RESTRICTED.value: 36,
    Category.MISSING_METADATA.value: 3,
}

METRIC_FIELDS = ("t", "stages", "quota_spent_today", "quota_spent_total", "detection_max_score",
                 "blocked_identities", "blocked_proxies", "duplicates", "sink_objects",
                 "channels", "videos_succeeded", "errors_today", "counters")

_OPS = {"==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
        ">": operator.gt, ">=": operator.ge}


def apportion(total: int, weights: dict[str, float]) -> dict[str, int]:
    """Largest-remainder split of ``total`` by ``weights``; ties go to the earlier key."""
    keys = list(weights)
    wsum = sum(weights.values())
    if total <= 0 or wsum <= 0:
        return {k: 0 for k in keys}
    exact = {k: total * weights[k] / wsum for k in keys}
    out = {k: int(exact[k]) for k in keys}
    left = total - sum(out.values())
    order = sorted(keys, key=lambda k: (-(exact[k] - out[k]), keys.index(k)))
    for k in order[:left]:
        out[k] += 1
    return out


@dataclass
class RunResult:
    records: list[str]
    summary: dict
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def metric_stream(self) -> str:
        return "\n".join(self.records) + ("\n" if self.records else "")

    def summary_csv(self) -> str:
        flat = _flatten(self.summary)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for key, value in flat:
            writer.writerow([key, value])
        return buf.getvalue()


def _flatten(d: Any, prefix: str = "") -> list[tuple[str, Any]]:
    if isinstance(d, dict):
        out = []
        for k, v in d.items():
            out.extend(_flatten(v, f"{prefix}.{k}" if prefix else str(k)))
        return out
    if isinstance(d, list):
        return [(prefix, json.dumps(d))]
    return [(prefix, d)]


def lookup(summary: dict, path: str) -> Any:
    """Dotted lookup into the summary; an absent key inside a count table reads as 0."""
    node: Any = summary
    for part in path.split("."):
        if isinstance(node, dict):
            if part in node:
                node = node[part]
            elif node and all(isinstance(v, (int, float)) for v in node.values()):
                return 0
            elif not node:
                return 0
            else:
                raise KeyError(path)
        else:
            raise KeyError(path)
    return node


def check_assertions(summary: dict, assertions: list[dict]) -> list[str]:
    failures = []
    for a in assertions:
        try:
            actual = lookup(summary, a["metric"])
        except KeyError:
            failures.append(f"{a['metric']}: no such metric")
            continue
        if not _OPS[a["op"]](actual, a["value"]):
            failures.append(f"{a['metric']} {a['op']} {a['value']} (actual {actual})")
    return failures


class Simulation:
    """One scenario run. Build with a validated config, then call :meth:`run`."""

    def __init__(self, config: ScenarioConfig, *, backup_dir: Optional[str] = None):
        self.config = config.validate()
        self.backup_dir = backup_dir
        cfg = self.config
        t = cfg.toggles
        self.clock = SimClock()
        self.rng = SeededRng(cfg.seed)
        self.corpus = PlatformCorpus()
        rationing = DEFAULT_RATIONING if t.quota_rationing else None
        self.ledger = QuotaLedger(self.clock, rationing=rationing)
        self.detector = Detector(self.clock, replace(DetectorParams(), **cfg.detector),
                                 keep_trace=bool((cfg.pipeline or {}).get("keep_trace", False)))
        self.platform = PlatformSim(self.clock, self.corpus, ledger=self.ledger,
                                    detector=self.detector, testing_consent=t.testing_consent)
        self.store = DurableStore(self.clock, self._billing(t.billing))
        self.disk = LocalDisk()
        self.chain = ChainSim(self.clock)
        storage = cfg.storage or {}
        schedule = {int(k): float(v) for k, v in (storage.get("schedule") or {}).items()}
        self.storage = StorageNetwork.uniform(self.clock, self.chain, self.rng,
                                              count=storage.get("nodes", 3),
                                              max_delay_s=storage.get("max_delay_s", 30),
                                              schedule=schedule)
        self.sink = Sink(self.chain, self.storage)
        self.metrics = PipelineMetrics()
        self.pipeline_config = self._pipeline_config()
        self.signup_ctx = SignupContext(self.clock, self.store, self.platform, self.chain,
                                        self.rng.stream("signup"), t.disable_new_signups)
        self.pipeline: Optional[Pipeline] = None
        self.incarnation = 0
        self.crashes = 0
        self.records: list[str] = []
        self.enrollments: dict[str, str] = {}
        self.signup_log: list[dict] = []
        self.cleanup_reports: list[dict] = []
        self.cleanup_backups: list[str] = []
        self.fault_log: list[dict] = []
        self._built = False

    # construction -------------------------------------------------------------

    @staticmethod
    def _billing(billing: dict) -> BillingMode:
        if billing.get("kind") == "provisioned":
            return BillingMode.provisioned(billing["rcu"], billing["wcu"],
                                           burst_seconds=billing.get("burst_seconds", 300.0),
                                           initial_tokens=billing.get("initial_tokens"))
        return BillingMode.pay_per_request()

    def _pipeline_config(self) -> PipelineConfig:
        cfg = self.config
        t, p = cfg.toggles, cfg.pipeline or {}
        stages = dict(DEFAULT_STAGES)
        for name, override in (cfg.stages or {}).items():
            stage = Stage(name)
            stages[stage] = replace(stages[stage], **override)
        defaults = PipelineConfig()
        return PipelineConfig(
            stages=stages,
            bandwidth_bps=p.get("bandwidth_mb_s", 10) * MB,
            metadata_bps=p.get("metadata_mb_s", 100) * MB,
            wal_enabled=t.wal_enabled,
            swallow_write_errors=t.swallow_write_errors,
            sleep=SleepPolicy(p.get("sleep_min_ms", 0), p.get("sleep_max_ms", 30_000),
                              enabled=t.sleep_enabled),
            pre_download_checks=t.pre_download_checks,
            download_only=t.download_only,
            upload_attempts=p.get("upload_attempts", defaults.upload_attempts),
            upload_interval_s=p.get("upload_interval_s", defaults.upload_interval_s),
            creation_max_blocks=p.get("creation_max_blocks", defaults.creation_max_blocks),
            spin_interval_s=p.get("spin_interval_s", defaults.spin_interval_s),
            poll_interval_min=cfg.poll_interval_min,
            write_retry_base_ms=p.get("write_retry_base_ms", defaults.write_retry_base_ms),
            write_retry_cap_ms=p.get("write_retry_cap_ms", defaults.write_retry_cap_ms),
            api_path_enabled=t.api_path_enabled,
            opt_out_on_invalid_token=p.get("opt_out_on_invalid_token", True),
            ingest_videos=not cfg.channels.lightweight,
            postprocessing_faults=frozenset(p.get("postprocessing_faults", ())),
            keep_trace=p.get("keep_trace", False),
        )

    def _make_pool(self):
        proxies = self.config.proxies or {}
        count = proxies.get("count", 8)
        return make_pool(self.clock, self.config.toggles.proxy_generation,
                         [f"proxy-{i}" for i in range(count)],
                         bandwidth=proxies.get("bandwidth") or {})

    def _tiers(self, count: int) -> list[Tier]:
        split = apportion(count, self.config.channels.tier_mix)
        tiers: list[Tier] = []
        for name, n in split.items():
            tiers.extend([Tier(name)] * n)
        return tiers

    def _populate(self) -> None:
        ch = self.config.channels
        tiers = self._tiers(ch.count)
        if ch.lightweight:
            self._populate_lightweight(tiers)
            return
        fixed_size = int(ch.fixed_size_mb * MB) if ch.fixed_size_mb is not None else None
        generated = PlatformCorpus.generate(
            self.rng.stream("corpus"), channels=ch.count, videos_per_channel=ch.videos_per_channel,
            subscribers=tuple(ch.subscribers), new_video_every_s=ch.new_video_every_s,
            new_videos_per_channel=ch.new_videos_per_channel,
            median_size=int(ch.median_size_mb * MB), median_duration_s=int(ch.median_duration_s))
        self.corpus.channels.update(generated.channels)
        for cid in generated.channels:
            self.corpus._by_channel.setdefault(cid, [])
        for meta in generated.videos.values():
            if fixed_size is not None:
                meta.size_bytes = fixed_size
            if ch.fixed_duration_s is not None:
                meta.duration_s = int(ch.fixed_duration_s)
            self.corpus.add_video(meta)
        mode = self.config.toggles.auth_mode
        for cid, tier in zip(sorted(self.corpus.channels), tiers):
            meta = self.corpus.channels[cid]
            if ch.whitelist_all:
                self.store.add_whitelist(meta.handle)
            url = None
            if mode == "videoVerification":
                proof = self.corpus.add_video(VideoMeta(
                    id=f"{cid}-verify", channel_id=cid, title=VERIFICATION_TITLE,
                    published_at=self.corpus.epoch_start, duration_s=10, size_bytes=1 * MB,
                    unlisted=True, listed=False))
                url = proof.url
            try:
                signup_channel(self.signup_ctx, cid, mode, verification_url=url, tier=tier)
                self.enrollments[cid] = "enrolled"
            except SignupError as exc:
                self.enrollments[cid] = type(exc).__name__

    def _populate_lightweight(self, tiers: list[Tier]) -> None:
        # status-only records: no corpus, no signup round trips
        rng = self.rng.stream("lightweight")
        lo, hi = self.config.channels.subscribers
        video_mode = self.config.toggles.auth_mode == "videoVerification"
        for n, tier in enumerate(tiers):
            cid = f"UC{n:06d}"
            artifact = (VerificationVideo(f"https://youtube.example/watch?v={cid}-verify")
                        if video_mode else TokenBundle.issue(rng, self.clock.now))
            self.store.save_channel(ChannelRecord(
                id=cid, user_id=f"user-{cid}", joystream_channel_id=1000 + n, tier=tier,
                subscriber_count=rng.randint(lo, hi), video_count=2, age_hours=24 * 365.0,
                status=ChannelStatus.VERIFIED, auth_artifact=artifact, handle=f"@creator{n}",
                enrolled_at=self.clock.now))
            self.enrollments[cid] = "enrolled"

    def build(self) -> "Simulation":
        if self._built:
            return self
        self._built = True
        # enrollment predates the run; only pipeline traffic meets the provisioned table
        billing = self.store.billing
        self.store.set_billing(BillingMode.pay_per_request())
        self._populate()
        self.store.set_billing(billing)
        cfg = self.config
        for fault in cfg.faults:
            if fault.at_s is not None:
                self.inject_fault(fault)
        for control in cfg.controls:
            at = int(control["at_s"] * SECOND)
            self.clock.schedule_at(at, lambda c=control: self._control(c), owner="faults",
                                   label=f"control {control['kind']}")
        interval = int(cfg.metrics_interval_s * SECOND)
        end = int(cfg.duration_s * SECOND)
        for k in range(end // interval + 1):
            self.clock.schedule_at(k * interval, self._emit, owner="metrics", label="metrics")
        self._boot_pipeline(reconcile=False)
        return self

    def _boot_pipeline(self, *, reconcile: bool = True) -> Pipeline:
        self.pipeline = Pipeline(
            clock=self.clock, store=self.store, disk=self.disk, platform=self.platform,
            sink=self.sink, pool=self._make_pool(), config=self.pipeline_config, rng=self.rng,
            metrics=self.metrics, incarnation=self.incarnation)
        self.pipeline.start(reconcile=reconcile)
        return self.pipeline

    # faults and controls --------------------------------------------------------

    def inject_fault(self, fault: FaultInjection) -> None:
        """Schedule ``fault`` at its ``at_s``; event-boundary crashes go through :meth:`run`."""
        end = self.config.duration_s
        if fault.at_s is None or not 0 <= fault.at_s <= end:
            raise ConfigInvalid([f"fault {fault.kind}: at_s must lie within the run"])
        at = int(fault.at_s * SECOND)
        self.clock.schedule_at(at, lambda: self._fire(fault), owner="faults",
                               label=f"fault {fault.kind}")
        if fault.duration_s:
            self.clock.schedule_at(at + int(fault.duration_s * SECOND),
                                   lambda: self._clear(fault), owner="faults",
                                   label=f"clear {fault.kind}")

    def _log_fault(self, fault: FaultInjection, phase: str) -> None:
        self.fault_log.append({"t": self.clock.now, "kind": fault.kind, "phase": phase})

    def _fire(self, fault: FaultInjection) -> None:
        self._log_fault(fault, "start")
        kind, p = fault.kind, fault.params
        if kind == "processCrash":
            self.crash()
        elif kind == "sinkOutage":
            self.sink.set_reachable(False)
        elif kind == "storageNodeDown":
            for node in self._nodes(p):
                node.up = False
        elif kind == "platformApiDown":
            api = p.get("api", "both")
            if api in ("official", "both"):
                self.platform.api_up = False
            if api in ("operational", "both"):
                self.platform.operational_api_up = False
        elif kind == "throughputBurst":
            self.store.drain_capacity(p.get("table", "videos"), int(p.get("writes", 100)))
        elif kind == "tokenMassExpiryWindow":
            self.pipeline_config.api_path_enabled = False
        elif kind == "queuePollution":
            self.pollute(int(p.get("count", 719)), p.get("mix") or POLLUTION_MIX,
                         recover_after_s=p.get("recover_after_s"))

    def _clear(self, fault: FaultInjection) -> None:
        self._log_fault(fault, "end")
        kind, p = fault.kind, fault.params
        if kind == "sinkOutage":
            self.sink.set_reachable(True)
        elif kind == "storageNodeDown":
            for node in self._nodes(p):
                node.up = True
        elif kind == "platformApiDown":
            self.platform.api_up = True
            self.platform.operational_api_up = True
        elif kind == "tokenMassExpiryWindow":
            self.pipeline_config.api_path_enabled = True

    def _nodes(self, params: dict):
        wanted = params.get("nodes", "all")
        ids = sorted(self.storage.nodes) if wanted == "all" else list(wanted)
        return [self.storage.nodes[i] for i in ids]

    def crash(self) -> None:
        if self.pipeline is None:
            return
        self.pipeline.crash()
        self.pipeline = None
        self.crashes += 1
        self.incarnation += 1
        self.clock.schedule(int(self.config.restart_delay_s * SECOND), self._boot_pipeline,
                            owner="faults", label="restart")

    def pollute(self, count: int, mix: dict[str, int], *,
                recover_after_s: Optional[float] = None) -> list[str]:
        """Insert ``count`` stale New rows whose source videos are unusable."""
        split = apportion(count, mix)
        channels = sorted(c for c, s in self.enrollments.items() if s == "enrolled")
        if not channels:
            return []
        rng = self.rng.stream("pollution")
        now = self.clock.now
        recover = None if recover_after_s is None else now + int(recover_after_s * SECOND)
        ids = []
        n = 0
        for category, k in split.items():
            for _ in range(k):
                cid = channels[n % len(channels)]
                vid = f"{cid}-stale{n:04d}"
                n += 1
                meta = VideoMeta(id=vid, channel_id=cid, title=f"stale {n}",
                                 published_at=self.corpus.epoch_start - rng.randint(86_400, 10 * 86_400 * 365),
                                 duration_s=rng.randint(60, 3_600), size_bytes=rng.randint(20, 400) * MB,
                                 listed=False)
                if category == Category.MISSING.value:
                    meta.deleted = True
                elif category == Category.PRIVATE.value:
                    if rng.random() < 2 / 3:
                        meta.private = True
                    else:
                        meta.members_only = True
                elif category == Category.AGE_RESTRICTED.value:
                    meta.age_restricted = True
                elif category == Category.LIVESTREAM.value:
                    meta.live = True
                elif category == Category.EXCEEDS_DURATION.value:
                    meta.duration_s = rng.randint(10_801, 43_200)
                elif category == Category.EXCEEDS_SIZE.value:
                    meta.size_bytes = rng.randint(15_001, 40_000) * MB
                elif category == Category.REGION_RESTRICTED.value:
                    meta.region_restricted = True
                elif category == Category.MISSING_METADATA.value:
                    meta.metadata_missing_until = recover if recover is not None else 10 ** 15
                else:
                    raise ValueError(f"unknown pollution category {category!r}")
                self.corpus.add_video(meta)
                self.store.put("videos", (cid, vid), VideoRecord(
                    vid, cid, meta.published_at, meta.duration_s, meta.size_bytes,
                    title=meta.title).to_dict(), charge=False)
                ids.append(vid)
        return ids

    def _control(self, control: dict) -> None:
        kind = control["kind"]
        if kind == "setPollInterval":
            minutes = float(control["minutes"])
            self.pipeline_config.poll_interval_min = minutes
            if self.pipeline is not None:
                self.pipeline.set_poll_interval(minutes)
        elif kind == "setToggle":
            self.set_toggle(control["name"], control["value"])
        elif kind == "cleanup":
            self.run_cleanup()
        elif kind == "signup":
            cid = control["channel_id"]
            try:
                out = signup_channel(self.signup_ctx, cid, control.get("mode", "token"),
                                     verification_url=control.get("verification_url"),
                                     tier=Tier(control.get("tier", "Bronze")))
                self.signup_log.append({"t": self.clock.now, "channel": cid, "outcome": "enrolled",
                                        "whitelisted": out.whitelisted})
            except SignupError as exc:
                self.signup_log.append({"t": self.clock.now, "channel": cid,
                                        "outcome": type(exc).__name__})

    def set_toggle(self, name: str, value: Any) -> None:
        pc = self.pipeline_config
        if name in ("wal_enabled", "swallow_write_errors", "pre_download_checks",
                    "download_only", "api_path_enabled"):
            setattr(pc, name, bool(value))
        elif name == "sleep_enabled":
            pc.sleep = replace(pc.sleep, enabled=bool(value))
        elif name == "disable_new_signups":
            self.signup_ctx.disable_new_signups = bool(value)
        elif name == "billing":
            self.store.set_billing(self._billing(value))
        else:
            raise ConfigInvalid([f"setToggle.name: {name!r} cannot be changed mid-run"])

    def run_cleanup(self) -> Optional[dict]:
        if self.backup_dir is None:
            self.backup_dir = tempfile.mkdtemp(prefix="replisim-backup-")
        try:
            report = queue_cleanup(self.store, self.platform, self.backup_dir, self.clock.now)
        except CleanupAborted as exc:
            self.cleanup_reports.append({"t": self.clock.now, "aborted": str(exc)})
            return None
        # in-flight jobs for rows that were just settled would only fail later
        if self.pipeline is not None:
            for vid in report.deleted + list(report.marked):
                self.pipeline.queue.drop_flow(vid)
        self.cleanup_backups.append(report.backup_path)
        d = report.to_dict()
        d["backup_path"] = os.path.basename(report.backup_path)
        self.cleanup_reports.append({"t": self.clock.now, **d})
        return d

    # metrics -------------------------------------------------------------------

    def _status_counts(self) -> dict[str, int]:
        counts = Counter(row["status"] for row in self.store.tables["channels"].values())
        return {s.value: counts.get(s.value, 0) for s in ChannelStatus}

    def _stage_view(self) -> dict:
        if self.pipeline is not None:
            return self.pipeline.stage_snapshot()
        return {s.value: {"queued": 0, "active": 0, **self.metrics.stage_totals[s]} for s in Stage}

    def _quota_today(self) -> int:
        self.ledger.remaining()  # rolls the day over
        return self.ledger.spent_today

    def _emit(self) -> None:
        now = self.clock.now
        rec = {
            "t": now,
            "stages": self._stage_view(),
            "quota_spent_today": self._quota_today(),
            "quota_spent_total": self.ledger.total_spent,
            "detection_max_score": round(self.detector.max_score(), 6),
            "blocked_identities": self.detector.blocked_identities(),
            "blocked_proxies": self.pipeline.pool.blocked_count() if self.pipeline else 0,
            "duplicates": self.chain.duplicate_count(),
            "sink_objects": self.chain.total_objects(),
            "channels": self._status_counts(),
            "videos_succeeded": self.store.count_videos_in_state(VideoState.UPLOAD_SUCCEEDED),
            "errors_today": self.metrics.errors_by_day.get(now // DAY, 0),
            "counters": dict(self.metrics.counters),
        }
        self.records.append(json.dumps({k: rec[k] for k in METRIC_FIELDS}, separators=(",", ":")))

    # running -------------------------------------------------------------------

    def run(self, *, crash_after_event: Optional[int] = None) -> RunResult:
        self.build()
        end = int(self.config.duration_s * SECOND)
        boundary = crash_after_event
        if boundary is None:
            boundary = next((f.after_event for f in self.config.faults
                             if f.after_event is not None), None)
        if boundary is not None:
            done = self.clock.run(until=end, max_events=boundary)
            if done == boundary:
                self.crash()
        self.clock.run(until=end)
        summary = self.summary()
        return RunResult(list(self.records), summary,
                         check_assertions(summary, self.config.assertions))

    def summary(self) -> dict:
        store = self.store
        states = Counter(row["state"] for row in store.tables["videos"].values())
        replay = DurableStore.from_write_log(SimClock(), store.write_log)
        return {
            "name": self.config.name,
            "seed": self.config.seed,
            "t_end": self.clock.now,
            "events": self.clock.dispatched,
            "crashes": self.crashes,
            "duplicates": self.chain.duplicate_count(),
            "duplicated_videos": len(self.chain.duplicated_videos()),
            "sink_objects": self.chain.total_objects(),
            "videos_by_state": {s.value: states.get(s.value, 0) for s in VideoState},
            "channels_by_status": self._status_counts(),
            "enrolled": sum(1 for s in self.enrollments.values() if s == "enrolled"),
            "counters": dict(self.metrics.counters),
            "errors_by_day": {str(d): n for d, n in sorted(self.metrics.errors_by_day.items())},
            "max_errors_per_day": max(self.metrics.errors_by_day.values(), default=0),
            "max_active": {s.value: n for s, n in self.metrics.max_active.items()},
            "poll_batches": dict(self.metrics.poll_batches),
            "poll_sleep_ms": self.metrics.poll_sleep_ms,
            "detection_max_score": round(self.detector.max_score(), 6),
            "blocked_identities": self.detector.blocked_identities(),
            "first_block_at": self.detector.first_block_at,
            "store_rejected_writes": dict(store.rejected_writes),
            "store_matches_replay": replay.snapshot() == store.snapshot(),
            "cleanups": list(self.cleanup_reports),
            "signups": list(self.signup_log),
        }


def run_scenario(config: ScenarioConfig, **kwargs) -> RunResult:
    return Simulation(config, **kwargs).run()


@dataclass
class SweepResult:
    baseline_events: int
    duplicates_by_crash_point: dict[int, int]

    @property
    def max_duplicates(self) -> int:
        return max(self.duplicates_by_crash_point.values(), default=0)

    @property
    def points_with_duplicates(self) -> list[int]:
        return [i for i, d in self.duplicates_by_crash_point.items() if d]


MAX_SWEEP_EVENTS = 200
MAX_SWEEP_VIDEOS = 5


def sweep_crash_points(config: ScenarioConfig) -> SweepResult:
    """Crash after every event boundary of the fault-free run, one run per boundary."""
    ch = config.channels
    videos = ch.count * (ch.videos_per_channel + ch.new_videos_per_channel)
    if videos > MAX_SWEEP_VIDEOS:
        raise ConfigInvalid([f"channels: crash sweeps are limited to {MAX_SWEEP_VIDEOS} videos"])
    base_cfg = config.copy(faults=[f for f in config.faults if f.kind != "processCrash"])
    baseline = Simulation(base_cfg).run()
    events = baseline.summary["events"]
    if events > MAX_SWEEP_EVENTS:
        raise ConfigInvalid([f"duration_s: {events} events exceed the sweep bound of {MAX_SWEEP_EVENTS}"])
    dups = {}
    for i in range(1, events + 1):
        dups[i] = Simulation(base_cfg).run(crash_after_event=i).summary["duplicates"]
    return SweepResult(events, dups)
