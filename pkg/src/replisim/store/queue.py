"""Ephemeral job queue: flow jobs, per-stage priority ordering, batch leases.

Nothing in here survives a process restart; it is rebuilt from the durable
store after :meth:`EphemeralQueueStore.flush`.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional


class Stage(str, Enum):
    DOWNLOAD = "Download"
    METADATA = "Metadata"
    CREATION = "Creation"
    UPLOAD = "Upload"


STAGE_ORDER = (Stage.DOWNLOAD, Stage.METADATA, Stage.CREATION, Stage.UPLOAD)


class JobStatus(str, Enum):
    QUEUED = "queued"
    ACTIVE = "active"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class FlowJob:
    id: int
    video_id: str
    channel_id: str
    stage: Stage
    priority: int
    seq: int
    parent_id: Optional[int] = None
    child_id: Optional[int] = None
    fail_parent_on_failure: bool = True
    attempts: int = 0
    status: JobStatus = JobStatus.QUEUED
    failure: Optional[str] = None
    result: dict = field(default_factory=dict)

    @property
    def in_flight(self) -> bool:
        return self.status is JobStatus.ACTIVE


class LeaseExpired(Exception):
    pass


@dataclass
class BatchLease:
    holder: str
    expires_at: int
    duration_s: int = 60
    renewal_interval_s: int = 30
    renewals: int = 0

    def renew(self, now: int) -> None:
        if now > self.expires_at:
            raise LeaseExpired(self.holder)
        self.expires_at = now + self.duration_s * 1000
        self.renewals += 1

    def live(self, now: int) -> bool:
        return now <= self.expires_at


class EphemeralQueueStore:
    def __init__(self) -> None:
        self.jobs: dict[int, FlowJob] = {}
        self.flows: dict[str, list[int]] = {}
        self._ready: dict[Stage, list[tuple[int, int, int]]] = {s: [] for s in Stage}
        self._ids = itertools.count(1)
        self._seqs = itertools.count(1)
        self.leases: dict[str, BatchLease] = {}
        self._live = {s: {JobStatus.QUEUED: 0, JobStatus.ACTIVE: 0} for s in Stage}
        self.counters: dict[Stage, dict[str, int]] = {
            s: {"completed": 0, "failed": 0, "retried": 0} for s in Stage
        }

    def flush(self) -> None:
        self.__init__()

    def _set_status(self, job: FlowJob, status: JobStatus) -> None:
        live = self._live[job.stage]
        if job.status in live:
            live[job.status] -= 1
        job.status = status
        if status in live:
            live[status] += 1

    # flows ------------------------------------------------------------------

    def add_flow(self, video_id: str, channel_id: str, priority: int) -> list[FlowJob]:
        """Create the four linked jobs; download is the child-most, upload the root."""
        if video_id in self.flows:
            raise ValueError(f"flow already queued for {video_id}")
        seq = next(self._seqs)
        jobs = [FlowJob(next(self._ids), video_id, channel_id, stage, priority, seq)
                for stage in STAGE_ORDER]
        for child, parent in zip(jobs, jobs[1:]):
            child.parent_id = parent.id
            parent.child_id = child.id
        for job in jobs:
            self.jobs[job.id] = job
            self._live[job.stage][JobStatus.QUEUED] += 1
        self.flows[video_id] = [j.id for j in jobs]
        self._push(jobs[0])
        return jobs

    def has_flow(self, video_id: str) -> bool:
        return video_id in self.flows

    def flow(self, video_id: str) -> list[FlowJob]:
        return [self.jobs[i] for i in self.flows.get(video_id, []) if i in self.jobs]

    def drop_flow(self, video_id: str) -> None:
        """Forget a flow without completing its remaining jobs."""
        self._retire(video_id)

    def _retire(self, video_id: str) -> None:
        for jid in self.flows.pop(video_id, []):
            job = self.jobs.pop(jid, None)
            if job is not None and job.status in self._live[job.stage]:
                self._live[job.stage][job.status] -= 1

    # readiness ----------------------------------------------------------------

    def _push(self, job: FlowJob) -> None:
        heapq.heappush(self._ready[job.stage], (job.priority, job.seq, job.id))

    def _runnable(self, job: Optional[FlowJob]) -> bool:
        if job is None or job.status is not JobStatus.QUEUED:
            return False
        child = self.jobs.get(job.child_id) if job.child_id else None
        return child is None or child.status is JobStatus.COMPLETED

    def _clean_top(self, stage: Stage) -> None:
        heap = self._ready[stage]
        while heap:
            prio, _, jid = heap[0]
            job = self.jobs.get(jid)
            if self._runnable(job) and job.priority == prio:
                return
            heapq.heappop(heap)

    def peek_ready(self, stage: Stage) -> Optional[FlowJob]:
        self._clean_top(stage)
        heap = self._ready[stage]
        return self.jobs[heap[0][2]] if heap else None

    def ready_count(self, stage: Stage) -> int:
        seen = set()
        for prio, _, jid in self._ready[stage]:
            job = self.jobs.get(jid)
            if self._runnable(job) and job.priority == prio:
                seen.add(jid)
        return len(seen)

    def take(self, stage: Stage) -> Optional[FlowJob]:
        self._clean_top(stage)
        heap = self._ready[stage]
        if not heap:
            return None
        _, _, jid = heapq.heappop(heap)
        job = self.jobs[jid]
        self._set_status(job, JobStatus.ACTIVE)
        job.attempts += 1
        return job

    def take_many(self, stage: Stage, limit: int) -> list[FlowJob]:
        out = []
        while len(out) < limit:
            job = self.take(stage)
            if job is None:
                break
            out.append(job)
        return out

    def set_priority(self, job: FlowJob, priority: int) -> None:
        job.priority = priority
        if self._runnable(job):
            self._push(job)

    def requeue(self, job: FlowJob) -> None:
        """Return an active job to its queue without consuming an attempt."""
        self._set_status(job, JobStatus.QUEUED)
        job.attempts = max(0, job.attempts - 1)
        self.counters[job.stage]["retried"] += 1
        self._push(job)

    # completion ---------------------------------------------------------------

    def complete(self, job: FlowJob, **result) -> Optional[FlowJob]:
        """Mark ``job`` done and release its parent. Returns the parent, if any."""
        self._set_status(job, JobStatus.COMPLETED)
        job.result.update(result)
        self.counters[job.stage]["completed"] += 1
        parent = self.jobs.get(job.parent_id) if job.parent_id else None
        if parent is None:
            self._retire(job.video_id)
            return None
        if parent.status is JobStatus.QUEUED:
            self._push(parent)
        return parent

    def fail(self, job: FlowJob, reason: str) -> list[FlowJob]:
        """Fail ``job``; ancestors fail with it. Returns every job marked failed."""
        failed = []
        cur: Optional[FlowJob] = job
        while cur is not None:
            if cur.status in (JobStatus.QUEUED, JobStatus.ACTIVE):
                self._set_status(cur, JobStatus.FAILED)
                cur.failure = reason if cur is job else f"child failed: {reason}"
                self.counters[cur.stage]["failed"] += 1
                failed.append(cur)
            if not cur.fail_parent_on_failure:
                break
            cur = self.jobs.get(cur.parent_id) if cur.parent_id else None
        self._retire(job.video_id)
        return failed

    # queries ------------------------------------------------------------------

    def queued_jobs_for_channel(self, channel_id: str) -> Iterator[FlowJob]:
        for jid in sorted(self.jobs):
            job = self.jobs[jid]
            if job.channel_id == channel_id and job.status is JobStatus.QUEUED:
                yield job

    def stage_counts(self, stage: Stage) -> dict[str, int]:
        live = self._live[stage]
        return {"queued": live[JobStatus.QUEUED], "active": live[JobStatus.ACTIVE],
                **self.counters[stage]}

    def active_count(self, stage: Stage) -> int:
        return self._live[stage][JobStatus.ACTIVE]
