"""Shared vocabulary: virtual clock, processes, video states, tiers and records."""
from __future__ import annotations

import dataclasses
import heapq
import itertools
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Generator, Iterable, Optional, Union

SECOND = 1_000
MINUTE = 60 * SECOND
HOUR = 60 * MINUTE
DAY = 24 * HOUR
# fixed-length month keeps expiry arithmetic exact
MONTH = 30 * DAY

GB = 1_000_000_000
MB = 1_000_000

MAX_VIDEO_DURATION_S = 10_800
MAX_VIDEO_SIZE_BYTES = 15_000 * MB


class IllegalTransition(Exception):
    pass


# ---------------------------------------------------------------------------
# Virtual time
# ---------------------------------------------------------------------------


class Event:
    __slots__ = ("time", "seq", "callback", "owner", "label", "cancelled")

    def __init__(self, time: int, seq: int, callback: Callable[[], Any], owner: str, label: str):
        self.time = time
        self.seq = seq
        self.callback = callback
        self.owner = owner
        self.label = label
        self.cancelled = False

    def __lt__(self, other: "Event") -> bool:
        return (self.time, self.seq) < (other.time, other.seq)

    def __repr__(self) -> str:
        return f"Event(t={self.time}, seq={self.seq}, owner={self.owner!r}, label={self.label!r})"


class Signal:
    """One-shot notification a process can wait on by yielding it."""

    def __init__(self, clock: "SimClock"):
        self.clock = clock
        self.fired = False
        self.value: Any = None
        self._waiters: list[Process] = []

    def fire(self, value: Any = None) -> None:
        if self.fired:
            return
        self.fired = True
        self.value = value
        waiters, self._waiters = self._waiters, []
        for proc in waiters:
            if proc.alive:
                proc._schedule_resume(0, value)

    def _add_waiter(self, proc: "Process") -> None:
        if self.fired:
            proc._schedule_resume(0, self.value)
        else:
            self._waiters.append(proc)

    def _remove_waiter(self, proc: "Process") -> None:
        if proc in self._waiters:
            self._waiters.remove(proc)


ProcessBody = Generator[Union[int, float, Signal, None], Any, Any]


class Process:
    """A generator driven by the clock.

    The body yields an integer delay in virtual milliseconds, ``None`` (resume
    at the same instant, after already-queued events) or a :class:`Signal`.
    """

    def __init__(self, clock: "SimClock", body: ProcessBody, owner: str, label: str):
        self.clock = clock
        self.body = body
        self.owner = owner
        self.label = label
        self.alive = True
        self.result: Any = None
        self.done = Signal(clock)
        self._pending: Optional[Event] = None
        self._waiting_on: Optional[Signal] = None

    def _schedule_resume(self, delay: int, value: Any) -> None:
        self._waiting_on = None
        self._pending = self.clock.schedule(
            delay, lambda: self._step(value), owner=self.owner, label=self.label
        )

    def _step(self, value: Any) -> None:
        self._pending = None
        if not self.alive:
            return
        try:
            cmd = self.body.send(value)
        except StopIteration as stop:
            self.alive = False
            self.result = stop.value
            self.clock._forget(self)
            self.done.fire(stop.value)
            return
        if isinstance(cmd, Signal):
            self._waiting_on = cmd
            cmd._add_waiter(self)
        elif cmd is None:
            self._schedule_resume(0, None)
        else:
            delay = int(cmd)
            if delay < 0:
                raise ValueError(f"negative delay {delay} from process {self.label}")
            self._schedule_resume(delay, None)

    def kill(self) -> None:
        """Stop the process without running any of its cleanup code."""
        if not self.alive:
            return
        self.alive = False
        if self._pending is not None:
            self.clock.cancel(self._pending)
            self._pending = None
        if self._waiting_on is not None:
            self._waiting_on._remove_waiter(self)
            self._waiting_on = None
        self.clock._forget(self)


class SimClock:
    """Virtual-millisecond clock with a deterministic pending-event set.

    Events at equal times dispatch in insertion order. Nothing here reads
    wall-clock time.
    """

    def __init__(self, start: int = 0):
        self.now = start
        self._heap: list[Event] = []
        self._seq = itertools.count()
        self._processes: dict[str, set[Process]] = {}
        self.dispatched = 0
        self.hooks: list[Callable[[Event], None]] = []

    # scheduling -----------------------------------------------------------

    def schedule(self, delay: int, callback: Callable[[], Any], *, owner: str = "world",
                 label: str = "") -> Event:
        if delay < 0:
            raise ValueError("cannot schedule in the past")
        return self.schedule_at(self.now + int(delay), callback, owner=owner, label=label)

    def schedule_at(self, at: int, callback: Callable[[], Any], *, owner: str = "world",
                    label: str = "") -> Event:
        if at < self.now:
            raise ValueError(f"cannot schedule at {at} < now {self.now}")
        ev = Event(int(at), next(self._seq), callback, owner, label)
        heapq.heappush(self._heap, ev)
        return ev

    def cancel(self, event: Event) -> None:
        event.cancelled = True

    def spawn(self, body: ProcessBody, *, owner: str = "world", label: str = "") -> Process:
        proc = Process(self, body, owner, label)
        self._processes.setdefault(owner, set()).add(proc)
        proc._schedule_resume(0, None)
        return proc

    def _forget(self, proc: Process) -> None:
        procs = self._processes.get(proc.owner)
        if procs is not None:
            procs.discard(proc)

    def drop_owner(self, owner: str) -> int:
        """Kill every process and cancel every pending event owned by ``owner``."""
        for proc in sorted(self._processes.pop(owner, set()), key=lambda p: id(p)):
            proc.alive = False
            proc._pending = None
            if proc._waiting_on is not None:
                proc._waiting_on._remove_waiter(proc)
        dropped = 0
        for ev in self._heap:
            if ev.owner == owner and not ev.cancelled:
                ev.cancelled = True
                dropped += 1
        return dropped

    # dispatch -------------------------------------------------------------

    def _prune(self) -> None:
        while self._heap and self._heap[0].cancelled:
            heapq.heappop(self._heap)

    def peek(self) -> Optional[int]:
        self._prune()
        return self._heap[0].time if self._heap else None

    @property
    def pending(self) -> list[tuple[int, Event]]:
        return [(ev.time, ev) for ev in sorted(self._heap) if not ev.cancelled]

    def step(self) -> Optional[Event]:
        self._prune()
        if not self._heap:
            return None
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        self.dispatched += 1
        ev.callback()
        for hook in self.hooks:
            hook(ev)
        return ev

    def advance(self, to: int) -> list[Event]:
        """Dispatch every event with time <= ``to``; afterwards ``now == to``."""
        if to < self.now:
            raise ValueError(f"cannot move clock back from {self.now} to {to}")
        fired = []
        while True:
            nxt = self.peek()
            if nxt is None or nxt > to:
                break
            fired.append(self.step())
        self.now = to
        return fired

    def run(self, until: Optional[int] = None, max_events: Optional[int] = None) -> int:
        count = 0
        while max_events is None or count < max_events:
            nxt = self.peek()
            if nxt is None or (until is not None and nxt > until):
                break
            self.step()
            count += 1
        if until is not None and (max_events is None or count < max_events):
            self.now = max(self.now, until)
        return count


def sleep_until(clock: SimClock, at: int) -> int:
    return max(0, at - clock.now)


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


class SeededRng:
    """Named, independently seeded random streams derived from one seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, random.Random] = {}

    def stream(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            # str seeds hash via sha512, so this is stable across interpreter runs
            rng = random.Random(f"{self.seed}/{name}")
            self._streams[name] = rng
        return rng

    def fresh(self, *parts: Any) -> random.Random:
        """A throwaway generator keyed by ``parts``, independent of call order."""
        return random.Random("/".join([str(self.seed), *map(str, parts)]))


# ---------------------------------------------------------------------------
# Video state machine
# ---------------------------------------------------------------------------


class VideoState(str, Enum):
    NEW = "New"
    CREATING_VIDEO = "CreatingVideo"
    VIDEO_CREATED = "VideoCreated"
    UPLOAD_STARTED = "UploadStarted"
    UPLOAD_SUCCEEDED = "UploadSucceeded"
    CREATION_FAILED = "CreationFailed"
    UPLOAD_FAILED = "UploadFailed"
    DELETED = "VideoUnavailable::Deleted"
    PRIVATE = "VideoUnavailable::Private"
    AGE_RESTRICTED = "VideoUnavailable::AgeRestricted"
    MEMBERS_ONLY = "VideoUnavailable::MembersOnly"
    LIVE_OFFLINE = "VideoUnavailable::LiveOffline"
    DOWNLOAD_TIMED_OUT = "VideoUnavailable::DownloadTimedOut"
    EMPTY_DOWNLOAD = "VideoUnavailable::EmptyDownload"
    POSTPROCESSING_ERROR = "VideoUnavailable::PostprocessingError"
    SKIPPED = "VideoUnavailable::Skipped"

    @property
    def is_unavailable(self) -> bool:
        return self.value.startswith("VideoUnavailable::")

    @property
    def has_sink_object(self) -> bool:
        return self in ON_SINK_STATES


PROCESSING_STATES = frozenset(s for s in VideoState if not s.is_unavailable)
UNAVAILABLE_STATES = frozenset(s for s in VideoState if s.is_unavailable)
ON_SINK_STATES = frozenset({
    VideoState.VIDEO_CREATED,
    VideoState.UPLOAD_STARTED,
    VideoState.UPLOAD_SUCCEEDED,
    VideoState.UPLOAD_FAILED,
})

TRANSITIONS: dict[VideoState, frozenset[VideoState]] = {
    VideoState.NEW: frozenset({VideoState.CREATING_VIDEO}) | UNAVAILABLE_STATES,
    VideoState.CREATING_VIDEO: frozenset({VideoState.VIDEO_CREATED, VideoState.CREATION_FAILED}),
    VideoState.VIDEO_CREATED: frozenset({VideoState.UPLOAD_STARTED}),
    VideoState.UPLOAD_STARTED: frozenset({VideoState.UPLOAD_SUCCEEDED, VideoState.UPLOAD_FAILED}),
    VideoState.UPLOAD_SUCCEEDED: frozenset(),
    VideoState.CREATION_FAILED: frozenset({VideoState.CREATING_VIDEO}),
    VideoState.UPLOAD_FAILED: frozenset({VideoState.UPLOAD_STARTED}),
    **{s: frozenset() for s in UNAVAILABLE_STATES},
}


def is_legal(current: VideoState, target: VideoState) -> bool:
    return target in TRANSITIONS[current]


# ---------------------------------------------------------------------------
# Tiers and records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TierCaps:
    video_cap: int
    size_cap: int
    referral_cap: int
    priority_bonus: int


class Tier(str, Enum):
    BRONZE = "Bronze"
    SILVER = "Silver"
    GOLD = "Gold"
    DIAMOND = "Diamond"

    @property
    def caps(self) -> TierCaps:
        return TIER_CAPS[self]

    @property
    def video_cap(self) -> int:
        return TIER_CAPS[self].video_cap

    @property
    def size_cap(self) -> int:
        return TIER_CAPS[self].size_cap

    @property
    def referral_cap(self) -> int:
        return TIER_CAPS[self].referral_cap

    @property
    def priority_bonus(self) -> int:
        return TIER_CAPS[self].priority_bonus


TIER_CAPS = {
    Tier.BRONZE: TierCaps(5, 1 * GB, 2, 0),
    Tier.SILVER: TierCaps(100, 10 * GB, 25, 20),
    Tier.GOLD: TierCaps(250, 100 * GB, 50, 20),
    Tier.DIAMOND: TierCaps(1000, 1000 * GB, 100, 20),
}


class ChannelStatus(str, Enum):
    # the production system has more statuses than these; extend as needed
    UNVERIFIED = "Unverified"
    VERIFIED = "Verified"
    SUSPENDED = "Suspended"
    OPTED_OUT = "OptedOut"


@dataclass
class TokenBundle:
    access_token: str
    access_expiry: int
    refresh_token: str
    refresh_last_used: int
    issued_at: int
    revoked: bool = False

    @classmethod
    def issue(cls, rng: random.Random, now: int) -> "TokenBundle":
        return cls(
            access_token=f"at-{rng.getrandbits(64):016x}",
            access_expiry=now + HOUR,
            refresh_token=f"rt-{rng.getrandbits(64):016x}",
            refresh_last_used=now,
            issued_at=now,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class VerificationVideo:
    url: str

    def to_dict(self) -> dict:
        return {"url": self.url}


AuthArtifact = Union[TokenBundle, VerificationVideo, None]


@dataclass
class VideoRecord:
    id: str
    channel_id: str
    published_at: int
    duration_s: int
    size_bytes: int
    state: VideoState = VideoState.NEW
    sink_object_id: Optional[int] = None
    asset_accepted: tuple[bool, bool] = (False, False)
    is_fresh: bool = False
    title: str = ""
    history: list[tuple[int, str, str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["state"] = self.state.value
        d["asset_accepted"] = list(self.asset_accepted)
        d["history"] = [list(h) for h in self.history]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VideoRecord":
        d = dict(d)
        d["state"] = VideoState(d["state"])
        d["asset_accepted"] = tuple(d.get("asset_accepted", (False, False)))
        d["history"] = [tuple(h) for h in d.get("history", [])]
        return cls(**d)


@dataclass
class ChannelRecord:
    id: str
    user_id: str
    joystream_channel_id: Optional[int] = None
    tier: Tier = Tier.BRONZE
    backlog_pct: float = 0.0
    subscriber_count: int = 0
    video_count: int = 0
    age_hours: float = 0.0
    status: ChannelStatus = ChannelStatus.UNVERIFIED
    auth_artifact: AuthArtifact = None
    pre_opt_out_status: Optional[Tier] = None
    referrer_channel_id: Optional[str] = None
    handle: str = ""
    enrolled_at: Optional[int] = None
    last_polled_at: Optional[int] = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tier"] = self.tier.value
        d["status"] = self.status.value
        d["pre_opt_out_status"] = self.pre_opt_out_status.value if self.pre_opt_out_status else None
        art = self.auth_artifact
        if isinstance(art, TokenBundle):
            d["auth_artifact"] = {"kind": "token", **art.to_dict()}
        elif isinstance(art, VerificationVideo):
            d["auth_artifact"] = {"kind": "video", **art.to_dict()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelRecord":
        d = dict(d)
        d["tier"] = Tier(d["tier"])
        d["status"] = ChannelStatus(d["status"])
        if d.get("pre_opt_out_status"):
            d["pre_opt_out_status"] = Tier(d["pre_opt_out_status"])
        art = d.get("auth_artifact")
        if isinstance(art, dict):
            art = dict(art)
            kind = art.pop("kind")
            d["auth_artifact"] = TokenBundle(**art) if kind == "token" else VerificationVideo(**art)
        return cls(**d)


def transition(record: VideoRecord, target: VideoState, *, now: int = 0,
               sink_object_id: Optional[int] = None) -> VideoRecord:
    """Move ``record`` along one state-machine edge and return the updated copy."""
    target = VideoState(target)
    if not is_legal(record.state, target):
        raise IllegalTransition(f"{record.id}: {record.state.value} -> {target.value}")
    if target is VideoState.VIDEO_CREATED:
        if sink_object_id is None:
            raise ValueError("VideoCreated requires the on-chain object id")
        object_id = sink_object_id
    elif target in ON_SINK_STATES:
        object_id = record.sink_object_id
    else:
        object_id = None
    return dataclasses.replace(
        record,
        state=target,
        sink_object_id=object_id,
        history=[*record.history, (now, record.state.value, target.value, "transition")],
    )


def force_state(record: VideoRecord, target: VideoState, *, now: int, reason: str,
                sink_object_id: Optional[int] = None) -> VideoRecord:
    """Write a state outside the normal edges (reconciliation and legacy paths).

    The reason is kept in the history so audits can tell these apart.
    """
    target = VideoState(target)
    if target in ON_SINK_STATES:
        object_id = sink_object_id if sink_object_id is not None else record.sink_object_id
        if object_id is None:
            raise ValueError(f"{target.value} requires the on-chain object id")
    else:
        object_id = None
    return dataclasses.replace(
        record,
        state=target,
        sink_object_id=object_id,
        history=[*record.history, (now, record.state.value, target.value, reason)],
    )


def all_edges() -> Iterable[tuple[VideoState, VideoState]]:
    for src, targets in TRANSITIONS.items():
        for dst in targets:
            yield src, dst
