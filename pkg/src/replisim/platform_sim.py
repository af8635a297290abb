"""Simulated source platform with coupled defenses.

Four layers interact here: a daily API quota ledger, per-identity rate and
timing analysis that answers with a bot challenge, OAuth-style token expiry,
and a corpus of channels and videos served through an operational API that
costs no quota.
"""
from __future__ import annotations

import math
import random
import statistics
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .domain import (DAY, GB, HOUR, MAX_VIDEO_DURATION_S, MB, MINUTE, MONTH, SECOND, SimClock,
                     TokenBundle)

DAILY_BUDGET = 10_000
QUOTA_COSTS: dict[str, tuple[int, int]] = {
    "channels.list": (1, 5),
    "search.list": (100, 100),
    "videos.list": (1, 7),
    "playlistItems.list": (1, 3),
    "tokenExchange": (0, 0),
}
DEFAULT_RATIONING = {"signup": 500, "sync": 9_500}
THUMBNAIL_BYTES = 2 * MB
VERIFICATION_TITLE = "I want to be in YPP"


class QuotaExceeded(Exception):
    """HTTP 403 quotaExceeded; nothing was spent."""


class ServiceUnavailable(Exception):
    pass


class InvalidGrant(Exception):
    """Refresh token expired or revoked."""


class VideoUnavailableError(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# ---------------------------------------------------------------------------
# Quota
# ---------------------------------------------------------------------------


class QuotaLedger:
    def __init__(self, clock: SimClock, daily_budget: int = DAILY_BUDGET,
                 rationing: Optional[dict[str, int]] = None):
        self.clock = clock
        self.daily_budget = daily_budget
        self.rationing = dict(rationing) if rationing else None
        self.day = clock.now // DAY
        self.spent_today = 0
        self.spent_by_service: dict[str, int] = {}
        self.rejected_today = 0
        self.total_spent = 0

    def _roll(self) -> None:
        day = self.clock.now // DAY
        if day != self.day:
            self.day = day
            self.spent_today = 0
            self.spent_by_service = {}
            self.rejected_today = 0

    def remaining(self, service: str = "sync") -> int:
        self._roll()
        left = self.daily_budget - self.spent_today
        if self.rationing is not None:
            left = min(left, self.rationing.get(service, 0) - self.spent_by_service.get(service, 0))
        return left

    def charge(self, op: str, service: str = "sync", cost: Optional[int] = None) -> int:
        lo, hi = QUOTA_COSTS[op]
        cost = lo if cost is None else int(cost)
        if not lo <= cost <= hi:
            raise ValueError(f"{op} costs {lo}-{hi} units, got {cost}")
        if cost > self.remaining(service):
            self.rejected_today += 1
            raise QuotaExceeded(f"{op} ({cost} units) over {service} budget")
        self.spent_today += cost
        self.spent_by_service[service] = self.spent_by_service.get(service, 0) + cost
        self.total_spent += cost
        return cost


# ---------------------------------------------------------------------------
# Bot detection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectorParams:
    # the real detector is opaque: these defaults are invented and tuned only
    # so that variance beats volume, as observed in production
    window_s: float = 600.0
    alpha: float = 1.0          # per request/minute
    beta: float = 5.0           # per concurrent connection
    gamma: float = 20.0         # regularity penalty weight
    cv_threshold: float = 0.5
    threshold: float = 500.0
    block_s: float = 6 * 3600.0
    half_life_s: float = 1800.0


class ScrapeOutcome(str, Enum):
    OK = "ok"
    BOT_CHALLENGE = "bot_challenge"


@dataclass
class DetectionState:
    recent: deque = field(default_factory=deque)
    concurrent: int = 0
    score: float = 0.0
    last_update: int = 0
    blocked_until: Optional[int] = None
    blocks: int = 0


def coefficient_of_variation(times: list[int]) -> Optional[float]:
    if len(times) < 3:
        return None
    gaps = [b - a for a, b in zip(times, times[1:])]
    mean = statistics.fmean(gaps)
    if mean <= 0:
        return 0.0
    return statistics.pstdev(gaps) / mean


def score_increment(params: DetectorParams, rate_per_min: float, connections: int,
                    cv: Optional[float]) -> float:
    regularity = 0.0 if cv is None else max(0.0, params.cv_threshold - cv)
    return params.alpha * rate_per_min + params.beta * connections + params.gamma * regularity


class Detector:
    def __init__(self, clock: SimClock, params: DetectorParams = DetectorParams(),
                 keep_trace: bool = True):
        self.clock = clock
        self.params = params
        self.states: dict[str, DetectionState] = {}
        self.keep_trace = keep_trace
        self.trace: list[dict] = []
        self.first_block_at: Optional[int] = None

    def state(self, identity: str) -> DetectionState:
        st = self.states.get(identity)
        if st is None:
            st = self.states[identity] = DetectionState(last_update=self.clock.now)
        return st

    def _decay(self, st: DetectionState, now: int) -> None:
        if now > st.last_update and st.score > 0:
            st.score *= 0.5 ** ((now - st.last_update) / (self.params.half_life_s * SECOND))
        st.last_update = max(st.last_update, now)

    def score(self, identity: str) -> float:
        st = self.state(identity)
        self._decay(st, self.clock.now)
        return st.score

    def is_blocked(self, identity: str) -> bool:
        st = self.states.get(identity)
        return bool(st and st.blocked_until is not None and self.clock.now < st.blocked_until)

    def open_connection(self, identity: str) -> None:
        self.state(identity).concurrent += 1

    def close_connection(self, identity: str) -> None:
        st = self.state(identity)
        st.concurrent = max(0, st.concurrent - 1)

    def observe(self, identity: str, kind: str, *, connections: Optional[int] = None) -> ScrapeOutcome:
        now = self.clock.now
        st = self.state(identity)
        self._decay(st, now)
        if st.blocked_until is not None and now < st.blocked_until:
            outcome = ScrapeOutcome.BOT_CHALLENGE
        else:
            window = self.params.window_s * SECOND
            st.recent.append(now)
            while st.recent and st.recent[0] <= now - window:
                st.recent.popleft()
            rate = len(st.recent) / (self.params.window_s / 60.0)
            k = st.concurrent if connections is None else connections
            st.score += score_increment(self.params, rate, max(1, k),
                                        coefficient_of_variation(list(st.recent)))
            if st.score > self.params.threshold:
                st.blocked_until = now + int(self.params.block_s * SECOND)
                st.blocks += 1
                if self.first_block_at is None:
                    self.first_block_at = now
                outcome = ScrapeOutcome.BOT_CHALLENGE
            else:
                outcome = ScrapeOutcome.OK
        if self.keep_trace:
            self.trace.append({"t": now, "identity": identity, "kind": kind, "outcome": outcome.value})
        return outcome

    def peek_score(self, identity: str) -> float:
        """Decayed score without touching state, so observing never perturbs a run."""
        st = self.states.get(identity)
        if st is None or st.score <= 0:
            return 0.0
        dt = max(0, self.clock.now - st.last_update)
        return st.score * 0.5 ** (dt / (self.params.half_life_s * SECOND))

    def max_score(self) -> float:
        return max((self.peek_score(i) for i in sorted(self.states)), default=0.0)

    def blocked_identities(self) -> int:
        return sum(1 for i in self.states if self.is_blocked(i))


# ---------------------------------------------------------------------------
# Tokens
# ---------------------------------------------------------------------------


class TokenStatus(str, Enum):
    VALID = "valid"
    EXPIRED_ACCESS = "expiredAccess"
    EXPIRED_REFRESH = "expiredRefresh"
    REVOKED = "revoked"


REFRESH_IDLE_LIMIT = 6 * MONTH
TESTING_CONSENT_LIFETIME = 7 * DAY


def token_lifecycle(bundle: TokenBundle, now: int, *, testing_consent: bool = False) -> TokenStatus:
    if bundle.revoked:
        return TokenStatus.REVOKED
    if testing_consent and now - bundle.issued_at > TESTING_CONSENT_LIFETIME:
        return TokenStatus.EXPIRED_REFRESH
    if now - bundle.refresh_last_used > REFRESH_IDLE_LIMIT:
        return TokenStatus.EXPIRED_REFRESH
    if now >= bundle.access_expiry:
        return TokenStatus.EXPIRED_ACCESS
    return TokenStatus.VALID


def refresh_tokens(bundle: TokenBundle, now: int, rng: random.Random, *,
                   testing_consent: bool = False) -> TokenBundle:
    status = token_lifecycle(bundle, now, testing_consent=testing_consent)
    if status in (TokenStatus.EXPIRED_REFRESH, TokenStatus.REVOKED):
        raise InvalidGrant(status.value)
    return TokenBundle(
        access_token=f"at-{rng.getrandbits(64):016x}",
        access_expiry=now + HOUR,
        refresh_token=bundle.refresh_token,
        refresh_last_used=now,
        issued_at=bundle.issued_at,
    )


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


@dataclass
class ChannelMeta:
    id: str
    handle: str
    subscriber_count: int
    video_count: int
    created_at: int  # virtual ms; may be negative (before the run)
    joystream_channel_id: Optional[int] = None


@dataclass
class VideoMeta:
    id: str
    channel_id: str
    title: str
    published_at: int  # unix seconds
    duration_s: int
    size_bytes: int
    visible_from: int = 0  # virtual ms at which it shows up on the channel
    private: bool = False
    unlisted: bool = False
    age_restricted: bool = False
    members_only: bool = False
    live: bool = False
    region_restricted: bool = False
    deleted: bool = False
    empty: bool = False
    metadata_missing_until: Optional[int] = None
    # False for entries that only exist because an old build queued them
    listed: bool = True

    @property
    def metadata_complete(self) -> bool:
        return True

    @property
    def url(self) -> str:
        return f"https://youtube.example/watch?v={self.id}"


@dataclass
class MetadataView:
    """What a metadata fetch returns at a given instant."""

    meta: VideoMeta
    metadata_complete: bool

    def __getattr__(self, name):
        return getattr(self.meta, name)


class PlatformCorpus:
    def __init__(self, epoch_start: int = 1_704_067_200):
        self.epoch_start = epoch_start
        self.channels: dict[str, ChannelMeta] = {}
        self.videos: dict[str, VideoMeta] = {}
        self._by_channel: dict[str, list[str]] = {}

    def add_channel(self, channel: ChannelMeta) -> ChannelMeta:
        self.channels[channel.id] = channel
        self._by_channel.setdefault(channel.id, [])
        return channel

    def add_video(self, video: VideoMeta) -> VideoMeta:
        self.videos[video.id] = video
        self._by_channel.setdefault(video.channel_id, []).append(video.id)
        return video

    def channel_videos(self, channel_id: str, now: int) -> list[VideoMeta]:
        return [self.videos[v] for v in self._by_channel.get(channel_id, [])
                if self.videos[v].listed and self.videos[v].visible_from <= now]

    def age_hours(self, channel_id: str, now: int) -> float:
        return (now - self.channels[channel_id].created_at) / HOUR

    def unix_time(self, now: int) -> int:
        return self.epoch_start + now // SECOND

    @staticmethod
    def sample_size_duration(rng: random.Random, median_size: int = 200 * MB,
                             median_duration_s: int = 600, sigma: float = 0.8) -> tuple[int, int]:
        size = int(rng.lognormvariate(math.log(median_size), sigma))
        duration = int(rng.lognormvariate(math.log(median_duration_s), sigma))
        # platform maxima, far above the replication caps
        return min(max(size, 1 * MB), 256 * GB), min(max(duration, 1), 12 * 3600)

    @classmethod
    def generate(cls, rng: random.Random, *, channels: int, videos_per_channel: int,
                 subscribers: tuple[int, int] = (50, 100_000), epoch_start: int = 1_704_067_200,
                 backlog_span_days: int = 365, new_video_every_s: Optional[int] = None,
                 new_videos_per_channel: int = 0, median_size: int = 200 * MB,
                 median_duration_s: int = 600) -> "PlatformCorpus":
        """Seed-deterministic synthetic corpus; sizes and durations are log-normal."""
        corpus = cls(epoch_start)
        for c in range(channels):
            cid = f"UC{c:06d}"
            corpus.add_channel(ChannelMeta(
                id=cid, handle=f"@creator{c}",
                subscriber_count=rng.randint(*subscribers),
                video_count=videos_per_channel + new_videos_per_channel,
                created_at=-int(rng.uniform(60, 3000)) * DAY,
                joystream_channel_id=1000 + c,
            ))
            for n in range(videos_per_channel + new_videos_per_channel):
                size, duration = cls.sample_size_duration(rng, median_size, median_duration_s)
                if n < videos_per_channel:
                    visible = 0
                    published = epoch_start - int(rng.uniform(1, backlog_span_days) * 86_400)
                else:
                    step = new_video_every_s or DAY // SECOND
                    visible = (n - videos_per_channel + 1) * step * SECOND
                    published = epoch_start + visible // SECOND
                corpus.add_video(VideoMeta(
                    id=f"{cid}-v{n:04d}", channel_id=cid, title=f"video {n}",
                    published_at=published, duration_s=min(duration, MAX_VIDEO_DURATION_S),
                    size_bytes=size, visible_from=visible,
                ))
        return corpus


# ---------------------------------------------------------------------------
# Facade
# ---------------------------------------------------------------------------


@dataclass
class ScrapeResponse:
    outcome: ScrapeOutcome
    size_bytes: int = 0
    meta: Optional[VideoMeta] = None


class PlatformSim:
    def __init__(self, clock: SimClock, corpus: PlatformCorpus, *,
                 ledger: Optional[QuotaLedger] = None, detector: Optional[Detector] = None,
                 testing_consent: bool = False):
        self.clock = clock
        self.corpus = corpus
        self.ledger = ledger or QuotaLedger(clock)
        self.detector = detector or Detector(clock)
        self.testing_consent = testing_consent
        self.api_up = True
        self.operational_api_up = True
        self.operational_queries = 0

    # official API ---------------------------------------------------------

    def api_call(self, op: str, *, service: str = "sync", cost: Optional[int] = None) -> int:
        if not self.api_up:
            raise ServiceUnavailable("platform API down")
        return self.ledger.charge(op, service, cost)

    def token_exchange(self, bundle: TokenBundle, rng: random.Random) -> TokenBundle:
        self.api_call("tokenExchange", service="signup")
        return refresh_tokens(bundle, self.clock.now, rng, testing_consent=self.testing_consent)

    # operational API --------------------------------------------------------

    def _operational(self) -> None:
        if not self.operational_api_up:
            raise ServiceUnavailable("operational API down")
        self.operational_queries += 1

    def operational_api_query(self, query: str, **params):
        """Same corpus as the official API, zero quota and no tokens."""
        self._operational()
        now = self.clock.now
        if query == "channel":
            ch = self.corpus.channels.get(params["channel_id"])
            if ch is None:
                return None
            return {"id": ch.id, "handle": ch.handle, "subscriber_count": ch.subscriber_count,
                    "video_count": ch.video_count, "age_hours": self.corpus.age_hours(ch.id, now),
                    "joystream_channel_id": ch.joystream_channel_id}
        if query == "channel_videos":
            return self.corpus.channel_videos(params["channel_id"], now)
        if query == "video_by_url":
            vid = params["url"].rsplit("v=", 1)[-1]
            meta = self.corpus.videos.get(vid)
            if meta is None or meta.deleted or meta.visible_from > now:
                return None
            return {"id": meta.id, "channel_id": meta.channel_id, "title": meta.title,
                    "unlisted": meta.unlisted, "private": meta.private}
        raise ValueError(f"unknown query {query!r}")

    def channel_stats(self, channel_ids: list[str]) -> dict[str, Optional[dict]]:
        self._operational()
        now = self.clock.now
        out = {}
        for cid in channel_ids:
            ch = self.corpus.channels.get(cid)
            out[cid] = None if ch is None else {
                "subscriber_count": ch.subscriber_count, "video_count": ch.video_count,
                "age_hours": self.corpus.age_hours(cid, now)}
        return out

    def video_metadata(self, video_ids: list[str]) -> dict[str, Optional[MetadataView]]:
        self._operational()
        now = self.clock.now
        out: dict[str, Optional[MetadataView]] = {}
        for vid in video_ids:
            meta = self.corpus.videos.get(vid)
            if meta is None or meta.deleted:
                out[vid] = None
            else:
                missing = meta.metadata_missing_until is not None and now < meta.metadata_missing_until
                out[vid] = MetadataView(meta, not missing)
        return out

    # scraping -----------------------------------------------------------------

    def scrape(self, identity: str, kind: str, video_id: str) -> ScrapeResponse:
        """One yt-dlp style request: ``check``, ``thumbnail`` or ``video``.

        Raises VideoUnavailableError for content problems once past the detector.
        """
        outcome = self.detector.observe(identity, kind)
        if outcome is ScrapeOutcome.BOT_CHALLENGE:
            return ScrapeResponse(outcome)
        meta = self.corpus.videos.get(video_id)
        if meta is None or meta.deleted:
            raise VideoUnavailableError("deleted")
        for flag in ("private", "members_only", "age_restricted", "live", "region_restricted"):
            if getattr(meta, flag):
                raise VideoUnavailableError(flag)
        now = self.clock.now
        if meta.metadata_missing_until is not None and now < meta.metadata_missing_until:
            raise VideoUnavailableError("missing_metadata")
        if kind == "check":
            return ScrapeResponse(outcome, meta=meta)
        if kind == "thumbnail":
            return ScrapeResponse(outcome, size_bytes=THUMBNAIL_BYTES, meta=meta)
        if meta.empty:
            return ScrapeResponse(outcome, size_bytes=0, meta=meta)
        return ScrapeResponse(outcome, size_bytes=meta.size_bytes, meta=meta)


def minutes(n: float) -> int:
    return int(n * MINUTE)
