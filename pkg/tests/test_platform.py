import random

import pytest
from hypothesis import given, settings, strategies as st

from replisim.domain import DAY, HOUR, MINUTE, MONTH, SECOND, SimClock, TokenBundle
from replisim.platform_sim import (DAILY_BUDGET, Detector, DetectorParams, InvalidGrant,
                                   PlatformCorpus, PlatformSim, QuotaExceeded, QuotaLedger,
                                   ScrapeOutcome, ServiceUnavailable, TokenStatus, VideoMeta,
                                   VideoUnavailableError, coefficient_of_variation,
                                   refresh_tokens, score_increment, token_lifecycle)


# quota ---------------------------------------------------------------------


def test_daily_budget_and_rollover():
    clock = SimClock()
    ledger = QuotaLedger(clock)
    for _ in range(100):
        ledger.charge("search.list")
    assert ledger.spent_today == DAILY_BUDGET
    with pytest.raises(QuotaExceeded):
        ledger.charge("videos.list")
    assert ledger.spent_today == DAILY_BUDGET and ledger.rejected_today == 1
    clock.advance(DAY)
    assert ledger.remaining() == DAILY_BUDGET
    ledger.charge("channels.list", cost=5)
    assert ledger.total_spent == DAILY_BUDGET + 5


def test_cost_ranges():
    ledger = QuotaLedger(SimClock())
    with pytest.raises(ValueError):
        ledger.charge("videos.list", cost=8)
    assert ledger.charge("videos.list", cost=7) == 7


def test_rationing():
    ledger = QuotaLedger(SimClock(), rationing={"signup": 500, "sync": 9_500})
    for _ in range(5):
        ledger.charge("search.list", service="signup")
    with pytest.raises(QuotaExceeded):
        ledger.charge("videos.list", service="signup")
    assert ledger.remaining("sync") == 9_500


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["search.list", "videos.list", "channels.list"]), max_size=300))
def test_never_overspends(ops):
    ledger = QuotaLedger(SimClock(), daily_budget=500)
    for op in ops:
        try:
            ledger.charge(op)
        except QuotaExceeded:
            pass
        assert 0 <= ledger.spent_today <= 500


# detector ------------------------------------------------------------------


def test_coefficient_of_variation():
    assert coefficient_of_variation([0, 10]) is None
    assert coefficient_of_variation([0, 10, 20, 30]) == 0.0
    assert coefficient_of_variation([0, 10, 30]) == pytest.approx(5 / 15)


def test_score_increment():
    p = DetectorParams()
    assert score_increment(p, 2.0, 3, None) == 2 + 15
    assert score_increment(p, 0, 1, 0.0) == 5 + 20 * 0.5
    assert score_increment(p, 0, 1, 0.9) == 5


def test_regular_high_rate_gets_blocked_and_expires():
    clock = SimClock()
    det = Detector(clock)
    outcomes = []
    for _ in range(200):
        outcomes.append(det.observe("a", "video", connections=10))
        clock.advance(clock.now + SECOND)
    assert ScrapeOutcome.BOT_CHALLENGE in outcomes
    assert det.is_blocked("a")
    first = det.first_block_at
    assert first is not None
    clock.advance(first + 6 * HOUR)
    assert not det.is_blocked("a")
    assert det.blocked_identities() == 0


def test_irregular_slow_traffic_stays_clean():
    clock = SimClock()
    det = Detector(clock)
    rng = random.Random(1)
    for _ in range(500):
        assert det.observe("a", "video", connections=1) is ScrapeOutcome.OK
        clock.advance(clock.now + int(rng.uniform(30, 150) * SECOND))
    assert det.first_block_at is None


def test_score_decays_with_half_life():
    clock = SimClock()
    det = Detector(clock)
    det.observe("a", "video", connections=1)
    s0 = det.peek_score("a")
    clock.advance(30 * MINUTE)
    assert det.peek_score("a") == pytest.approx(s0 / 2)
    assert det.score("a") == pytest.approx(s0 / 2)


def test_peek_does_not_mutate():
    clock = SimClock()
    det = Detector(clock)
    det.observe("a", "video")
    clock.advance(HOUR)
    snap = (det.states["a"].score, det.states["a"].last_update)
    det.peek_score("a")
    det.max_score()
    assert (det.states["a"].score, det.states["a"].last_update) == snap
    assert det.peek_score("unseen") == 0.0 and "unseen" not in det.states


# tokens --------------------------------------------------------------------


def test_token_lifecycle_boundaries():
    b = TokenBundle.issue(random.Random(0), 0)
    assert token_lifecycle(b, HOUR - 1) is TokenStatus.VALID
    assert token_lifecycle(b, HOUR) is TokenStatus.EXPIRED_ACCESS
    assert token_lifecycle(b, 6 * MONTH) is TokenStatus.EXPIRED_ACCESS
    assert token_lifecycle(b, 6 * MONTH + 1) is TokenStatus.EXPIRED_REFRESH
    assert token_lifecycle(b, 7 * DAY + 1, testing_consent=True) is TokenStatus.EXPIRED_REFRESH


def test_refresh_resets_idle_clock():
    rng = random.Random(0)
    b = TokenBundle.issue(rng, 0)
    b2 = refresh_tokens(b, 5 * MONTH, rng)
    assert b2.access_expiry == 5 * MONTH + HOUR
    assert token_lifecycle(b2, 10 * MONTH) is TokenStatus.EXPIRED_ACCESS
    with pytest.raises(InvalidGrant):
        refresh_tokens(b, 6 * MONTH + 1, rng)


# platform ------------------------------------------------------------------


def _platform():
    clock = SimClock()
    corpus = PlatformCorpus()
    corpus.add_video(VideoMeta("ok", "c", "t", 0, 60, 1000))
    corpus.add_video(VideoMeta("priv", "c", "t", 0, 60, 1000, private=True))
    corpus.add_video(VideoMeta("late", "c", "t", 0, 60, 1000, metadata_missing_until=HOUR))
    corpus.add_video(VideoMeta("gone", "c", "t", 0, 60, 1000, deleted=True))
    return clock, PlatformSim(clock, corpus)


def test_operational_api_costs_no_quota():
    clock, p = _platform()
    views = p.video_metadata(["ok", "late", "gone", "nope"])
    assert views["gone"] is None and views["nope"] is None
    assert views["ok"].metadata_complete and not views["late"].metadata_complete
    assert p.operational_api_query("video_by_url", url="https://x/watch?v=ok")["id"] == "ok"
    assert p.ledger.total_spent == 0
    clock.advance(HOUR)
    assert p.video_metadata(["late"])["late"].metadata_complete


def test_outages():
    _, p = _platform()
    p.api_up = False
    with pytest.raises(ServiceUnavailable):
        p.api_call("videos.list")
    p.operational_api_up = False
    with pytest.raises(ServiceUnavailable):
        p.video_metadata(["ok"])


def test_scrape():
    _, p = _platform()
    assert p.scrape("id", "video", "ok").size_bytes == 1000
    assert p.scrape("id", "thumbnail", "ok").size_bytes > 0
    for vid, reason in (("priv", "private"), ("gone", "deleted"), ("late", "missing_metadata")):
        with pytest.raises(VideoUnavailableError) as err:
            p.scrape("id", "check", vid)
        assert err.value.reason == reason


def test_corpus_generation_is_deterministic():
    a = PlatformCorpus.generate(random.Random(3), channels=3, videos_per_channel=4)
    b = PlatformCorpus.generate(random.Random(3), channels=3, videos_per_channel=4)
    assert a.videos == b.videos and len(a.videos) == 12
