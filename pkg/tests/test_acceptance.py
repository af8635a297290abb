"""End-to-end acceptance criteria 1-10; each test prints one PASS/FAIL line."""
import contextlib
import json
import random
from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from replisim.domain import DAY, MONTH, SECOND, SimClock, Tier, VideoRecord, VideoState
from replisim.harness import (Simulation, anti_detection_pair, incident_pair, incident_scenario,
                              run_scenario, sweep_crash_points)
from replisim.harness.runtime import POLLUTION_MIX
from replisim.platform_sim import DAILY_BUDGET, QuotaExceeded, QuotaLedger
from replisim.proxynet import FAULTY_TTL_S, ProxyPool
from replisim.sink import Extrinsic
from replisim.scheduler import PriorityInputs, compute_priority
from replisim.store import DurableStore

from conftest import small_config

S = VideoState


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def report(n, text):
        ok = False
        try:
            yield
            ok = True
        finally:
            with capsys.disabled():
                print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {text}")
    return report


# 1 -------------------------------------------------------------------------


def sweep_config(wal):
    return small_config(toggles={"wal_enabled": wal, "sleep_enabled": False})


def test_c01_wal_no_duplicates(criterion):
    with criterion(1, "WAL sweep has zero duplicates; WAL-off sweep has some"):
        on = sweep_crash_points(sweep_config(True))
        off = sweep_crash_points(sweep_config(False))
        assert on.baseline_events <= 200
        assert len(on.duplicates_by_crash_point) == on.baseline_events
        assert on.max_duplicates == 0
        assert off.max_duplicates >= 1 and off.points_with_duplicates


# 2 -------------------------------------------------------------------------


def test_c02_dynamo_incident(criterion):
    with criterion(2, "provisioned-capacity incident gives 28 duplicates, fixed variant 0"):
        broken, fixed = (run_scenario(c) for c in incident_pair("dynamo-duplicates"))
        assert broken.summary["duplicates"] == 28
        assert broken.summary["duplicated_videos"] == 28
        assert fixed.summary["duplicates"] == 0
        assert fixed.summary["videos_by_state"]["UploadSucceeded"] == 48


# 3 -------------------------------------------------------------------------


def test_c03_oauth_incident(criterion):
    with criterion(3, "10 000 token channels opt out in one polling cycle; verification mode 0"):
        broken, fixed = (run_scenario(c) for c in incident_pair("oauth-mass-optout"))
        assert broken.summary["channels_by_status"]["OptedOut"] >= 10_000
        assert fixed.summary["channels_by_status"]["OptedOut"] == 0
        # records are one polling interval (one day) apart
        series = [json.loads(r) for r in broken.records]
        opted = [r["channels"]["OptedOut"] for r in series]
        jump = next(i for i, n in enumerate(opted) if n)
        assert opted[jump - 1] == 0 and opted[jump] >= 10_000
        assert series[jump]["t"] - series[jump - 1]["t"] == DAY
        # the cycle that flipped them is the first one after re-enabling the API path
        assert series[jump]["t"] >= 6 * MONTH + DAY
        assert max(json.loads(r)["channels"]["OptedOut"] for r in fixed.records) == 0


# 4 -------------------------------------------------------------------------


def test_c04_pollution_incident(criterion, tmp_path):
    with criterion(4, "719 errors/day before cleanup, <5 after; backup complete; missing metadata requeued"):
        broken_cfg, fixed_cfg = incident_pair("queue-pollution")
        sim = Simulation(broken_cfg, backup_dir=str(tmp_path))
        res = sim.run()
        errors = res.summary["errors_by_day"]
        assert [errors.get(str(d), 0) for d in range(3)] == [719, 719, 719]
        assert all(errors.get(str(d), 0) < 5 for d in range(3, 6))
        (report,) = res.summary["cleanups"]
        counts = dict(report["counts"])
        counts.pop("valid", None)
        assert counts == POLLUTION_MIX
        backup = json.loads(open(sim.cleanup_backups[0]).read())
        assert len(backup) == report["deleted"] == POLLUTION_MIX["missing"]
        for row in backup:
            assert sim.store.get_video(row["channel_id"], row["id"]) is None
            assert row["state"] == "New"
        deleted_keys = {json.dumps(json.loads(l)["key"]) for l in sim.store.write_log
                        if json.loads(l)["op"] == "delete"}
        assert deleted_keys == {json.dumps([r["channel_id"], r["id"]]) for r in backup}
        assert report["requeued"] == POLLUTION_MIX["missing_metadata"]
        stale_meta = [m.id for m in sim.corpus.videos.values() if m.metadata_missing_until]
        for vid in stale_meta:
            row = sim.store.get_video(vid.split("-stale")[0], vid)
            assert row is not None and row.state is not S.DELETED
        fixed = run_scenario(fixed_cfg)
        assert fixed.summary["max_errors_per_day"] < 5


# 5 -------------------------------------------------------------------------


def oracle(inp):
    with mpmath.workdps(80):
        sudo = 10 + (20 if inp.is_new and inp.duration_s > 300 else 0) + \
            (20 if inp.tier is not Tier.BRONZE else 0)
        bp = mpmath.mpf(inp.backlog_pct.numerator) / inp.backlog_pct.denominator
        score = bp * 1000 + sudo * 2000 + (mpmath.mpf(inp.published_at) - 946_684_800)
        p = 2_097_152 - int(mpmath.floor(score / 201_100 * 2_097_152))
        return min(2_097_152, max(0, p))


def random_inputs(rng):
    return PriorityInputs(
        published_at=946_684_800 + rng.randint(-250_000, 250_000),
        duration_s=rng.randint(0, 10_800), is_new=rng.random() < 0.5,
        tier=rng.choice(list(Tier)),
        backlog_pct=Fraction(rng.randint(0, 100_000), 1000))


def test_c05_priority_oracle(criterion):
    with criterion(5, "10^4 priorities match the arbitrary-precision oracle; monotone on 10^3 pairs"):
        rng = random.Random(20240501)
        for _ in range(10_000):
            inp = random_inputs(rng)
            assert compute_priority(inp) == oracle(inp)
        for _ in range(1_000):
            a = random_inputs(rng)
            tier = rng.choice([Tier.SILVER, Tier.GOLD, Tier.DIAMOND])
            bronze = PriorityInputs(a.published_at, a.duration_s, a.is_new, Tier.BRONZE, a.backlog_pct)
            assert compute_priority(PriorityInputs(a.published_at, a.duration_s, a.is_new, tier,
                                                   a.backlog_pct)) <= compute_priority(bronze)
            lo, hi = sorted((a.backlog_pct, Fraction(rng.randint(0, 100))))
            assert compute_priority(PriorityInputs(a.published_at, a.duration_s, a.is_new, a.tier, hi)) \
                <= compute_priority(PriorityInputs(a.published_at, a.duration_s, a.is_new, a.tier, lo))
            later = PriorityInputs(a.published_at + rng.randint(0, 300_000), a.duration_s, a.is_new,
                                   a.tier, a.backlog_pct)
            assert compute_priority(later) <= compute_priority(a)


# 6 -------------------------------------------------------------------------


def test_c06_quota_ledger(criterion):
    with criterion(6, "100 searches exhaust the budget; token exchange is free; rationing isolates"):
        clock = SimClock()
        ledger = QuotaLedger(clock)
        for _ in range(100):
            ledger.charge("search.list")
        assert ledger.spent_today == DAILY_BUDGET
        with pytest.raises(QuotaExceeded):
            ledger.charge("search.list")
        for _ in range(50):
            assert ledger.charge("tokenExchange") == 0
        rationed = QuotaLedger(clock, rationing={"signup": 500, "sync": 9_500})
        for _ in range(5):
            rationed.charge("search.list", service="signup")
        with pytest.raises(QuotaExceeded):
            rationed.charge("channels.list", service="signup")
        assert rationed.remaining("sync") == 9_500
        for _ in range(95):
            rationed.charge("search.list", service="sync")
        with pytest.raises(QuotaExceeded):
            rationed.charge("videos.list", service="sync")
        assert rationed.spent_today == DAILY_BUDGET


# 7 -------------------------------------------------------------------------


def test_c07_anti_detection_ordering(criterion):
    with criterion(7, "fast scraper is blocked first; slow one survives 7 days and downloads more"):
        slow_cfg, fast_cfg = anti_detection_pair(days=7)
        slow, fast = run_scenario(slow_cfg), run_scenario(fast_cfg)
        assert fast.summary["first_block_at"] is not None
        assert slow.summary["first_block_at"] is None
        assert slow.summary["t_end"] == 7 * DAY
        assert (slow.summary["counters"]["downloads_completed"]
                > fast.summary["counters"]["downloads_completed"])


# 8 -------------------------------------------------------------------------


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(st.lists(st.tuples(st.sampled_from(["bind", "release", "fault", "tick"]),
                          st.integers(0, 7)), max_size=60), st.integers(0, 2**32))
def test_c08a_exclusivity(ops, seed):
    clock = SimClock()
    eps = [f"p{i}" for i in range(8)]
    pool = ProxyPool(clock, eps)
    rng = random.Random(seed)
    held = []
    for op, arg in ops:
        if op == "bind":
            ep = pool.bind(rng)
            if ep is not None:
                assert ep not in held and not pool.is_faulty(ep)
                held.append(ep)
            else:
                assert not pool.eligible()
        elif op == "release" and held:
            pool.release(held.pop(arg % len(held)))
        elif op == "fault":
            pool.report_faulty(eps[arg])
            if eps[arg] in held:
                held.remove(eps[arg])
        else:
            clock.advance(clock.now + arg * 3600 * SECOND)
        assert len(held) == len(set(held))


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(st.integers(0, 10**9))
def test_c08b_ttl_boundary(t):
    pool = ProxyPool(SimClock(t), ["p"])
    pool.report_faulty("p")
    end = t + FAULTY_TTL_S * SECOND
    assert pool.is_faulty("p", end - SECOND)
    assert pool.is_faulty("p", end - 1)
    assert not pool.is_faulty("p", end)
    assert not pool.is_faulty("p", end + SECOND)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(st.lists(st.integers(1, 600), min_size=1, max_size=25), st.integers(1, 4),
       st.integers(0, 2**32))
def test_c08c_spin_liveness(holds, n_proxies, seed):
    clock = SimClock()
    pool = ProxyPool(clock, [f"p{i}" for i in range(n_proxies)])
    rng = random.Random(seed)
    done = []
    live = []

    def job(i, hold_s):
        while True:
            ep = pool.bind(rng, ticket=i)
            if ep is not None:
                break
            yield 30 * SECOND
        live.append(ep)
        assert len(live) == len(set(live))
        yield hold_s * SECOND
        live.remove(ep)
        pool.release(ep)
        done.append(i)

    for i, h in enumerate(holds):
        clock.spawn(job(i, h))
    clock.run()
    assert sorted(done) == list(range(len(holds)))


def test_c08_proxy_properties(criterion):
    with criterion(8, "proxy exclusivity, TTL boundary and spin liveness over 10^3 schedules each"):
        test_c08a_exclusivity()
        test_c08b_ttl_boundary()
        test_c08c_spin_liveness()


# 9 -------------------------------------------------------------------------


def ten_video_config(**extra):
    # a visibility delay keeps uploads open across event boundaries
    return small_config(channels={"videos_per_channel": 10}, duration_s=1800,
                        metrics_interval_s=1800, storage={"nodes": 1, "max_delay_s": 20},
                        **extra)


def check_post_restart(sim):
    store, chain = sim.store, sim.chain
    replay = DurableStore.from_write_log(SimClock(), store.write_log)
    assert replay.snapshot() == store.snapshot()
    for v in store.videos():
        assert v.state not in (S.CREATING_VIDEO, S.UPLOAD_STARTED)
        if v.state in (S.VIDEO_CREATED, S.UPLOAD_FAILED, S.UPLOAD_SUCCEEDED):
            assert v.sink_object_id in chain.query_video(v.id)
        if v.state is S.UPLOAD_SUCCEEDED:
            assert sim.storage.is_accepted(v.sink_object_id) == (True, True)
        if v.state is S.NEW:
            assert chain.query_video(v.id) == []


def run_to_reconcile(sim):
    while sim.pipeline is None or sim.pipeline.reconcile_report is None:
        assert sim.clock.step() is not None
    return sim.pipeline.reconcile_report


def four_combinations():
    """Seed CreatingVideo/UploadStarted rows for each (on chain, accepted) case, then restart."""
    sim = Simulation(small_config(channels={"videos_per_channel": 0})).build()
    receipt = sim.chain.submit_batch("elsewhere", [Extrinsic(v, "UC000000") for v in
                                                   ("c-on", "u-off", "u-on")], [0, 1, 2])
    sim.clock.run(until=6 * SECOND)
    oids = receipt.object_ids
    sim.storage.accepted[oids["u-on"]] = {"media", "thumbnail"}
    rows = [VideoRecord("c-off", "UC000000", 0, 60, 1, state=S.CREATING_VIDEO),
            VideoRecord("c-on", "UC000000", 0, 60, 1, state=S.CREATING_VIDEO),
            VideoRecord("u-off", "UC000000", 0, 60, 1, state=S.UPLOAD_STARTED,
                        sink_object_id=oids["u-off"]),
            VideoRecord("u-on", "UC000000", 0, 60, 1, state=S.UPLOAD_STARTED,
                        sink_object_id=oids["u-on"])]
    for row in rows:
        sim.store.save_video(row)
    sim.crash()
    run_to_reconcile(sim)
    check_post_restart(sim)
    return {r.id: sim.store.get_video("UC000000", r.id).state.value for r in rows}


OTHER_FAULTS = [
    {"kind": "sinkOutage", "duration_s": 60},
    {"kind": "storageNodeDown", "duration_s": 120},
    {"kind": "platformApiDown", "duration_s": 60},
    {"kind": "throughputBurst", "table": "videos", "writes": 50},
]


def test_c09_reconciliation_oracle(criterion):
    with criterion(9, "every single-fault schedule on 10 videos reconciles to the replay oracle"):
        base = Simulation(ten_video_config())
        baseline = base.run()
        events = baseline.summary["events"]
        assert baseline.summary["videos_by_state"]["UploadSucceeded"] == 10
        combos = set()
        for point in range(1, events + 1):
            sim = Simulation(ten_video_config()).build()
            if sim.clock.run(max_events=point) < point:
                continue
            pending = {v.id: v.state for v in sim.store.videos()}
            sim.crash()
            run_to_reconcile(sim)
            check_post_restart(sim)
            for vid, state in pending.items():
                if state in (S.CREATING_VIDEO, S.UPLOAD_STARTED):
                    after = sim.store.get_video("UC000000", vid)
                    combos.add((state.value, after.state.value))
            sim.clock.run(until=int(sim.config.duration_s * SECOND))
            assert sim.chain.duplicate_count() == 0
            assert sim.store.count_videos_in_state(S.UPLOAD_SUCCEEDED) == 10
        # the two in-flight windows a crash can actually hit
        assert ("CreatingVideo", "VideoCreated") in combos
        assert ("UploadStarted", "UploadFailed") in combos
        assert four_combinations() == {
            "c-off": "New", "c-on": "VideoCreated", "u-off": "UploadFailed", "u-on": "UploadSucceeded"}
        for fault in OTHER_FAULTS:
            for at in (0, 5, 30, 90):
                cfg = ten_video_config(faults=[{**fault, "at_s": at},
                                               {"kind": "processCrash", "at_s": at + 1}])
                sim = Simulation(cfg)
                res = sim.run()
                assert res.summary["store_matches_replay"]
                assert res.summary["duplicates"] == 0


# 10 ------------------------------------------------------------------------


def test_c10_determinism(criterion):
    with criterion(10, "same seed gives byte-identical metric streams"):
        configs = [
            small_config(seed=3, toggles={"sleep_enabled": True}, metrics_interval_s=10,
                         faults=[{"kind": "processCrash", "at_s": 30}]),
            incident_scenario("dynamo-duplicates"),
            incident_scenario("queue-pollution"),
            anti_detection_pair(days=1)[1],
        ]
        for cfg in configs:
            a, b = run_scenario(cfg), run_scenario(cfg)
            assert a.records and a.metric_stream == b.metric_stream
