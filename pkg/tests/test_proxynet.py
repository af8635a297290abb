import random
import statistics

import pytest
from hypothesis import given, settings, strategies as st

from replisim.domain import SECOND, SimClock
from replisim.proxynet import (FAULTY_TTL_S, DirectPool, ProxyPool, SleepPolicy, TunnelPool,
                               UnknownEndpoint, make_pool, pre_download_sleep)

EPS = [f"p{i}" for i in range(4)]


def test_ttl_boundaries():
    clock = SimClock()
    pool = ProxyPool(clock, EPS)
    pool.report_faulty("p0")
    ttl = FAULTY_TTL_S * SECOND
    assert pool.is_faulty("p0", ttl - 1)
    assert not pool.is_faulty("p0", ttl)
    assert not pool.is_faulty("p0", ttl + 1)
    assert "p0" not in pool.eligible(ttl - 1)
    assert "p0" in pool.eligible(ttl)


def test_repeat_report_restarts_ttl():
    clock = SimClock()
    pool = ProxyPool(clock, EPS)
    pool.report_faulty("p0")
    clock.advance(1000 * SECOND)
    assert pool.report_faulty("p0") == clock.now + FAULTY_TTL_S * SECOND


def test_unknown_endpoint():
    pool = ProxyPool(SimClock(), EPS)
    with pytest.raises(UnknownEndpoint):
        pool.report_faulty("nope")
    with pytest.raises(ValueError):
        ProxyPool(SimClock(), ["a", "a"])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["bind", "release", "fault", "tick"]),
                          st.integers(0, 3)), max_size=80), st.integers(0, 2**32))
def test_exclusivity_and_liveness(ops, seed):
    clock = SimClock()
    pool = ProxyPool(clock, EPS, ttl_s=100)
    rng = random.Random(seed)
    held: list[str] = []
    for op, arg in ops:
        if op == "bind":
            ep = pool.bind(rng)
            eligible_before = ep is not None or pool.eligible() == []
            assert eligible_before  # None only when nothing is eligible
            if ep is not None:
                assert ep not in held
                held.append(ep)
        elif op == "release" and held:
            pool.release(held.pop(arg % len(held)))
        elif op == "fault":
            ep = EPS[arg]
            pool.report_faulty(ep)
            if ep in held:
                held.remove(ep)
        elif op == "tick":
            clock.advance(clock.now + 60 * SECOND)
        assert set(held) == pool.bound
        assert not any(pool.is_faulty(e) for e in held)


def test_waiters_served_in_order():
    pool = ProxyPool(SimClock(), ["only"])
    rng = random.Random(0)
    assert pool.bind(rng, "a") == "only"
    assert pool.bind(rng, "b") is None
    assert pool.bind(rng, "c") is None
    pool.release("only")
    assert pool.bind(rng, "c") is None  # not at the head
    assert pool.bind(rng, "b") == "only"
    pool.release("only")
    assert pool.bind(rng, "c") == "only"


def test_sleep_distribution():
    rng = random.Random(7)
    policy = SleepPolicy()
    draws = [pre_download_sleep(policy, rng) for _ in range(20_000)]
    assert all(0 <= d <= 30_000 for d in draws)
    assert abs(statistics.fmean(draws) - 15_000) / 15_000 < 0.02
    assert policy.max_total_ms == 90_000


def test_sleep_disabled_and_trace():
    assert pre_download_sleep(SleepPolicy(enabled=False), random.Random(0)) == 0
    trace = []
    pre_download_sleep(SleepPolicy(min_ms=5, max_ms=5), random.Random(0), trace, now=3, identity="p")
    assert trace == [{"t": 3, "identity": "p", "kind": "sleep", "outcome": 5}]


def test_tunnel_restart_rotates_identity():
    clock = SimClock()
    pool = TunnelPool(clock)
    rng = random.Random(0)
    ep = pool.bind(rng)
    before = pool.identity(ep)
    pool.report_faulty(ep)
    pool.report_faulty(ep)  # during restart: same rotation
    assert pool.rotations == 1
    assert pool.bind(rng) is None
    clock.advance(60 * SECOND)
    ep = pool.bind(rng)
    assert ep is not None and pool.identity(ep) != before


def test_direct_pool_shares_one_address():
    pool = DirectPool(SimClock())
    rng = random.Random(0)
    assert {pool.bind(rng) for _ in range(5)} == {"direct"}
    pool.report_faulty("direct")
    assert pool.blocked_count() == 0


def test_make_pool():
    clock = SimClock()
    assert [make_pool(clock, g).generation for g in (0, 1, 2)] == [0, 1, 2]
    assert len(make_pool(clock, 2).endpoints) == 8
    with pytest.raises(ValueError):
        make_pool(clock, 3)
