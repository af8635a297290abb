"""Proxy strategies for scraping traffic and the pre-download sleep policy.

Three generations share one interface (``bind``/``release``/``report_faulty``/
``identity``) so scenarios can swap them:

* generation 0: every request leaves from the host's own address;
* generation 1: one tunnel whose address changes only by restarting it;
* generation 2: an exclusive pool with faulty-endpoint exclusion.
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import Hashable, Optional

from .domain import SECOND, SimClock

FAULTY_TTL_S = 14_400
SPIN_INTERVAL_S = 30
TUNNEL_RESTART_S = 60
# carried over from the chained-proxy config; they only feed the connection model
TCP_READ_TIMEOUT_MS = 15_000
TCP_CONNECT_TIMEOUT_MS = 8_000
FORCE_IPV4 = True


class UnknownEndpoint(KeyError):
    pass


@dataclass(frozen=True)
class SleepPolicy:
    min_ms: int = 0
    max_ms: int = 30_000
    applications_per_video: int = 3
    enabled: bool = True

    @property
    def max_total_ms(self) -> int:
        return self.max_ms * self.applications_per_video if self.enabled else 0


def pre_download_sleep(policy: SleepPolicy, rng: random.Random,
                       trace: Optional[list] = None, *, now: int = 0,
                       identity: str = "") -> int:
    """Draw one variance sleep in milliseconds; the caller yields it to the clock."""
    if not policy.enabled:
        return 0
    ms = int(rng.uniform(policy.min_ms, policy.max_ms)) if policy.max_ms > policy.min_ms else policy.min_ms
    if trace is not None:
        trace.append({"t": now, "identity": identity, "kind": "sleep", "outcome": ms})
    return ms


class ProxyPool:
    """Generation 2: each endpoint serves at most one download at a time.

    Waiters are served in arrival order: a ticket that is not at the head of
    the wait list never jumps it, so every spinning job eventually binds once
    an endpoint frees up.
    """

    generation = 2
    exclusive = True

    def __init__(self, clock: SimClock, endpoints: list[str], *, ttl_s: int = FAULTY_TTL_S,
                 bandwidth: Optional[dict[str, float]] = None):
        if len(set(endpoints)) != len(endpoints):
            raise ValueError("duplicate proxy endpoints")
        self.clock = clock
        self.endpoints = list(endpoints)
        self.ttl_ms = ttl_s * SECOND
        self.faulty: dict[str, int] = {}
        self.bound: set[str] = set()
        self.waiters: deque[Hashable] = deque()
        self.bandwidth = dict(bandwidth or {})
        self.reports = 0

    def _check(self, endpoint: str) -> None:
        if endpoint not in self.endpoints:
            raise UnknownEndpoint(endpoint)

    def is_faulty(self, endpoint: str, now: Optional[int] = None) -> bool:
        now = self.clock.now if now is None else now
        expiry = self.faulty.get(endpoint)
        return expiry is not None and now < expiry

    def eligible(self, now: Optional[int] = None) -> list[str]:
        return [e for e in self.endpoints if e not in self.bound and not self.is_faulty(e, now)]

    def bind(self, rng: random.Random, ticket: Hashable = None) -> Optional[str]:
        """An eligible endpoint chosen uniformly, or None (caller spin-waits)."""
        if self.waiters and self.waiters[0] != ticket:
            if ticket is not None and ticket not in self.waiters:
                self.waiters.append(ticket)
            return None
        choices = self.eligible()
        if not choices:
            if ticket is not None and ticket not in self.waiters:
                self.waiters.append(ticket)
            return None
        if self.waiters and self.waiters[0] == ticket:
            self.waiters.popleft()
        endpoint = rng.choice(choices)
        self.bound.add(endpoint)
        return endpoint

    def abandon(self, ticket: Hashable) -> None:
        if ticket in self.waiters:
            self.waiters.remove(ticket)

    def release(self, endpoint: str) -> None:
        self._check(endpoint)
        self.bound.discard(endpoint)

    def report_faulty(self, endpoint: str, now: Optional[int] = None) -> int:
        """Exclude ``endpoint`` for the TTL; a repeat report restarts the TTL."""
        self._check(endpoint)
        now = self.clock.now if now is None else now
        self.faulty[endpoint] = now + self.ttl_ms
        self.bound.discard(endpoint)
        self.reports += 1
        return self.faulty[endpoint]

    def identity(self, endpoint: str) -> str:
        return endpoint

    def bandwidth_factor(self, endpoint: str) -> float:
        return self.bandwidth.get(endpoint, 1.0)

    def blocked_count(self) -> int:
        return sum(1 for e in self.endpoints if self.is_faulty(e))


class DirectPool:
    """Generation 0: no proxy at all, one shared source address."""

    generation = 0
    exclusive = False

    def __init__(self, clock: SimClock, label: str = "direct"):
        self.clock = clock
        self.endpoints = [label]
        self.bound: set[str] = set()
        self.waiters: deque[Hashable] = deque()
        self.reports = 0

    def eligible(self, now: Optional[int] = None) -> list[str]:
        return list(self.endpoints)

    def bind(self, rng: random.Random, ticket: Hashable = None) -> Optional[str]:
        return self.endpoints[0]

    def abandon(self, ticket: Hashable) -> None:
        pass

    def release(self, endpoint: str) -> None:
        if endpoint not in self.endpoints:
            raise UnknownEndpoint(endpoint)

    def report_faulty(self, endpoint: str, now: Optional[int] = None) -> int:
        # nothing to rotate to; the report is only counted
        if endpoint not in self.endpoints:
            raise UnknownEndpoint(endpoint)
        self.reports += 1
        return self.clock.now if now is None else now

    def is_faulty(self, endpoint: str, now: Optional[int] = None) -> bool:
        return False

    def identity(self, endpoint: str) -> str:
        return endpoint

    def bandwidth_factor(self, endpoint: str) -> float:
        return 1.0

    def blocked_count(self) -> int:
        return 0


class TunnelPool:
    """Generation 1: a single shared tunnel; a fault report restarts it.

    The restart takes the tunnel down for 60 s and it comes back with a new
    exit address.
    """

    generation = 1
    exclusive = False

    def __init__(self, clock: SimClock, label: str = "tunnel", restart_s: int = TUNNEL_RESTART_S):
        self.clock = clock
        self.endpoints = [label]
        self.restart_ms = restart_s * SECOND
        self.down_until = 0
        self.rotations = 0
        self.bound: set[str] = set()
        self.waiters: deque[Hashable] = deque()
        self.reports = 0

    def is_faulty(self, endpoint: str, now: Optional[int] = None) -> bool:
        now = self.clock.now if now is None else now
        return now < self.down_until

    def eligible(self, now: Optional[int] = None) -> list[str]:
        return [] if self.is_faulty(self.endpoints[0], now) else list(self.endpoints)

    def bind(self, rng: random.Random, ticket: Hashable = None) -> Optional[str]:
        return None if self.is_faulty(self.endpoints[0]) else self.endpoints[0]

    def abandon(self, ticket: Hashable) -> None:
        pass

    def release(self, endpoint: str) -> None:
        if endpoint not in self.endpoints:
            raise UnknownEndpoint(endpoint)

    def report_faulty(self, endpoint: str, now: Optional[int] = None) -> int:
        if endpoint not in self.endpoints:
            raise UnknownEndpoint(endpoint)
        now = self.clock.now if now is None else now
        if now >= self.down_until:
            self.rotations += 1
            self.down_until = now + self.restart_ms
        self.reports += 1
        return self.down_until

    def identity(self, endpoint: str) -> str:
        return f"{endpoint}#{self.rotations}"

    def bandwidth_factor(self, endpoint: str) -> float:
        return 1.0

    def blocked_count(self) -> int:
        return int(self.is_faulty(self.endpoints[0]))


def make_pool(clock: SimClock, generation: int, endpoints: Optional[list[str]] = None, *,
              ttl_s: int = FAULTY_TTL_S, bandwidth: Optional[dict[str, float]] = None):
    if generation == 0:
        return DirectPool(clock)
    if generation == 1:
        return TunnelPool(clock)
    if generation == 2:
        return ProxyPool(clock, endpoints or [f"proxy-{i}" for i in range(8)], ttl_s=ttl_s,
                         bandwidth=bandwidth)
    raise ValueError(f"unknown proxy generation {generation}")


def bind_proxy(pool, rng: random.Random, ticket: Hashable = None) -> Optional[str]:
    return pool.bind(rng, ticket)


def report_faulty_proxy(pool, endpoint: str, now: Optional[int] = None) -> int:
    return pool.report_faulty(endpoint, now)
