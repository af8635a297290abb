"""Named FIFO lock domains for logical workers on the virtual clock."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Generator, Optional

from ..domain import Signal, SimClock

STORE_DOMAINS = ("channel", "user", "whitelist")
QUEUE_DOMAINS = ("queueRecalc", "queueBatch")
PROXY_DOMAIN = "proxyBind"


class PendingLimitExceeded(Exception):
    pass


class LockBusy(Exception):
    """A synchronous caller found the domain held by a suspended worker."""


@dataclass(frozen=True)
class LockDomain:
    name: str
    max_pending: Optional[int] = None


class _DomainState:
    def __init__(self, domain: LockDomain):
        self.domain = domain
        self.held = False
        self.waiters: deque[Signal] = deque()
        self.acquisitions = 0


class LockManager:
    """Serializes work per domain in acquisition order.

    Workers ``yield locks.acquire(name)`` and must call ``release(name)``.
    Synchronous code uses :meth:`call`, which runs immediately because a free
    domain never has waiters.
    """

    def __init__(self, clock: SimClock, domains: list[LockDomain]):
        self.clock = clock
        self._domains = {d.name: _DomainState(d) for d in domains}

    @classmethod
    def default(cls, clock: SimClock, proxies_num: int) -> "LockManager":
        domains = [LockDomain(n) for n in STORE_DOMAINS + QUEUE_DOMAINS]
        domains.append(LockDomain(PROXY_DOMAIN, max_pending=max(1, proxies_num) * 10))
        return cls(clock, domains)

    def domain(self, name: str) -> LockDomain:
        return self._domains[name].domain

    def pending(self, name: str) -> int:
        return len(self._domains[name].waiters)

    def is_held(self, name: str) -> bool:
        return self._domains[name].held

    def acquire(self, name: str) -> Signal:
        st = self._domains[name]
        grant = Signal(self.clock)
        if not st.held:
            st.held = True
            st.acquisitions += 1
            grant.fire(name)
            return grant
        limit = st.domain.max_pending
        if limit is not None and len(st.waiters) >= limit:
            raise PendingLimitExceeded(f"{name}: {len(st.waiters)} pending (limit {limit})")
        st.waiters.append(grant)
        return grant

    def release(self, name: str) -> None:
        st = self._domains[name]
        if not st.held:
            raise RuntimeError(f"release of unheld lock {name}")
        if st.waiters:
            st.acquisitions += 1
            st.waiters.popleft().fire(name)
        else:
            st.held = False

    def acquire_all(self, *names: str) -> Generator[Any, Any, None]:
        # fixed order so two multi-lock holders can never deadlock
        for name in sorted(names):
            yield self.acquire(name)

    def release_all(self, *names: str) -> None:
        for name in sorted(names, reverse=True):
            self.release(name)

    def run(self, name: str, work: Callable[[], Generator]) -> Generator[Any, Any, Any]:
        """Run a generator body with exclusive access to ``name``."""
        yield self.acquire(name)
        result = yield from work()
        self.release(name)
        return result

    def call(self, name: str, fn: Callable[[], Any]) -> Any:
        st = self._domains[name]
        if st.held:
            raise LockBusy(name)
        st.held = True
        st.acquisitions += 1
        try:
            return fn()
        finally:
            st.held = False
