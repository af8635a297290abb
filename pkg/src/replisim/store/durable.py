"""Durable single-source-of-truth store journaled to an append-only write log."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Any, Iterable, Iterator, Optional

from ..domain import SECOND, ChannelRecord, SimClock, VideoRecord, VideoState

TABLES = ("channels", "videos", "users", "stats", "whitelist")


class ThroughputExceeded(Exception):
    """Provisioned write capacity exhausted for a table."""


@dataclass(frozen=True)
class BillingMode:
    kind: str = "pay_per_request"
    rcu: int = 0
    wcu: int = 0
    # unused capacity the table may bank, in seconds of wcu
    burst_seconds: float = 300.0
    # bucket level when the table is first used; None means full
    initial_tokens: Optional[float] = None

    @classmethod
    def provisioned(cls, rcu: int, wcu: int, *, burst_seconds: float = 300.0,
                    initial_tokens: Optional[float] = None) -> "BillingMode":
        return cls("provisioned", rcu, wcu, burst_seconds, initial_tokens)

    @classmethod
    def pay_per_request(cls) -> "BillingMode":
        return cls("pay_per_request")

    @property
    def is_provisioned(self) -> bool:
        return self.kind == "provisioned"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rcu": self.rcu, "wcu": self.wcu,
                "burst_seconds": self.burst_seconds, "initial_tokens": self.initial_tokens}


class WriteCapacity:
    """Per-table write-token bucket refilled at ``wcu`` tokens per virtual second."""

    def __init__(self, wcu: float, capacity: float, initial: float, now: int):
        self.rate = float(wcu)
        self.capacity = float(capacity)
        self.tokens = float(initial)
        self.last = now

    def _refill(self, now: int) -> None:
        if now > self.last:
            self.tokens = min(self.capacity, self.tokens + (now - self.last) / SECOND * self.rate)
            self.last = now

    def level(self, now: int) -> float:
        self._refill(now)
        return self.tokens

    def take(self, now: int, n: float = 1.0) -> bool:
        self._refill(now)
        if self.tokens + 1e-9 >= n:
            self.tokens -= n
            return True
        return False


def _key_str(key: tuple) -> str:
    return json.dumps(list(key))


class DurableStore:
    """Five tables plus secondary indexes; every mutation is journaled.

    Records are stored serialized, so callers always get independent copies.
    """

    def __init__(self, clock: SimClock, billing: BillingMode = BillingMode(),
                 log_sink: Optional[IO[str]] = None):
        self.clock = clock
        self.billing = billing
        self.tables: dict[str, dict[tuple, dict]] = {t: {} for t in TABLES}
        self.write_log: list[str] = []
        self._log_sink = log_sink
        self._seq = 0
        self._capacity: dict[str, WriteCapacity] = {}
        self.rejected_writes: dict[str, int] = {t: 0 for t in TABLES}
        # secondary indexes
        self._channel_owner: dict[str, str] = {}
        self._by_joystream: dict[Any, set[tuple]] = {}
        self._by_referrer: dict[Any, set[tuple]] = {}
        self._by_state: dict[str, dict[tuple, int]] = {}
        self._by_channel: dict[str, set[tuple]] = {}

    # capacity -------------------------------------------------------------

    def set_billing(self, billing: BillingMode) -> None:
        self.billing = billing
        self._capacity.clear()

    def _charge_write(self, table: str) -> None:
        if not self.billing.is_provisioned:
            return
        cap = self._capacity.get(table)
        if cap is None:
            size = self.billing.wcu * self.billing.burst_seconds
            initial = size if self.billing.initial_tokens is None else self.billing.initial_tokens
            cap = self._capacity[table] = WriteCapacity(self.billing.wcu, size, initial, self.clock.now)
        if not cap.take(self.clock.now):
            self.rejected_writes[table] += 1
            raise ThroughputExceeded(f"ProvisionedThroughputExceeded on {table}")

    def drain_capacity(self, table: str, writes: int) -> int:
        """Spend write capacity as unrelated traffic would; returns writes absorbed."""
        absorbed = 0
        for _ in range(writes):
            try:
                self._charge_write(table)
                absorbed += 1
            except ThroughputExceeded:
                self.rejected_writes[table] -= 1
                break
        return absorbed

    def write_level(self, table: str) -> Optional[float]:
        cap = self._capacity.get(table)
        return None if cap is None else cap.level(self.clock.now)

    # journal --------------------------------------------------------------

    def _journal(self, table: str, key: tuple, op: str, payload: Optional[dict]) -> None:
        self._seq += 1
        line = json.dumps({"seq": self._seq, "table": table, "key": list(key), "op": op,
                           "payload": payload}, separators=(",", ":"))
        self.write_log.append(line)
        if self._log_sink is not None:
            self._log_sink.write(line + "\n")

    # raw table ops --------------------------------------------------------

    def put(self, table: str, key: tuple, payload: dict, *, charge: bool = True) -> None:
        if charge:
            self._charge_write(table)
        self._unindex(table, key)
        stored = json.loads(json.dumps(payload))
        self.tables[table][key] = stored
        self._index(table, key, stored)
        self._journal(table, key, "put", stored)

    def delete(self, table: str, key: tuple, *, charge: bool = True) -> bool:
        if key not in self.tables[table]:
            return False
        if charge:
            self._charge_write(table)
        self._unindex(table, key)
        del self.tables[table][key]
        self._journal(table, key, "delete", None)
        return True

    def get(self, table: str, key: tuple) -> Optional[dict]:
        row = self.tables[table].get(key)
        return None if row is None else json.loads(json.dumps(row))

    def scan(self, table: str) -> Iterator[tuple[tuple, dict]]:
        for key in sorted(self.tables[table]):
            yield key, self.tables[table][key]

    def _index(self, table: str, key: tuple, row: dict) -> None:
        if table == "channels":
            self._channel_owner[row["id"]] = row["user_id"]
            self._by_joystream.setdefault(row.get("joystream_channel_id"), set()).add(key)
            self._by_referrer.setdefault(row.get("referrer_channel_id"), set()).add(key)
        elif table == "videos":
            self._by_state.setdefault(row["state"], {})[key] = row["published_at"]
            self._by_channel.setdefault(key[0], set()).add(key)

    def _unindex(self, table: str, key: tuple) -> None:
        old = self.tables[table].get(key)
        if old is None:
            return
        if table == "channels":
            self._channel_owner.pop(old["id"], None)
            self._by_joystream.get(old.get("joystream_channel_id"), set()).discard(key)
            self._by_referrer.get(old.get("referrer_channel_id"), set()).discard(key)
        elif table == "videos":
            self._by_state.get(old["state"], {}).pop(key, None)
            self._by_channel.get(key[0], set()).discard(key)

    # channels -------------------------------------------------------------

    def save_channel(self, channel: ChannelRecord) -> None:
        self.put("channels", (channel.user_id, channel.id), channel.to_dict())

    def find_channel(self, channel_id: str) -> Optional[ChannelRecord]:
        user_id = self._channel_owner.get(channel_id)
        if user_id is None:
            return None
        return ChannelRecord.from_dict(self.tables["channels"][(user_id, channel_id)])

    def channels(self) -> list[ChannelRecord]:
        return [ChannelRecord.from_dict(row) for _, row in self.scan("channels")]

    def channel_ids(self) -> list[str]:
        return sorted(self._channel_owner)

    def channels_by_joystream_id(self, joystream_channel_id: Any) -> list[ChannelRecord]:
        keys = sorted(self._by_joystream.get(joystream_channel_id, ()))
        return [ChannelRecord.from_dict(self.tables["channels"][k]) for k in keys]

    def channels_by_referrer(self, referrer_channel_id: Any) -> list[ChannelRecord]:
        keys = sorted(self._by_referrer.get(referrer_channel_id, ()))
        return [ChannelRecord.from_dict(self.tables["channels"][k]) for k in keys]

    # videos ---------------------------------------------------------------

    def save_video(self, video: VideoRecord) -> None:
        self.put("videos", (video.channel_id, video.id), video.to_dict())

    def delete_video(self, channel_id: str, video_id: str) -> bool:
        return self.delete("videos", (channel_id, video_id))

    def get_video(self, channel_id: str, video_id: str) -> Optional[VideoRecord]:
        row = self.tables["videos"].get((channel_id, video_id))
        return None if row is None else VideoRecord.from_dict(json.loads(json.dumps(row)))

    def videos_for_channel(self, channel_id: str) -> list[VideoRecord]:
        keys = sorted(self._by_channel.get(channel_id, ()))
        return [VideoRecord.from_dict(json.loads(json.dumps(self.tables["videos"][k]))) for k in keys]

    def videos(self) -> list[VideoRecord]:
        return [VideoRecord.from_dict(json.loads(json.dumps(row))) for _, row in self.scan("videos")]

    def videos_in_state(self, state: VideoState) -> list[VideoRecord]:
        """Index lookup ordered by publishedAt, then key."""
        entries = self._by_state.get(VideoState(state).value, {})
        keys = sorted(entries, key=lambda k: (entries[k], k))
        return [VideoRecord.from_dict(json.loads(json.dumps(self.tables["videos"][k]))) for k in keys]

    def count_videos_in_state(self, state: VideoState) -> int:
        return len(self._by_state.get(VideoState(state).value, {}))

    # users / stats / whitelist ---------------------------------------------

    def save_user(self, user: dict) -> None:
        self.put("users", (user["id"],), user)

    def get_user(self, user_id: str) -> Optional[dict]:
        return self.get("users", (user_id,))

    def save_stats(self, partition: str, date: int, payload: dict) -> None:
        self.put("stats", (partition, date), payload)

    def add_whitelist(self, handle: str) -> None:
        self.put("whitelist", (handle,), {"handle": handle})

    def is_whitelisted(self, handle: str) -> bool:
        return (handle,) in self.tables["whitelist"]

    # snapshots ------------------------------------------------------------

    def snapshot(self) -> dict[str, dict[str, dict]]:
        return {t: {_key_str(k): json.loads(json.dumps(v)) for k, v in sorted(self.tables[t].items())}
                for t in TABLES}

    def dump_write_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.write_log:
                fh.write(line + "\n")

    @classmethod
    def from_write_log(cls, clock: SimClock, lines: Iterable[str],
                       billing: BillingMode = BillingMode()) -> "DurableStore":
        """Rebuild a store by re-applying a write log (no capacity charged)."""
        store = cls(clock, billing)
        for line in lines:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            key = tuple(rec["key"])
            if rec["op"] == "put":
                store.put(rec["table"], key, rec["payload"], charge=False)
            elif rec["op"] == "delete":
                store.delete(rec["table"], key, charge=False)
        return store

