"""Calibrated incident scenarios, each paired with a countermeasure variant."""
from __future__ import annotations

from ..domain import DAY, MONTH, SECOND
from .config import ChannelPopulation, FaultInjection, ScenarioConfig, Toggles
from .runtime import POLLUTION_MIX

INCIDENTS = ("dynamo-duplicates", "oauth-mass-optout", "queue-pollution")

# Write-bucket level at t0 that reproduces the observed 28 silently skipped
# VideoCreated writes for the 48-video channel below (found by a sweep over
# initial levels with four download workers; 40-48 tokens map one-to-one onto
# 22-30 duplicates).
DUPLICATES_INITIAL_TOKENS = 46


class UnknownScenario(KeyError):
    pass


def _dynamo(fixed: bool) -> ScenarioConfig:
    billing = ({"kind": "pay_per_request"} if fixed else
               {"kind": "provisioned", "rcu": 1, "wcu": 1, "burst_seconds": 300,
                "initial_tokens": DUPLICATES_INITIAL_TOKENS})
    return ScenarioConfig(
        seed=2024, name="dynamo-duplicates" + ("-fixed" if fixed else ""),
        duration_s=3 * 3600, metrics_interval_s=60, poll_interval_min=60,
        channels=ChannelPopulation(count=1, tier_mix={"Silver": 1}, videos_per_channel=48,
                                   fixed_size_mb=20, fixed_duration_s=120),
        toggles=Toggles(wal_enabled=fixed, sleep_enabled=False, billing=billing,
                        swallow_write_errors=not fixed, proxy_generation=2),
        storage={"nodes": 3, "max_delay_s": 30, "schedule": {}},
        stages={"Download": {"concurrency": 4}},
        assertions=[{"metric": "duplicates", "op": "==", "value": 0 if fixed else 28}],
    )


def _oauth(fixed: bool) -> ScenarioConfig:
    window = 6 * MONTH + DAY
    return ScenarioConfig(
        seed=2024, name="oauth-mass-optout" + ("-fixed" if fixed else ""),
        duration_s=window // SECOND + 2 * 86_400, metrics_interval_s=86_400,
        poll_interval_min=1440,
        channels=ChannelPopulation(count=10_000, tier_mix={"Bronze": 6, "Silver": 3, "Gold": 1},
                                   lightweight=True),
        toggles=Toggles(auth_mode="videoVerification" if fixed else "token",
                        api_path_enabled=True),
        faults=[FaultInjection("tokenMassExpiryWindow", at_s=0, duration_s=window // SECOND)],
        assertions=[{"metric": "channels_by_status.OptedOut",
                     "op": "==" if fixed else ">=", "value": 0 if fixed else 10_000}],
    )


def _pollution(fixed: bool) -> ScenarioConfig:
    when = 0 if fixed else 3 * 86_400
    return ScenarioConfig(
        seed=2024, name="queue-pollution" + ("-fixed" if fixed else ""),
        duration_s=6 * 86_400, metrics_interval_s=3600, poll_interval_min=1440,
        channels=ChannelPopulation(count=20, tier_mix={"Diamond": 1}, videos_per_channel=3,
                                   median_size_mb=100),
        toggles=Toggles(pre_download_checks=fixed),
        faults=[FaultInjection("queuePollution", at_s=0,
                               params={"count": 719, "mix": dict(POLLUTION_MIX),
                                       "recover_after_s": 4 * 86_400})],
        controls=[{"kind": "cleanup", "at_s": when},
                  {"kind": "setToggle", "at_s": when, "name": "pre_download_checks", "value": True}],
        assertions=([{"metric": "max_errors_per_day", "op": "<", "value": 5}] if fixed else
                    [{"metric": "errors_by_day.0", "op": "==", "value": 719},
                     {"metric": "errors_by_day.3", "op": "<", "value": 5},
                     {"metric": "errors_by_day.4", "op": "<", "value": 5}]),
    )


_BUILDERS = {"dynamo-duplicates": _dynamo, "oauth-mass-optout": _oauth,
             "queue-pollution": _pollution}


def incident_scenario(name: str, *, fixed: bool = False) -> ScenarioConfig:
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise UnknownScenario(f"unknown incident {name!r}; known: {', '.join(INCIDENTS)}") from None
    return builder(fixed).validate()


def incident_pair(name: str) -> tuple[ScenarioConfig, ScenarioConfig]:
    return incident_scenario(name), incident_scenario(name, fixed=True)


def anti_detection_pair(days: int = 7, seed: int = 11) -> tuple[ScenarioConfig, ScenarioConfig]:
    """(slow, fast) download-only configs sharing one corpus and detector."""
    base = ScenarioConfig(
        seed=seed, name="detection-slow", duration_s=days * 86_400, metrics_interval_s=3600,
        poll_interval_min=1440,
        channels=ChannelPopulation(count=20, tier_mix={"Diamond": 1}, videos_per_channel=1000,
                                   median_size_mb=100),
        toggles=Toggles(download_only=True, sleep_enabled=True, proxy_generation=2),
        proxies={"count": 8, "bandwidth": {}},
        stages={"Download": {"concurrency": 2}},
    )
    fast = base.copy(name="detection-fast", stages={"Download": {"concurrency": 50}})
    fast.toggles.sleep_enabled = False
    return base.validate(), fast.validate()
