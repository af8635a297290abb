"""Scenario configuration: a YAML document that fully determines a run given its seed.

Schema (all keys optional except ``seed``)::

    name: demo
    seed: 7
    duration_s: 86400
    metrics_interval_s: 60
    poll_interval_min: 1440
    restart_delay_s: 30
    channels:
      count: 3
      tier_mix: {Silver: 2, Bronze: 1}   # weights, assigned deterministically
      videos_per_channel: 5
      new_videos_per_channel: 0
      new_video_every_s: 86400
      subscribers: [50, 100000]
      median_size_mb: 200
      median_duration_s: 600
      fixed_size_mb: null                 # overrides the log-normal draw
      fixed_duration_s: null
      lightweight: false                  # enrolled records only, no corpus
      whitelist_all: true
    toggles:
      wal_enabled: true
      sleep_enabled: true
      quota_rationing: false
      auth_mode: token                    # or videoVerification
      billing: {kind: pay_per_request}    # or {kind: provisioned, rcu: 1, wcu: 1, initial_tokens: 60}
      swallow_write_errors: false
      proxy_generation: 2
      pre_download_checks: true
      download_only: false
      disable_new_signups: false
      api_path_enabled: false
      testing_consent: false
    proxies: {count: 8, bandwidth: {proxy-0: 0.5}}
    storage: {nodes: 3, max_delay_s: 30, schedule: {}}
    stages: {Download: {concurrency: 2, timeout_s: 10800}}
    detector: {threshold: 500}
    pipeline: {bandwidth_mb_s: 10, spin_interval_s: 30}
    faults:
      - {kind: processCrash, at_s: 120}
      - {kind: sinkOutage, at_s: 60, duration_s: 120}
    controls:
      - {kind: setPollInterval, at_s: 3600, minutes: 2}
    assertions:
      - {metric: duplicates, op: "==", value: 0}
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

import yaml

from ..domain import Tier

FAULT_KINDS = ("processCrash", "sinkOutage", "storageNodeDown", "platformApiDown",
               "throughputBurst", "tokenMassExpiryWindow", "queuePollution")
CONTROL_KINDS = ("setPollInterval", "setToggle", "cleanup", "signup")
ASSERT_OPS = ("==", "!=", "<", "<=", ">", ">=")
AUTH_MODES = ("token", "videoVerification")
STAGE_NAMES = ("Download", "Metadata", "Creation", "Upload")
DETECTOR_KEYS = ("window_s", "alpha", "beta", "gamma", "cv_threshold", "threshold", "block_s",
                 "half_life_s")
PIPELINE_KEYS = ("bandwidth_mb_s", "metadata_mb_s", "spin_interval_s", "upload_attempts",
                 "upload_interval_s", "creation_max_blocks", "postprocessing_faults",
                 "sleep_min_ms", "sleep_max_ms", "write_retry_base_ms", "write_retry_cap_ms",
                 "opt_out_on_invalid_token", "keep_trace")


class ConfigInvalid(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass
class ChannelPopulation:
    count: int = 0
    tier_mix: dict = field(default_factory=lambda: {"Bronze": 1})
    videos_per_channel: int = 0
    new_videos_per_channel: int = 0
    new_video_every_s: int = 86_400
    subscribers: list = field(default_factory=lambda: [50, 100_000])
    median_size_mb: float = 200
    median_duration_s: float = 600
    fixed_size_mb: Optional[float] = None
    fixed_duration_s: Optional[int] = None
    lightweight: bool = False
    whitelist_all: bool = True


@dataclass
class Toggles:
    wal_enabled: bool = True
    sleep_enabled: bool = True
    quota_rationing: bool = False
    auth_mode: str = "token"
    billing: dict = field(default_factory=lambda: {"kind": "pay_per_request"})
    swallow_write_errors: bool = False
    proxy_generation: int = 2
    pre_download_checks: bool = True
    download_only: bool = False
    disable_new_signups: bool = False
    api_path_enabled: bool = False
    testing_consent: bool = False


@dataclass
class FaultInjection:
    kind: str
    at_s: Optional[float] = None
    # crash only: fire right after the Nth dispatched event instead of at a time
    after_event: Optional[int] = None
    duration_s: Optional[float] = None
    params: dict = field(default_factory=dict)


@dataclass
class ScenarioConfig:
    seed: int
    name: str = "scenario"
    duration_s: float = 86_400
    metrics_interval_s: float = 60
    poll_interval_min: float = 1440
    restart_delay_s: float = 30
    channels: ChannelPopulation = field(default_factory=ChannelPopulation)
    toggles: Toggles = field(default_factory=Toggles)
    proxies: dict = field(default_factory=lambda: {"count": 8, "bandwidth": {}})
    storage: dict = field(default_factory=lambda: {"nodes": 3, "max_delay_s": 30, "schedule": {}})
    stages: dict = field(default_factory=dict)
    detector: dict = field(default_factory=dict)
    pipeline: dict = field(default_factory=dict)
    faults: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    assertions: list = field(default_factory=list)

    # -- (de)serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["faults"] = [asdict(f) if isinstance(f, FaultInjection) else f for f in self.faults]
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def copy(self, **changes) -> "ScenarioConfig":
        new = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(new, k, v)
        return new

    @classmethod
    def from_yaml(cls, text: str) -> "ScenarioConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigInvalid([f"<document>: not valid YAML ({exc})"]) from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_yaml(fh.read())

    @classmethod
    def from_dict(cls, data: Any) -> "ScenarioConfig":
        errors: list[str] = []
        if not isinstance(data, dict):
            raise ConfigInvalid(["<document>: expected a mapping"])
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                errors.append(f"{key}: unknown field")
        if "seed" not in data:
            errors.append("seed: required")
        elif not isinstance(data["seed"], int) or isinstance(data["seed"], bool):
            errors.append("seed: must be an integer")

        def section(name: str, kind):
            raw = data.get(name) or {}
            if not isinstance(raw, dict):
                errors.append(f"{name}: expected a mapping")
                return kind()
            allowed = {f.name for f in fields(kind)}
            for key in raw:
                if key not in allowed:
                    errors.append(f"{name}.{key}: unknown field")
            return kind(**{k: v for k, v in raw.items() if k in allowed})

        channels = section("channels", ChannelPopulation)
        toggles = section("toggles", Toggles)
        faults = []
        for i, raw in enumerate(data.get("faults") or []):
            if not isinstance(raw, dict):
                errors.append(f"faults[{i}]: expected a mapping")
                continue
            base = {k: raw[k] for k in ("kind", "at_s", "after_event", "duration_s") if k in raw}
            params = dict(raw.get("params") or {})
            params.update({k: v for k, v in raw.items()
                           if k not in ("kind", "at_s", "after_event", "duration_s", "params")})
            faults.append(FaultInjection(params=params, **base) if "kind" in base
                          else FaultInjection(kind="", params=params))
        cfg = cls(
            seed=data.get("seed", 0) if isinstance(data.get("seed"), int) else 0,
            channels=channels, toggles=toggles, faults=faults,
            **{k: data[k] for k in ("name", "duration_s", "metrics_interval_s",
                                    "poll_interval_min", "restart_delay_s", "proxies", "storage",
                                    "stages", "detector", "pipeline", "controls", "assertions")
               if k in data and data[k] is not None},
        )
        errors.extend(cfg.problems())
        if errors:
            raise ConfigInvalid(errors)
        return cfg

    # -- validation ------------------------------------------------------------

    def problems(self) -> list[str]:
        errs: list[str] = []
        if not isinstance(self.duration_s, (int, float)) or self.duration_s <= 0:
            errs.append("duration_s: must be a positive number")
        if not isinstance(self.metrics_interval_s, (int, float)) or self.metrics_interval_s <= 0:
            errs.append("metrics_interval_s: must be a positive number")
        if not isinstance(self.poll_interval_min, (int, float)) or self.poll_interval_min <= 0:
            errs.append("poll_interval_min: must be a positive number")
        ch = self.channels
        if not isinstance(ch.count, int) or ch.count < 0:
            errs.append("channels.count: must be a non-negative integer")
        if not isinstance(ch.tier_mix, dict) or not ch.tier_mix:
            errs.append("channels.tier_mix: expected a non-empty mapping")
        else:
            for tier, w in ch.tier_mix.items():
                if tier not in Tier._value2member_map_:
                    errs.append(f"channels.tier_mix.{tier}: unknown tier")
                elif not isinstance(w, (int, float)) or w < 0:
                    errs.append(f"channels.tier_mix.{tier}: weight must be >= 0")
        for key in ("videos_per_channel", "new_videos_per_channel"):
            v = getattr(ch, key)
            if not isinstance(v, int) or v < 0:
                errs.append(f"channels.{key}: must be a non-negative integer")
        t = self.toggles
        if t.auth_mode not in AUTH_MODES:
            errs.append(f"toggles.auth_mode: must be one of {', '.join(AUTH_MODES)}")
        if t.proxy_generation not in (0, 1, 2):
            errs.append("toggles.proxy_generation: must be 0, 1 or 2")
        if not isinstance(t.billing, dict) or t.billing.get("kind") not in ("pay_per_request", "provisioned"):
            errs.append("toggles.billing.kind: must be pay_per_request or provisioned")
        elif t.billing["kind"] == "provisioned":
            for key in ("rcu", "wcu"):
                if not isinstance(t.billing.get(key), (int, float)) or t.billing.get(key) <= 0:
                    errs.append(f"toggles.billing.{key}: must be positive for provisioned billing")
        for name, override in (self.stages or {}).items():
            if name not in STAGE_NAMES:
                errs.append(f"stages.{name}: unknown stage")
            elif not isinstance(override, dict):
                errs.append(f"stages.{name}: expected a mapping")
            else:
                for key in override:
                    if key not in ("concurrency", "timeout_s"):
                        errs.append(f"stages.{name}.{key}: unknown field")
        for key in self.detector or {}:
            if key not in DETECTOR_KEYS:
                errs.append(f"detector.{key}: unknown parameter")
        for key in self.pipeline or {}:
            if key not in PIPELINE_KEYS:
                errs.append(f"pipeline.{key}: unknown parameter")
        for i, f in enumerate(self.faults):
            if f.kind not in FAULT_KINDS:
                errs.append(f"faults[{i}].kind: must be one of {', '.join(FAULT_KINDS)}")
            if f.at_s is None and f.after_event is None:
                errs.append(f"faults[{i}]: needs at_s or after_event")
            if f.after_event is not None and f.kind != "processCrash":
                errs.append(f"faults[{i}].after_event: only valid for processCrash")
            if f.at_s is not None and isinstance(self.duration_s, (int, float)) and not 0 <= f.at_s <= self.duration_s:
                errs.append(f"faults[{i}].at_s: outside the run duration")
        for i, c in enumerate(self.controls):
            if not isinstance(c, dict) or c.get("kind") not in CONTROL_KINDS:
                errs.append(f"controls[{i}].kind: must be one of {', '.join(CONTROL_KINDS)}")
            elif "at_s" not in c:
                errs.append(f"controls[{i}].at_s: required")
        for i, a in enumerate(self.assertions):
            if not isinstance(a, dict) or not {"metric", "op", "value"} <= set(a):
                errs.append(f"assertions[{i}]: needs metric, op and value")
            elif a["op"] not in ASSERT_OPS:
                errs.append(f"assertions[{i}].op: must be one of {' '.join(ASSERT_OPS)}")
        return errs

    def validate(self) -> "ScenarioConfig":
        errs = self.problems()
        if errs:
            raise ConfigInvalid(errs)
        return self
