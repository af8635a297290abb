import pytest

from replisim.harness.config import ScenarioConfig


def small_config(**overrides) -> ScenarioConfig:
    """A tiny one-channel scenario; keys are merged into the YAML-level dict."""
    base = {
        "seed": 5, "duration_s": 400, "metrics_interval_s": 400, "poll_interval_min": 1440,
        "restart_delay_s": 10,
        "channels": {"count": 1, "tier_mix": {"Silver": 1}, "videos_per_channel": 5,
                     "fixed_size_mb": 1, "fixed_duration_s": 60},
        "toggles": {"sleep_enabled": False},
        "storage": {"nodes": 1, "max_delay_s": 0},
        "stages": {"Download": {"concurrency": 1}, "Metadata": {"concurrency": 1},
                   "Upload": {"concurrency": 2}},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = {**base[key], **value}
        else:
            base[key] = value
    return ScenarioConfig.from_dict(base)


@pytest.fixture
def tiny():
    return small_config
