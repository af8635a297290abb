"""Crash the sync process after every event and count duplicate sink objects.

Without the intent record a crash between chain submission and the
VideoCreated write leaves the row at New, so the next process submits the
video again. With the record the restart asks the chain first.
"""
from replisim.harness import ScenarioConfig, sweep_crash_points

base = ScenarioConfig.load("demos/scenarios/crash_sweep.yaml")

for wal in (False, True):
    cfg = base.copy()
    cfg.toggles.wal_enabled = wal
    sweep = sweep_crash_points(cfg)
    print(f"WAL {'on ' if wal else 'off'}: {sweep.baseline_events} crash points, "
          f"{len(sweep.points_with_duplicates)} produce duplicates, worst case {sweep.max_duplicates}")
