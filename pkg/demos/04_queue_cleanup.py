"""Stale queue entries fail every day until the cleanup runs on day 3."""
import tempfile

from replisim.harness import Simulation, incident_scenario

sim = Simulation(incident_scenario("queue-pollution"), backup_dir=tempfile.mkdtemp())
res = sim.run()
print("download errors by day:", res.summary["errors_by_day"])
report = res.summary["cleanups"][0]
print("cleanup categories:", report["counts"])
print(f"deleted {report['deleted']} (backup {sim.cleanup_backups[0]}), "
      f"marked {report['marked']}, requeued {report['requeued']}")
