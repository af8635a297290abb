"""Replay the provisioned-capacity incident and its fix side by side."""
from replisim.harness import incident_pair, run_scenario

broken, fixed = incident_pair("dynamo-duplicates")
for cfg in (broken, fixed):
    s = run_scenario(cfg).summary
    c = s["counters"]
    print(f"{cfg.name:24s} created={c['videos_created']:3d} skipped_writes={c['skipped_created_writes']:3d} "
          f"write_retries={c['write_retries']:3d} duplicates={s['duplicates']}")
