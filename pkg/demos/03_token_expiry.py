"""Six idle months on the official API path, then one daily poll.

Every refresh token has aged out by the time the path is switched back on,
and the legacy handler reads the invalid grant as the creator opting out.
"""
import json

from replisim.harness import incident_pair, run_scenario

broken, fixed = incident_pair("oauth-mass-optout")
for cfg in (broken, fixed):
    res = run_scenario(cfg)
    days = [json.loads(r) for r in res.records]
    flip = next((d for d in days if d["channels"]["OptedOut"]), None)
    when = f"day {flip['t'] // 86_400_000}" if flip else "never"
    print(f"{cfg.name:26s} opted out: {res.summary['channels_by_status']['OptedOut']:5d} (first seen {when})")
