"""Two scrapers against the same detector for a week.

The fast one runs 50 downloads at once with no pauses; the slow one runs two
with randomized sleeps before each request.
"""
from replisim.harness import anti_detection_pair, run_scenario

for cfg in anti_detection_pair(days=7):
    s = run_scenario(cfg).summary
    first = s["first_block_at"]
    blocked = "never blocked" if first is None else f"first blocked after {first / 3_600_000:.2f} h"
    print(f"{cfg.name:15s} downloads={s['counters']['downloads_completed']:6d} "
          f"challenges={s['counters']['bot_challenges']:5d} {blocked}")
