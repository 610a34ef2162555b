"""
Rule-based dispatchers on the synthetic mine
============================================

Seven hand-written rules route 71 trucks between five load sites and five
dump sites for a four-hour shift.  This script plays each rule for a few
seeds and prints the production table.
"""

import numpy as np

from minedispatch.dispatchers import DISPATCHERS, run_episode
from minedispatch.scenario import default_scenario
from minedispatch.sim import MineSim

###############################################################################
# One simulator instance can be reused; ``run_episode`` resets it per seed.

cfg = default_scenario()
sim = MineSim(cfg)
print(f"{cfg.num_trucks} trucks, {len(cfg.shovels)} shovels, {cfg.episode_minutes:g} minutes")

seeds = range(5)
table = {}
for kind in DISPATCHERS:
    runs = [run_episode(sim, kind, s) for s in seeds]
    table[kind] = {
        "tons": np.mean([m.produced_tons for m in runs]),
        "match": np.mean([m.match_factor for m in runs]),
        "wait": np.mean([m.total_wait_time for m in runs]),
        "jam": np.mean([m.jam_ratio for m in runs]),
    }

###############################################################################
# Sorting by tons shows the same broad picture as a real mine: sending every
# truck to the first site starves the other shovels, while the
# shortest-processing-time rule (travel + expected wait + own loading time)
# keeps the whole fleet busy.

print(f"{'dispatcher':<16}{'tons':>9}{'match':>8}{'wait':>11}{'jam':>7}")
for kind, row in sorted(table.items(), key=lambda kv: kv[1]["tons"]):
    print(f"{kind:<16}{row['tons']:>9.1f}{row['match']:>8.2f}{row['wait']:>11.1f}{row['jam']:>7.2f}")
