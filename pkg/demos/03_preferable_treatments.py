"""Which blood-pressure path is preferable?

A treatment path v1 is preferable to v2 when, at every time, it gives no
higher probability of death and no worse outcome among the living, and is
strictly better somewhere.  When V raises both the marker drift and the death
hazard (beta2 > 0, gamma2 > 0), a lower path should win.

For a binary outcome the natural criterion P(Y_t = 1, D_t = 0) mixes the two
effects: lowering V keeps more demented subjects alive, so late in follow-up
the comparison can reverse.

Run:  python3 demos/03_preferable_treatments.py
"""

import json
import warnings
from pathlib import Path

from deathsys import system_from_config, validate_system
from deathsys.simulate import contrast, preferable

GALLERY = Path(__file__).resolve().parents[1] / "gallery"
warnings.simplefilter("ignore")


def load(name):
    return validate_system(system_from_config(json.loads((GALLERY / "systems" / name).read_text())))


t_grid = [1, 2, 4, 6, 8]

bp = load("bp_cognition.json")
res = preferable(bp, None, -1.0, 1.0, t_grid, n_mc=20000, seed=3)
print("quantitative marker:", res.verdict, f"({res.interpretation})")
print(res.table.round(4).to_string(index=False), "\n")

dementia = load("dementia.json")
res = preferable(dementia, None, -1.0, 1.0, t_grid, n_mc=20000, seed=3)
print("binary dementia:", res.verdict, f"({res.interpretation})")
print(res.table.round(4).to_string(index=False), "\n")

# The hazard ratio of death for a unit increase in V is exp(gamma2) at all times.
print(contrast(dementia, None, 0.0, 1.0, "hazard_ratio", [1, 4]).to_string(index=False))
