"""
Advantages when decisions arrive at uneven times
================================================

A dispatch decision may follow the previous one after a few seconds or
after twenty minutes.  Raising the discount and the trace decay to the
elapsed minutes keeps a reward worth the same whether it is reached in
one long step or several short ones.
"""

import numpy as np

from minedispatch.ppo import gae

###############################################################################
# Two ways to reach a reward five minutes from now: one 5-minute step, or
# five 1-minute steps.  The reward of 1 belongs to the decision made then.

gamma, lam = 0.99, 0.95
one_long, _ = gae([0.0, 1.0], np.zeros(2), [5.0, 1.0], [False] * 2, 0.0, gamma, lam)
five_short, _ = gae([0, 0, 0, 0, 0, 1.0], np.zeros(6), np.ones(6), [False] * 6, 0.0, gamma, lam)
print("advantage at t=0, one 5-minute step:  ", one_long[0])
print("advantage at t=0, five 1-minute steps:", five_short[0])

###############################################################################
# Both equal (gamma*lam)**5.  With ordinary per-step discounting the number
# of steps, not the elapsed time, would decide the weight.

print("(gamma*lam)**5 =", (gamma * lam) ** 5)

###############################################################################
# The bootstrap value is discounted by gamma**dt as well, so a state seen
# after a long gap contributes less than one seen a moment later.

for dt in (0.25, 1.0, 5.0, 20.0):
    adv, _ = gae([0.0], [0.0], [dt], [False], 10.0, gamma, lam)
    print(f"dt={dt:>5}: discounted bootstrap {adv[0]:.3f}")
