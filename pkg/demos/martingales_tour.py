"""Exhaustive one-step checks of the penalisation martingales.

Run with ``python3 demos/martingales_tour.py``.  For each family the identity
``E[M_{n+1} | F_n] = M_n`` is checked on every state reachable in 12 steps.
"""

from penalwalk import PenaltyWeight
from penalwalk.martingales import MartingaleFamily, evaluate, q_kernel, verify
from penalwalk.walk import Path

w = PenaltyWeight.uniform(0, 3)
families = [
    MartingaleFamily.one_sided_max(w),
    MartingaleFamily.last_zero_max(w),
    MartingaleFamily.bilateral_last_zero(w),
    MartingaleFamily.corridor(3, 2),
    MartingaleFamily.barrier(4),
]
for fam in families:
    rep = verify(fam, depth=12)
    print(f"{str(fam):<55} states={rep.states_checked:<6} worst={float(rep.worst_diff):.1e} "
          f"{'pass' if rep.passed else 'FAIL'}")

# the h-transform kernel along one path
fam = MartingaleFamily.last_zero_max(w)
state = Path(0, (1, 1, -1)).final_state()
up, down = q_kernel(fam, state)
print(f"after +,+,-: M = {evaluate(fam, state)}, Q-step up {up}, down {down}")
