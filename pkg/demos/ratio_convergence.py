"""Penalised ratios approaching their martingale limit.

Run with ``python3 demos/ratio_convergence.py``.  For one event of the first
three steps the normalised expectation climbs towards ``E[1_event M_3]``.  For
the maximum the gap here is exactly ``1/(8p)``; for the last-zero functional it
shrinks more slowly, between ``p^(-1/2)`` and ``p^(-1)``.
"""

from penalwalk import PenaltyWeight
from penalwalk.checks import ratio_table

w = PenaltyWeight.uniform(0, 3)
for tag in ("max", "last-zero-max"):
    t = ratio_table(tag, w, (1, -1, 1), range(8, 33, 4))
    print(tag, "event +-+, limit", t.rows[0][3])
    for p, norm, ratio, limit, gap, ok in t.rows:
        print(f"  p={p:<3} normalized={float(norm):.6f} gap={float(gap):.6f}"
              f" gap*sqrt(p)={float(gap) * p ** 0.5:.4f} gap*p={float(gap) * p:.4f}")
