"""A short tour of the exact laws.

Run with ``python3 demos/exact_laws.py``.  Everything printed is an exact
rational except the trigonometric corridor formula, shown next to the exact
count it reproduces.
"""

from fractions import Fraction

from penalwalk import PenaltyWeight, laws

# maximum before the first return to 0, starting from 1
print("P_1(S_{T_0} = k):", [str(laws.first_passage_max_law(1, k)) for k in range(1, 6)])

# maximum at the a-th visit to 0
for a in (2, 3):
    print(f"P(S_tau_{a} = k):", [str(laws.tau_max_pmf(a, k)) for k in range(4)])

# the walk kept inside (-b, a): exact count against the spectral sum
n, a, b = 10, 3, 2
for c in range(-b + 1, a):
    exact = laws.corridor_pmf(n, a, b, c)
    print(f"corridor n={n} c={c:+d}: {str(exact):>8}  trig {laws.corridor_pmf_trig(n, a, b, c):.15f}")

# law of (gamma_g, S_g) under the last-zero penalisation with a uniform weight
w = PenaltyWeight.uniform(0, 3)
table = {(g, k): laws.q_joint_gamma_sg(w, g, k) for g in range(1, 4) for k in range(4)}
for g in range(1, 4):
    print(f"Q(gamma_g={g}, S_g=k):", [str(table[(g, k)]) for k in range(4)])
marginal = [float(sum((laws.q_joint_gamma_sg(w, g, k) for g in range(1, 200)), Fraction(0))) for k in range(4)]
print("Q(S_g = k), summed over gamma <= 199:", [f"{v:.12f}" for v in marginal])
