"""Simulating the penalised measure.

Run with ``python3 demos/simulate_q.py``.  Chains of the last-zero h-transform
are run to a horizon.  The laws of ``S_g`` and of ``(gamma_g, S_g)`` are
estimated from raw frequencies, which the truncation biases, and from the
conditional law given the state at the horizon, which it does not.
"""

from penalwalk import PenaltyWeight, qsim
from penalwalk.martingales import MartingaleFamily

w = PenaltyWeight.uniform(0, 3)
H, n, seed = 1000, 20_000, 1

sg = qsim.estimate_sg_density("last-zero-max", w, H, n, seed)
print(f"S_g law: tv={sg.tv:.4f} verdict={sg.verdict}")
for k in sorted(sg.reference):
    print(f"  k={k} empirical={sg.empirical.get(k, 0):.4f} phi={sg.reference[k]:.4f}")

# the same law from each chain's conditional law given the state at H
fam = MartingaleFamily.last_zero_max(w)
done = qsim.completed_joint_law(qsim.simulate_q(fam, n, H, seed), fam)
marg = {k: sum(v for (_, kk), v in done.items() if kk == k) for k in range(4)}
print("  completed:", " ".join(f"k={k}:{v:.4f}" for k, v in marg.items()))

joint = qsim.estimate_joint_gamma_sg("last-zero-max", w, H, n, seed)
print(f"(gamma_g, S_g): completed Wald p={joint.chi2_pvalue:.3f} (dof {joint.dof}), "
      f"raw frequencies p={joint.extra['raw_pvalue']:.2g}")

sign = qsim.estimate_sign_split("last-zero-max", w, H, n, seed)
print(f"positive side after g: {sign.empirical[1]:.4f} (z={sign.extra['z']:.2f}), "
      f"raw fraction {sign.extra['raw_fraction']:.4f}")

path = qsim.sample_chain(qsim.ChainKernel.bessel3(), 0, 40, seed).path
print("3-Bessel path:", path.positions)
