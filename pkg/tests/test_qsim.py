import json
from fractions import Fraction

import numpy as np
import pytest

from penalwalk import laws, qsim
from penalwalk.martingales import AbsorbedKernelError, MartingaleFamily, evaluate
from penalwalk.oracle import dp_final
from penalwalk.qsim import (
    ChainKernel,
    bessel3_star_step_probs,
    bessel3_step_probs,
    sample_bridge,
    sample_chain,
    simulate_q,
)
from penalwalk.walk import PenaltyWeight

U4 = PenaltyWeight.uniform(0, 3)
BL = "bilateral-last-zero"


def test_bessel_kernels():
    assert bessel3_step_probs(0) == (1, 0)
    assert bessel3_step_probs(2) == (Fraction(2, 3), Fraction(1, 3))
    assert bessel3_star_step_probs(1) == (1, 0)
    assert bessel3_star_step_probs(3) == (Fraction(2, 3), Fraction(1, 3))
    with pytest.raises(ValueError):
        bessel3_step_probs(-1)
    with pytest.raises(ValueError):
        bessel3_star_step_probs(0)


def test_bessel_star_is_shifted_bessel():
    for x in range(1, 30):
        assert bessel3_star_step_probs(x) == bessel3_step_probs(x - 1)


def test_sample_chain_is_deterministic():
    k = ChainKernel.bessel3()
    a, b = sample_chain(k, 0, 200, 7), sample_chain(k, 0, 200, 7)
    assert a == b
    assert a.path.steps[0] == 1
    assert min(a.path.positions) >= 0
    assert sample_chain(k, 0, 200, 8).path != a.path


def test_corridor_chain_stays_inside():
    sp = sample_chain(ChainKernel.corridor(2, 2), 0, 500, 3)
    assert set(sp.path.positions) <= {-1, 0, 1}
    assert not sp.absorbed


def test_chain_outside_support_raises():
    with pytest.raises(ValueError):
        sample_chain(ChainKernel.bessel3_star(), 0, 10, 1)


def test_absorbed_chain_is_cut_and_marked():
    def probs(x):
        if x >= 3:
            raise AbsorbedKernelError("no mass")
        return 1.0, 0.0

    sp = sample_chain(ChainKernel("ramp", probs, "x < 3"), 0, 10, 1)
    assert sp.absorbed and sp.path.steps == (1, 1, 1)


def test_h_transform_chain_runs():
    sp = sample_chain(ChainKernel.from_family(MartingaleFamily.last_zero_max(U4)), 0, 300, 2)
    assert len(sp.path.steps) == 300 and not sp.absorbed


def test_simulate_q_reproducible_and_validated():
    fam = MartingaleFamily(BL, U4)
    a = simulate_q(fam, 500, 200, 11)
    simulate_q.cache_clear()
    b = simulate_q(fam, 500, 200, 11)
    assert np.array_equal(a.s_star_g, b.s_star_g) and np.array_equal(a.last_zero, b.last_zero)
    assert a.kernel_max_dev <= 1e-9
    with pytest.raises(ValueError):
        simulate_q(fam, 0, 200, 1)
    with pytest.raises(ValueError):
        simulate_q(MartingaleFamily.corridor(2, 2), 10, 10, 1)


def test_report_serialisation():
    rep = qsim.estimate_sg_density(BL, U4, 300, 2000, 5)
    doc = json.loads(rep.to_json())
    assert doc["generator"] == qsim.GENERATOR_ID and doc["seed"] == 5
    assert doc["n_samples"] == 2000 and doc["horizon"] == 300
    lines = rep.histogram_csv().splitlines()
    assert lines[0] == "outcome,empirical,reference" and len(lines) > 2


def test_empty_sample_raises():
    for f in (qsim.estimate_sg_density, qsim.estimate_sign_split):
        with pytest.raises(ValueError):
            f(BL, U4, 100, 0, 1)
    with pytest.raises(ValueError):
        qsim.uniform_pre_max_test(3, 0, 1)


def test_sg_density_small():
    rep = qsim.estimate_sg_density(BL, U4, 2000, 20000, 3)
    assert rep.verdict and rep.tv < 0.02


def test_joint_law_detects_wrong_exponent():
    assert qsim.estimate_joint_gamma_sg(BL, U4, 2000, 20000, 3).verdict
    assert not qsim.estimate_joint_gamma_sg(BL, U4, 2000, 20000, 3, exponent_shift=0).verdict


def test_sign_split_uses_completed_estimator():
    rep = qsim.estimate_sign_split("last-zero-max", U4, 2000, 5000, 3)
    assert rep.verdict
    assert {"z", "sigma", "raw_fraction", "z_raw"} <= set(rep.extra)


@pytest.mark.parametrize("tag", [BL, "one-sided-max"])
def test_transition_bands(tag):
    assert qsim.post_g_transition_test(tag, U4, 500, 5000, 3).verdict


def test_uniform_pre_max_plain_walk():
    assert qsim.uniform_pre_max_test(1, 100, 1).verdict
    rep = qsim.uniform_pre_max_test(4, 20000, 2)
    # P(T_4 > 10^5) is about 4 * sqrt(2 / (pi * 10^5)), roughly 1%
    assert rep.verdict and rep.extra["unhit"] < 0.02 * 20000


def test_uniform_pre_max_q_star_diagnostics():
    rep = qsim.uniform_pre_max_test(5, 20000, 4, measure="Q*")
    law = rep.extra["q_star_law"]
    assert abs(sum(law.values()) - 1) < 1e-12
    assert rep.extra["q_star_law_pvalue"] > 1e-3
    with pytest.raises(ValueError):
        qsim.uniform_pre_max_test(5, 10, 4, measure="R")


@pytest.mark.parametrize("kernel,start,lo,hi", [
    (ChainKernel.corridor(3, 2), 0, -1, 2),
    (ChainKernel.bessel3(), 0, 0, 250),
])
def test_kernel_frequencies(kernel, start, lo, hi):
    assert qsim.kernel_frequency_test(kernel, start, 200, 5000, 1, lo, hi).verdict


def test_transience_and_trend():
    assert qsim.bessel_transience(2000, 10000, 1).verdict
    rep = qsim.trend_last_zero(BL, U4, [250, 1000], 3000, 1)
    assert rep.verdict and set(rep.empirical) == {250, 1000}


@pytest.mark.parametrize("bilateral", [False, True])
def test_bridge_conditions(bilateral):
    path, tries, _ = sample_bridge(3, 2, 1, bilateral=bilateral)
    pos = path.positions
    assert pos.count(0) == 3 and pos[-1] == 0
    assert max(abs(v) if bilateral else v for v in pos) == 2
    assert tries >= 1
    with pytest.raises(ValueError):
        sample_bridge(0, 1, 1)


def _sample_of(states, fam):
    col = lambda f: np.array([f(s) for s in states])
    zero = col(lambda s: 0)
    return qsim.QSample(
        "exact", len(states), 0, 0, s_g=col(lambda s: s.s_g), s_star_g=col(lambda s: s.s_star_g),
        gamma_g=col(lambda s: s.gamma), last_zero=zero, positive=zero, positive_prob=zero, post_g=zero,
        r_counts=zero, hit_stat=zero, x=col(lambda s: s.x), s=col(lambda s: s.s),
        s_star=col(lambda s: s.s_star), m=col(lambda s: float(evaluate(fam, s))), unhit=0, kernel_max_dev=0.0)


@pytest.mark.parametrize("w", [U4, PenaltyWeight.point(2)], ids=str)
@pytest.mark.parametrize("tag,law", [("last-zero-max", laws.q_joint_gamma_sg),
                                     (BL, laws.q_star_joint_gamma_sg)])
def test_completed_joint_law_is_unbiased(w, tag, law):
    # Q-average of the conditional law at time H equals the closed-form table
    fam = MartingaleFamily(tag, w)
    for H in (1, 6, 9):
        layer, _ = dp_final(H, 0, {"x", "s", "s_g", "s_star", "s_star_g", "gamma"})
        acc = {}
        for st, mass in layer.items():
            m = evaluate(fam, st)
            if m == 0:
                continue
            for key, v in qsim.completed_joint_law(_sample_of([st], fam), fam).items():
                acc[key] = acc.get(key, 0.0) + float(mass * m) * v
        cells = set(acc) | {(a, k) for a in range(1, 30) for k in range(4)}
        assert max(abs(acc.get(c, 0.0) - float(law(w, *c))) for c in cells) < 1e-14


def test_completed_law_has_unit_mass_per_chain():
    fam = MartingaleFamily("last-zero-max", PenaltyWeight.truncated_geometric(Fraction(1, 2), 6))
    table, masses = qsim.completed_joint_law(simulate_q(fam, 200, 80, 2), fam, per_chain=True)
    assert np.allclose(masses, 1, atol=1e-12)
    assert abs(sum(table.values()) - 1) < 1e-12


def test_completed_joint_test_removes_truncation_bias():
    rep = qsim.estimate_joint_gamma_sg("last-zero-max", U4, 300, 20000, 3)
    assert rep.extra["raw_pvalue"] < 1e-20
    assert rep.verdict and rep.params["estimator"] == "completed"
    with pytest.raises(ValueError):
        qsim.completed_joint_law(simulate_q(MartingaleFamily.one_sided_max(U4), 10, 10, 1),
                                 MartingaleFamily.one_sided_max(U4))
