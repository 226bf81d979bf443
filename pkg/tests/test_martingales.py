import math
from collections import defaultdict
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from penalwalk import checks
from penalwalk.martingales import (
    AbsorbedKernelError,
    FloatEvaluator,
    MartingaleFamily,
    UndefinedStateError,
    all_default_families,
    corridor_kernel,
    default_weights,
    evaluate,
    expected_value,
    is_degenerate,
    one_step_mean,
    positive_side_probability,
    q_kernel,
    reachable_states,
    stopped_value,
    verify,
)
from penalwalk.oracle import dp_final
from penalwalk.qsim import bessel3_step_probs
from penalwalk.walk import Path, PenaltyWeight, WalkState, step_state

U4 = PenaltyWeight.uniform(0, 3)
D2 = PenaltyWeight.point(2)
WEIGHTED_TAGS = ("one-sided-max", "next-zero-max", "last-zero-max", "bilateral-last-zero")


def after(*steps):
    return Path(0, steps).final_state()


def test_unit_initial_value():
    for fam in all_default_families(4):
        assert evaluate(fam, WalkState.initial()) == 1


def test_examples():
    assert evaluate(MartingaleFamily.last_zero_max(U4), after(1)) == Fraction(7, 8)
    assert abs(evaluate(MartingaleFamily.corridor(2, 2), after(1, -1)) - 2.0) <= 1e-12
    assert one_step_mean(MartingaleFamily.last_zero_max(U4), WalkState.initial()) == 1


def test_corridor_kernel_examples():
    fam = MartingaleFamily.corridor(2, 2)
    up, down = q_kernel(fam, WalkState.initial())
    assert abs(up - 0.5) <= 1e-12 and abs(down - 0.5) <= 1e-12
    up, _ = q_kernel(fam, after(1))
    assert abs(up) <= 1e-12
    assert corridor_kernel(2, 2, 0) == pytest.approx((0.5, 0.5), abs=1e-12)


@pytest.mark.parametrize("fam", list(all_default_families(6)), ids=str)
def test_one_step_identity(fam):
    rep = verify(fam, depth=16)
    assert rep.passed, rep.failures[:3]
    assert rep.min_value >= 0


def test_verification_report_csv():
    rep = verify(MartingaleFamily.one_sided_max(U4), depth=6)
    text = rep.to_csv()
    assert text.splitlines()[0].startswith("family,n,x")
    assert text.strip().endswith("0/1,pass")


def test_degenerate_corridor_fails_at_the_root():
    fam = MartingaleFamily.corridor(1, 1)
    assert is_degenerate(fam)
    assert not verify(fam, depth=4).passed
    assert not any(is_degenerate(f) for f in all_default_families(6))


@pytest.mark.parametrize("w", default_weights(), ids=str)
def test_next_zero_equals_one_sided(w):
    a, b = MartingaleFamily.next_zero_max(w), MartingaleFamily.one_sided_max(w)
    for s in reachable_states(b, 14):
        assert evaluate(a, s) == evaluate(b, s)


def test_complement_constant_is_not_a_martingale():
    adj = checks.adjudicate_max_constant(depth=14)
    assert adj.resolved == "Phi(S_n)"
    assert adj.alternative_failures == 0 < adj.printed_failures


@pytest.mark.parametrize("tag", WEIGHTED_TAGS)
def test_kernels_are_probabilities(tag):
    for w in default_weights():
        fam = MartingaleFamily(tag, w)
        for s in reachable_states(fam, 12):
            if evaluate(fam, s) > 0:
                up, down = q_kernel(fam, s)
                assert up + down == 1 and up >= 0 and down >= 0


def test_absorbed_and_undefined_states():
    fam = MartingaleFamily.corridor(2, 3)
    out = after(1, 1)
    assert evaluate(fam, out) == 0.0
    with pytest.raises(AbsorbedKernelError):
        q_kernel(fam, out)
    with pytest.raises(UndefinedStateError):
        evaluate(MartingaleFamily.last_zero_max(U4), WalkState.initial(2))
    with pytest.raises(UndefinedStateError):
        evaluate(MartingaleFamily.bilateral_last_zero(U4), WalkState.initial(-1))
    frozen = after(1, 1, 1, 1, 1)  # S = 5 beyond the support of U4, g = 0
    assert evaluate(MartingaleFamily.last_zero_max(U4), frozen) == Fraction(5, 8)


def test_family_validation():
    with pytest.raises(ValueError):
        MartingaleFamily("one-sided-max")
    with pytest.raises(ValueError):
        MartingaleFamily.corridor(0, 2)
    with pytest.raises(ValueError):
        MartingaleFamily("triangle", U4)
    assert MartingaleFamily.barrier(3).b == 3
    assert str(MartingaleFamily.barrier(3)) == "barrier(3)"


def test_stopped_values():
    lz, bl = MartingaleFamily.last_zero_max(U4), MartingaleFamily.bilateral_last_zero(U4)
    assert stopped_value(lz, "T_p", k=1, p=3) == Fraction(1, 8) * 3 + Fraction(1, 4)
    assert stopped_value(lz, "d_a", m=2) == Fraction(1, 4) * 2 + Fraction(1, 2)
    assert stopped_value(bl, "T*_p", k=0, p=5) == Fraction(5, 4)
    with pytest.raises(ValueError):
        stopped_value(MartingaleFamily.one_sided_max(U4), "T_p", k=0, p=2)


@pytest.mark.parametrize("w", [U4, D2])
def test_stopped_value_at_hit_matches_path_value(w):
    # M at T_p evaluated on actual paths equals the closed form
    fam = MartingaleFamily.last_zero_max(w)
    for steps in [(1, 1, 1), (1, -1, 1, 1, 1), (-1, 1, 1, -1, 1, 1, 1)]:
        st_ = after(*steps)
        assert evaluate(fam, st_) == stopped_value(fam, "T_p", k=st_.s_g, p=st_.x)


@pytest.mark.parametrize("w", [U4, D2, PenaltyWeight.truncated_geometric(Fraction(1, 2), 6)], ids=str)
@pytest.mark.parametrize("tag", ["last-zero-max", "bilateral-last-zero"])
def test_positive_side_probability_has_mean_half(w, tag):
    fam = MartingaleFamily(tag, w)
    for n in (1, 3, 8, 13):
        layer, _ = dp_final(n, 0, set(fam.fields) | {"s_g", "s_star_g", "s", "s_star"})
        total = sum(m * evaluate(fam, s) * positive_side_probability(fam, s) for s, m in layer.items()
                    if evaluate(fam, s) > 0)
        assert total == Fraction(1, 2)


def test_positive_side_probability_is_a_q_martingale():
    fam = MartingaleFamily.last_zero_max(U4)
    for s in reachable_states(fam, 10):
        m = evaluate(fam, s)
        if m == 0:
            continue
        up, down = q_kernel(fam, s)
        nxt = [(p, step_state(s, e)) for p, e in ((up, 1), (down, -1)) if p > 0]
        assert sum(p * positive_side_probability(fam, t) for p, t in nxt) == positive_side_probability(fam, s)


@pytest.mark.parametrize("w", [PenaltyWeight.point(3), U4])
def test_pitman_statistic_is_bessel_under_q(w):
    fam = MartingaleFamily.one_sided_max(w)
    for n in range(10):
        layer, _ = dp_final(n, 0, {"x", "s"})
        num, den = defaultdict(Fraction), defaultdict(Fraction)
        for s, m in layer.items():
            v = evaluate(fam, s)
            if v == 0:
                continue
            up, down = q_kernel(fam, s)
            rise = (up if step_state(s, 1).r > s.r else 0) + (down if step_state(s, -1).r > s.r else 0)
            num[s.r] += m * v * rise
            den[s.r] += m * v
        for r in den:
            assert num[r] / den[r] == bessel3_step_probs(r)[0]


def test_expected_value_is_one():
    for fam in [MartingaleFamily.last_zero_max(U4), MartingaleFamily.bilateral_last_zero(D2)]:
        layer, _ = dp_final(9, 0, set(fam.fields) | {"s_g", "s_star_g"})
        assert expected_value(fam, 9, layer) == 1
    fam = MartingaleFamily.corridor(3, 2)
    layer, _ = dp_final(9, 0, {"x", "s", "i"})
    assert abs(expected_value(fam, 9, layer) - 1) <= 1e-12


@given(st.lists(st.sampled_from([1, -1]), max_size=30), st.sampled_from(WEIGHTED_TAGS))
def test_float_evaluator_matches_exact(steps, tag):
    fam = MartingaleFamily(tag, U4)
    s = Path(0, tuple(steps)).final_state()
    ev = FloatEvaluator(fam)
    v = ev(s.x, s.s, s.s_g, s.s_star, s.s_star_g)
    assert math.isclose(float(v), float(evaluate(fam, s)), rel_tol=1e-12, abs_tol=1e-15)
