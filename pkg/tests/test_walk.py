import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from penalwalk.walk import (
    Interval,
    Path,
    PenaltyWeight,
    WalkState,
    aux_series_h,
    moment,
    path_statistics,
    reduce_state,
    required_fields,
    step_state,
    tail,
)

U4 = PenaltyWeight.uniform(0, 3)
GEO = PenaltyWeight.geometric(Fraction(1, 2))

steps_st = st.lists(st.sampled_from([1, -1]), max_size=40)


def test_first_step_up():
    s = step_state(WalkState.initial(0), 1)
    assert (s.x, s.s, s.i, s.s_g, s.gamma, s.g) == (1, 1, 0, 0, 1, 0)


def test_return_to_zero_updates_last_zero_data():
    s = step_state(step_state(WalkState.initial(0), 1), -1)
    assert (s.x, s.gamma, s.g, s.s_g, s.s_star_g) == (0, 2, 2, 1, 1)


def test_bad_step_rejected():
    with pytest.raises(ValueError):
        step_state(WalkState.initial(0), 2)


@pytest.mark.parametrize("n", range(13))
def test_incremental_state_matches_recompute_exhaustive(n):
    for steps in itertools.product((1, -1), repeat=n):
        path = Path(0, steps)
        assert path.final_state() == path_statistics(path)


@given(st.integers(-5, 5), steps_st)
def test_incremental_state_matches_recompute(start, steps):
    path = Path(start, tuple(steps))
    assert path.final_state() == path_statistics(path)


@given(st.integers(-3, 3), steps_st)
def test_state_invariants(start, steps):
    state = WalkState.initial(start)
    for e in steps:
        nxt = step_state(state, e)
        assert (nxt.s - state.s) + (state.i - nxt.i) <= 1
        state = nxt
    assert state.i <= state.x <= state.s
    assert state.s_star == max(state.s, -state.i)
    if start >= 0:
        assert state.r >= abs(state.x)
    if state.has_zero:
        assert state.s_g <= state.s and state.s_star_g <= state.s_star


def test_off_zero_start_has_no_last_zero():
    s = WalkState.initial(3)
    assert s.g is None and s.s_g is None and s.gamma == 0


@given(steps_st)
def test_reduced_dynamics_commute(steps):
    keep = required_fields(["s_g"])
    full = WalkState.initial(0)
    red = reduce_state(full, keep)
    for e in steps:
        full = step_state(full, e)
        red = reduce_state(step_state(red, e), keep)
        assert red.s_g == full.s_g and red.x == full.x


def test_unknown_field_rejected():
    with pytest.raises(ValueError):
        required_fields(["nope"])


def test_tail_values():
    assert tail(U4, 0) == 1
    assert tail(GEO, 0) == 1
    assert tail(U4, 2) == Fraction(1, 2)
    assert tail(GEO, 3) == Fraction(1, 8)


def test_moment_values():
    assert moment(U4, 1) == Fraction(3, 2)
    assert moment(PenaltyWeight.point(0), 2) == 0
    assert moment(GEO, 1) == 1


def test_geometric_moments_match_partial_sums():
    for q in (Fraction(1, 2), Fraction(1, 3), Fraction(3, 4)):
        w = PenaltyWeight.geometric(q)
        for r in (1, 2):
            partial = sum(k**r * w.phi(k) for k in range(400))
            assert abs(float(partial) - float(w.moment(r))) < 1e-12


def test_aux_series_h_values():
    assert aux_series_h(PenaltyWeight.point(1), 1) == 1
    assert aux_series_h(U4, 2) == Fraction(5, 24)
    with pytest.raises(ValueError):
        aux_series_h(U4, 0)


def test_aux_series_h_geometric_enclosure():
    enc = aux_series_h(GEO, 1)
    assert isinstance(enc, Interval)
    assert enc.width <= Fraction(1, 10**15)
    # sum_{k>=1} (1/2)^{k+1}/k = ln(2)/2
    import math

    assert abs(float(enc) - math.log(2) / 2) < 1e-15


@given(st.dictionaries(st.integers(0, 12), st.integers(1, 9), min_size=1, max_size=8))
def test_tail_differences_give_weights(raw):
    z = sum(raw.values())
    w = PenaltyWeight.finite({k: Fraction(v, z) for k, v in raw.items()})
    for x in range(w.support_max + 2):
        assert w.tail(x) - w.tail(x + 1) == w.phi(x)


@given(st.integers(1, 6), st.integers(0, 30))
@settings(max_examples=30)
def test_tail_differences_geometric(den, x):
    w = PenaltyWeight.geometric(Fraction(1, den + 1))
    assert w.tail(x) - w.tail(x + 1) == w.phi(x)


def test_deficient_mass_rejected():
    with pytest.raises(ValueError):
        PenaltyWeight.finite({0: Fraction(1, 2)})
    with pytest.raises(ValueError):
        PenaltyWeight.finite({0: Fraction(3, 2), 1: Fraction(-1, 2)})
    with pytest.raises(ValueError):
        PenaltyWeight.geometric(1)


def test_parse_formats():
    assert PenaltyWeight.parse("0:1/4, 1:3/4") == PenaltyWeight.finite({0: Fraction(1, 4), 1: Fraction(3, 4)})
    assert PenaltyWeight.parse("geometric q=1/3") == PenaltyWeight.geometric(Fraction(1, 3))
    assert PenaltyWeight.parse(str(U4)) == U4
    assert PenaltyWeight.parse("uniform:0..3") == U4
    assert PenaltyWeight.parse("point:2") == PenaltyWeight.point(2)
    assert PenaltyWeight.parse("geometric:1/2") == PenaltyWeight.geometric(Fraction(1, 2))
    assert PenaltyWeight.parse("truncgeom:1/2:6") == PenaltyWeight.truncated_geometric(Fraction(1, 2), 6)
    for bad in ("", "0:1/2", "0:0.5, 1:0.5", "x:1"):
        with pytest.raises(ValueError):
            PenaltyWeight.parse(bad)


def test_truncated_geometric_is_normalised():
    w = PenaltyWeight.truncated_geometric(Fraction(1, 2), 30)
    assert sum(p for _, p in w.weights) == 1
    assert w.support_max == 30


def test_float_tables_consistent():
    for w in (U4, GEO):
        phi, Phi = w.float_tables(8)
        for k in range(8):
            assert phi[k] == pytest.approx(float(w.phi(k)))
            assert Phi[k] == pytest.approx(float(w.tail(k)))


def test_lemma_identity_tail_over_n():
    # sum_{k>=n} (k phi(k) + Phi(k)) / (k(k+1)) = Phi(n) / n
    for w in (U4, PenaltyWeight.truncated_geometric(Fraction(1, 2), 12), PenaltyWeight.point(7)):
        top = w.support_max
        for n in range(1, 21):
            lhs = sum(
                (k * w.phi(k) + w.tail(k)) / (k * (k + 1)) for k in range(n, max(n, top) + 1)
            )
            assert lhs == w.tail(n) / n
