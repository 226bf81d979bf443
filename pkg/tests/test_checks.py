from fractions import Fraction

import pytest

from penalwalk import checks
from penalwalk.walk import PenaltyWeight

U4 = PenaltyWeight.uniform(0, 3)

SMALL = {
    "first-passage-max": dict(amax=3, kmax=12),
    "next-zero": dict(smax=4),
    "bilateral-next-zero": dict(smax=4),
    "return-max": dict(amax=3, kmax=12),
    "return-bimax": dict(amax=3, kmax=12),
    "joint-max-endpoint": dict(pmax=8),
    "zeros-at-hit": dict(cmax=2, mmax=12),
    "premax-at-hit": dict(pmax=6),
    "corridor": dict(nmax=8, abmax=3),
    "binomial-filter": dict(nmax=20, pmax=6),
    "tail-ratio": dict(nmax=10),
    "max-ratio-product": dict(nmax=12),
}


def test_registry_is_covered():
    assert set(SMALL) == set(checks.IDENTITIES)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_identity_grids_pass(name):
    res = checks.run_identity(name, **SMALL[name])
    assert res.rows
    assert res.passed, res.failures()[:3] if "ok" in res.columns else res.summary


def test_unknown_identity():
    with pytest.raises(ValueError):
        checks.run_identity("nope")


def test_wrong_exponent_is_detected():
    assert not checks.check_return_max(3, 12, exponent_shift=0).passed
    assert not checks.check_return_max(3, 12, bilateral=True, exponent_shift=0).passed


def test_adjudications_are_consistent():
    for adj in checks.adjudicate_all(depth=10):
        assert adj.consistent, adj.row()
        assert adj.alternative_failures == 0 < adj.printed_failures
        assert adj.resolved == adj.alternative
        assert len(adj.row()) == len(checks.Adjudication.COLUMNS)


def test_asymptotics_small():
    assert checks.asym_max_zero(p=10**4, validate_upto=16).passed
    assert checks.asym_corridor(n=400, abmax=3, lo=0.9, hi=1.1).passed
    assert checks.asym_bilateral(p=2000, alphamax=2).passed


def test_unknown_asymptotic():
    with pytest.raises(ValueError):
        checks.run_asymptotic("nope")


def test_atoms():
    assert checks.atoms(0) == [()]
    assert checks.atoms(2) == [(-1, -1), (-1, 1), (1, -1), (1, 1)]


def test_ratio_table_is_dominated_and_increasing():
    t = checks.ratio_table("last-zero-max", U4, (1, -1), (8, 12, 16))
    vals = [r[1] for r in t.rows]
    assert all(r[-1] for r in t.rows)
    assert vals == sorted(vals)
    assert all(isinstance(v, Fraction) for v in vals)


def test_ratio_convergence_summary_small():
    res = checks.ratio_convergence(tags=("max",), weights=[U4], nmax=2, ps=(8, 12))
    assert res.summary["dominated"] and res.summary["monotone"]
    assert 0 < res.summary["worst_gap_ratio"] < 1
    assert len(res.rows) == 7


def test_next_zero_discrepancy_shape():
    res = checks.next_zero_discrepancy(weights=[U4], nmax=1, ps=(8, 12))
    assert len(res.rows) == 3
    assert all(r[2] >= 0 for r in res.rows)
