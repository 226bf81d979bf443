"""Cross-checks of closed-form laws against the exact oracles, and adjudication
of the ambiguous forms of three identities.

Every check returns a :class:`CheckResult`: a table of rows (one per grid
point) with a verdict.  Rows are produced in canonical parameter order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

from . import laws
from .martingales import MartingaleFamily, default_weights, evaluate, reachable_states
from .oracle import (
    EventSpec,
    PenaltyFunctional,
    bilateral_gzero_at_most,
    bilateral_gzero_below,
    bilateral_next_zero_expectation,
    corridor_survival_log,
    enumerate_law,
    next_zero_expectation,
    normalized_expectation,
    penalized_ratio,
    premax_at_hit_law,
    prob_max_zero,
    return_max_law,
    ruin_probability,
    zeros_at_hit_law,
)
from .walk import Path, PenaltyWeight, step_state


@dataclass
class CheckResult:
    """Rows of a grid check; ``passed`` is the conjunction of the row verdicts."""

    name: str
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if "ok" not in self.columns:
            return bool(self.summary.get("passed", True))
        k = self.columns.index("ok")
        return all(r[k] for r in self.rows)

    def failures(self) -> list[tuple]:
        k = self.columns.index("ok")
        return [r for r in self.rows if not r[k]]


# oracle equivalence of closed laws


def check_first_passage_max(amax: int = 5, kmax: int = 40) -> CheckResult:
    """``P_a(S_{T_0} = k) = a / (k (k+1))`` against the ruin linear solve."""
    res = CheckResult("first-passage-max", ("a", "k", "closed", "oracle", "ok"), params={"amax": amax, "kmax": kmax})
    for a in range(1, amax + 1):
        for k in range(a, kmax + 1):
            oracle = ruin_probability(a, k) - ruin_probability(a, k + 1)
            closed = laws.first_passage_max_law(a, k)
            res.rows.append((a, k, closed, oracle, closed == oracle))
    return res


def check_next_zero(smax: int = 6, weights=None, bilateral: bool = False) -> CheckResult:
    """Conditional law at the next zero against the ruin-probability oracle.

    One-sided: states ``0 <= s <= smax``, ``-smax <= x <= s``.  Bilateral:
    ``|x| <= s* <= smax``.
    """
    weights = default_weights() if weights is None else weights
    name = "bilateral-next-zero" if bilateral else "next-zero"
    res = CheckResult(name, ("weight", "s", "x", "closed", "oracle", "ok"), params={"smax": smax})
    for w in weights:
        for s in range(smax + 1):
            lo = -s if bilateral else -smax
            for x in range(lo, s + 1):
                if bilateral:
                    closed = laws.bilateral_cond_next_zero(w, s, x)
                    oracle = bilateral_next_zero_expectation(w, s, x)
                else:
                    closed = laws.cond_next_zero_max(w, s, x)
                    oracle = next_zero_expectation(w, s, x)
                res.rows.append((str(w), s, x, closed, oracle, closed == oracle))
    return res


def check_return_max(amax: int = 4, kmax: int = 30, bilateral: bool = False,
                     exponent_shift: int = 1) -> CheckResult:
    """Law of the maximum (or bilateral maximum) at the ``a``-th visit to 0 against
    the excursion-by-excursion oracle.  ``exponent_shift = 0`` tests exponent ``a``."""
    name = "return-bimax" if bilateral else "return-max"
    res = CheckResult(name, ("a", "k", "closed", "oracle", "ok"),
                      params={"amax": amax, "kmax": kmax, "exponent_shift": exponent_shift})
    for a in range(2 if bilateral else 1, amax + 1):
        law = return_max_law(a, kmax, bilateral=bilateral)
        for k in range(kmax + 1):
            if bilateral:
                closed = laws.tau_bimax_pmf(a, k, exponent_shift)
            else:
                closed = laws.tau_max_pmf(a, k, exponent_shift)
            oracle = law[k]
            res.rows.append((a, k, closed, oracle, closed == oracle))
    return res


def check_joint_max_endpoint(pmax: int = 14) -> CheckResult:
    """``P(S_p = b, X_p = a)`` against path enumeration."""
    res = CheckResult("joint-max-endpoint", ("p", "b", "a", "closed", "oracle", "ok"), params={"pmax": pmax})
    for p in range(pmax + 1):
        law = enumerate_law(p, 0, lambda path: (path.final_state().s, path.final_state().x))
        for b in range(p + 1):
            for a in range(-p, b + 1):
                closed = laws.joint_max_endpoint_pmf(p, b, a)
                oracle = law[(b, a)]
                res.rows.append((p, b, a, closed, oracle, closed == oracle))
    return res


def check_zeros_at_hit(cmax: int = 3, mmax: int = 30) -> CheckResult:
    """Geometric law of the number of zeros before ``T_c``."""
    res = CheckResult("zeros-at-hit", ("c", "m", "closed", "oracle", "ok"), params={"cmax": cmax, "mmax": mmax})
    for c in range(1, cmax + 1):
        law = zeros_at_hit_law(c, mmax)
        for m in range(1, mmax + 1):
            closed = laws.gamma_hit_pmf(c, m)
            res.rows.append((c, m, closed, law[m], closed == law[m]))
    return res


def check_premax_at_hit(pmax: int = 8) -> CheckResult:
    """Uniform law of the maximum before the last zero preceding ``T_p`` (and ``T*_p``), under P."""
    res = CheckResult("premax-at-hit", ("side", "p", "k", "closed", "oracle", "ok"), params={"pmax": pmax})
    for side, bil in (("one-sided", False), ("bilateral", True)):
        for p in range(1, pmax + 1):
            law = premax_at_hit_law(p, bilateral=bil)
            for k in range(p):
                closed = laws.uniform_pre_max_pmf(p, k)
                res.rows.append((side, p, k, closed, law[k], closed == law[k]))
    return res


# corridor and filters


def check_corridor(nmax: int = 14, abmax: int = 5, tol: float = 1e-10) -> CheckResult:
    """Corridor laws: closed alternating sum against enumeration (exact) and the
    trigonometric form against the closed sum (``tol``)."""
    res = CheckResult("corridor", ("n", "a", "b", "c", "exact", "enumerated", "trig", "abs_diff", "ok"),
                      params={"nmax": nmax, "abmax": abmax, "tol": tol})
    worst = 0.0
    for n in range(nmax + 1):
        law = enumerate_law(n, 0, lambda path: (path.final_state().s, path.final_state().i, path.final_state().x))
        for a, b in itertools.product(range(1, abmax + 1), repeat=2):
            inside: dict[int, Fraction] = {}
            for (s, i, x), m in law.items():
                if s < a and i > -b:
                    inside[x] = inside.get(x, Fraction(0)) + m
            for c in range(-b + 1, a):
                exact = laws.corridor_pmf(n, a, b, c)
                trig = laws.corridor_pmf_trig(n, a, b, c)
                diff = abs(trig - float(exact))
                worst = max(worst, diff)
                enum = inside.get(c, Fraction(0))
                res.rows.append((n, a, b, c, exact, enum, trig, diff, exact == enum and diff <= tol))
    res.summary["max_abs_diff"] = worst
    return res


def check_binomial_filter(nmax: int = 40, pmax: int = 10, rtol: float = 1e-6) -> CheckResult:
    """Both sides of the roots-of-unity filter for ``sum_{k = u mod p} C(n, k)``."""
    res = CheckResult("binomial-filter", ("n", "p", "u", "exact", "trig", "rel_diff", "ok"),
                      params={"nmax": nmax, "pmax": pmax, "rtol": rtol})
    worst = 0.0
    for n in range(nmax + 1):
        for p in range(1, pmax + 1):
            for u in range(p):
                exact, approx = laws.binomial_filter(n, p, u)
                rel = abs(approx - exact) / max(1, abs(exact))
                worst = max(worst, rel)
                res.rows.append((n, p, u, exact, approx, rel, rel <= rtol))
    res.summary["max_rel_diff"] = worst
    return res


def check_tail_ratio(nmax: int = 20, weights=None) -> CheckResult:
    """``sum_{k >= n} (k phi(k) + Phi(k)) / (k (k+1))`` against ``Phi(n)/n`` and ``(1 - Phi(n))/n``."""
    weights = default_weights() if weights is None else weights
    res = CheckResult("tail-ratio", ("weight", "n", "lhs", "tail_over_n", "complement_over_n", "ok"),
                      params={"nmax": nmax})
    n_alt = 0
    for w in weights:
        for n in range(1, nmax + 1):
            lhs, rhs, alt = laws.tail_ratio_identity(w, n)
            n_alt += lhs == alt
            res.rows.append((str(w), n, lhs, rhs, alt, lhs == rhs))
    res.summary["complement_matches"] = n_alt
    return res


def check_max_ratio_product(nmax: int = 30) -> CheckResult:
    """Telescoping product for ``P(S_n = k) / P(S_n = 0)`` against the binomial law."""
    res = CheckResult("max-ratio-product", ("n", "k", "product", "direct", "ok"), params={"nmax": nmax})
    for n in range(nmax + 1):
        for k in range(n + 1):
            direct = laws.srw_max_pmf(n, k) / laws.max_zero_prob(n)
            prod = laws.max_ratio_product(n, k)
            res.rows.append((n, k, prod, direct, prod == direct))
    return res


IDENTITIES: dict[str, Callable[..., CheckResult]] = {
    "first-passage-max": check_first_passage_max,
    "next-zero": check_next_zero,
    "bilateral-next-zero": lambda smax=6: check_next_zero(smax, bilateral=True),
    "return-max": check_return_max,
    "return-bimax": lambda amax=4, kmax=30, exponent_shift=1: check_return_max(amax, kmax, True, exponent_shift),
    "joint-max-endpoint": check_joint_max_endpoint,
    "zeros-at-hit": check_zeros_at_hit,
    "premax-at-hit": check_premax_at_hit,
    "corridor": check_corridor,
    "binomial-filter": check_binomial_filter,
    "tail-ratio": check_tail_ratio,
    "max-ratio-product": check_max_ratio_product,
}


def run_identity(name: str, **grid) -> CheckResult:
    try:
        fn = IDENTITIES[name]
    except KeyError:
        raise ValueError(f"unknown identity {name!r}; choose from {', '.join(sorted(IDENTITIES))}") from None
    return fn(**grid)


# adjudication of ambiguous printed forms


@dataclass(frozen=True)
class Adjudication:
    """Which of two candidate forms an exact oracle supports."""

    item: str
    printed: str
    alternative: str
    printed_failures: int
    alternative_failures: int
    cases: int
    evidence: str

    @property
    def resolved(self) -> str:
        if self.alternative_failures == 0 and self.printed_failures > 0:
            return self.alternative
        if self.printed_failures == 0 and self.alternative_failures > 0:
            return self.printed
        return "unresolved"

    @property
    def consistent(self) -> bool:
        return self.resolved != "unresolved"

    COLUMNS = ("item", "printed", "alternative", "printed_failures", "alternative_failures", "cases",
               "resolved", "evidence")

    def row(self) -> tuple:
        return (self.item, self.printed, self.alternative, self.printed_failures, self.alternative_failures,
                self.cases, self.resolved, self.evidence)


def adjudicate_tail_ratio(nmax: int = 20) -> Adjudication:
    res = check_tail_ratio(nmax)
    return Adjudication("tail-ratio right side", "(1 - Phi(n))/n", "Phi(n)/n",
                        len(res.rows) - res.summary["complement_matches"], len(res.failures()), len(res.rows),
                        "exact sum over finitely supported weights")


def _max_constant_failures(w: PenaltyWeight, depth: int, complement: bool) -> tuple[int, int]:
    def m(st):
        c = 1 - w.tail(st.s) if complement else w.tail(st.s)
        return w.phi(st.s) * (st.s - st.x) + c

    states = reachable_states(MartingaleFamily.one_sided_max(w), depth)
    bad = sum(1 for st in states if (m(step_state(st, 1)) + m(step_state(st, -1))) / 2 != m(st))
    return bad, len(states)


def adjudicate_max_constant(depth: int = 25) -> Adjudication:
    """``phi(S)(S - X) + Phi(S)`` against ``phi(S)(S - X) + 1 - Phi(S)``.

    The printed form passes for weights whose tail is constant on the reachable
    states, so the count is over the default weights."""
    printed = alt = cases = 0
    for w in default_weights():
        b1, n1 = _max_constant_failures(w, depth, complement=True)
        b2, _ = _max_constant_failures(w, depth, complement=False)
        printed += b1
        alt += b2
        cases += n1
    return Adjudication("max martingale constant", "1 - Phi(S_n)", "Phi(S_n)", printed, alt, cases,
                        f"one-step mean over states reachable in {depth} steps")


def adjudicate_return_exponent(amax: int = 4, kmax: int = 30) -> Adjudication:
    printed = alt = cases = 0
    for bil in (False, True):
        p = check_return_max(amax, kmax, bil, exponent_shift=0)
        a = check_return_max(amax, kmax, bil, exponent_shift=1)
        printed += len(p.failures())
        alt += len(a.failures())
        cases += len(a.rows)
    return Adjudication("return-max exponent", "a", "a - 1", printed, alt, cases,
                        "excursion oracle for S and S* at the a-th zero (tau_1 = 0)")


def adjudicate_all(depth: int = 25) -> list[Adjudication]:
    return [adjudicate_tail_ratio(), adjudicate_max_constant(depth), adjudicate_return_exponent()]


# asymptotic rates against exact or float-DP values


def asym_max_zero(p: int = 10**6, lo: float = 0.98, hi: float = 1.02, validate_upto: int = 24) -> CheckResult:
    """``P(S_p = 0) sqrt(pi p / 2)`` at ``p``, after validating the log-gamma
    evaluation against exact enumeration for small horizons."""
    res = CheckResult("max-zero", ("p", "value", "estimate", "ratio", "ok"), params={"p": p, "lo": lo, "hi": hi})
    for q in range(1, validate_upto + 1):
        exact = prob_max_zero(q)
        ok = exact == laws.max_zero_prob(q) and math.isclose(math.log(exact), laws.log_max_zero_prob(q),
                                                             rel_tol=1e-12, abs_tol=1e-12)
        res.rows.append((q, exact, None, None, ok))
    value = math.exp(laws.log_max_zero_prob(p))
    est = laws.max_zero_asym(p).value
    res.rows.append((p, value, est, value / est, lo <= value / est <= hi))
    return res


def asym_corridor(n: int = 2000, abmax: int = 4, lo: float = 0.98, hi: float = 1.02) -> CheckResult:
    """Float-DP corridor survival over its leading term, in log space.

    With ``a = b = 1`` the corridor is a single site: survival and estimate are
    both 0 for ``n >= 1`` and the ratio is reported as undefined.
    """
    res = CheckResult("corridor-survival", ("n", "a", "b", "log_value", "log_estimate", "ratio", "ok"),
                      params={"n": n, "abmax": abmax, "lo": lo, "hi": hi})
    for a, b in itertools.product(range(1, abmax + 1), repeat=2):
        lv = corridor_survival_log(n, a, b)
        le = laws.corridor_survival_asym_log(n, a, b)
        if lv == -math.inf and le == -math.inf:
            res.rows.append((n, a, b, lv, le, math.nan, True))
            continue
        ratio = math.exp(lv - le)
        res.rows.append((n, a, b, lv, le, ratio, lo <= ratio <= hi))
    return res


def asym_bilateral(p: int = 10**4, alphamax: int = 3, rtol: float = 0.10) -> CheckResult:
    """``P(S*_{g_p} < alpha)`` by float DP against ``alpha sqrt(2/(pi p))``.

    The non-strict event ``S*_{g_p} <= alpha`` is tabulated alongside; it has a
    different constant and is not part of the verdict.
    """
    res = CheckResult("bilateral-gzero", ("p", "alpha", "value", "estimate", "ratio", "ratio_at_most", "ok"),
                      params={"p": p, "alphamax": alphamax, "rtol": rtol})
    for alpha in range(1, alphamax + 1):
        v = bilateral_gzero_below(alpha, p)
        est = laws.bilateral_gzero_asym(alpha, p).value
        at_most = bilateral_gzero_at_most(alpha, p) / est
        res.rows.append((p, alpha, v, est, v / est, at_most, abs(v / est - 1) <= rtol))
    return res


ASYMPTOTICS: dict[str, Callable[..., CheckResult]] = {
    "max-zero": asym_max_zero,
    "corridor-survival": asym_corridor,
    "bilateral-gzero": asym_bilateral,
}


def run_asymptotic(name: str, **params) -> CheckResult:
    try:
        fn = ASYMPTOTICS[name]
    except KeyError:
        raise ValueError(f"unknown asymptotic {name!r}; choose from {', '.join(sorted(ASYMPTOTICS))}") from None
    return fn(**params)


# convergence of penalised expectations

LIMIT_FAMILY = {"max": "one-sided-max", "next-zero-max": "next-zero-max", "last-zero-max": "last-zero-max"}


def atoms(n: int) -> list[tuple[int, ...]]:
    """The ``2**n`` path prefixes generating ``F_n``, in lexicographic order of steps (``-1`` first)."""
    return list(itertools.product((-1, 1), repeat=n))


def _event(steps) -> EventSpec:
    return EventSpec.path(steps) if steps else EventSpec.all()


def ratio_table(tag: str, w: PenaltyWeight, steps: tuple[int, ...], ps) -> CheckResult:
    """``E[1_Lambda G_p] / (c P(S_{p-n} = 0))`` and ``E[1_Lambda G_p] / E[G_p]`` for the
    atom ``Lambda`` given by ``steps``, against the limit ``E[1_Lambda M_n]``.

    ``ok`` marks rows where the normalised value does not exceed the limit."""
    n = len(steps)
    fam = MartingaleFamily(LIMIT_FAMILY[tag], w)
    limit = evaluate(fam, Path(0, tuple(steps)).final_state()) / 2**n
    G = PenaltyFunctional(tag, w)
    ev = _event(steps)
    res = CheckResult("ratio", ("p", "normalized", "ratio", "limit", "gap", "ok"),
                      params={"family": tag, "weight": str(w), "event": ev.label, "n": n})
    for p in ps:
        v = normalized_expectation(n, ev, G, p)
        r = penalized_ratio(n, ev, G, p)
        res.rows.append((p, v, r, limit, limit - v, v <= limit))
    return res


def ratio_convergence(tags=("max", "next-zero-max", "last-zero-max"), weights=None, nmax: int = 4,
                      ps=(16, 20, 24), gap_factor: Fraction = Fraction(1, 4)) -> CheckResult:
    """Domination, monotonicity and gap contraction of the normalised expectations
    for every atom of ``F_n``, ``n <= nmax``.

    A row passes when the values increase with ``p``, stay at or below the limit
    ``E[1_Lambda M_n]`` (strictly below when the limit is positive) and the gap
    at the last horizon is at most ``gap_factor`` times the gap at the first.
    """
    weights = default_weights() if weights is None else weights
    cols = ("family", "weight", "event", *(f"gap_{p}" for p in ps), "limit", "dominated", "monotone",
            "gap_ratio", "contracted", "ok")
    res = CheckResult("ratio-convergence", cols,
                      params={"nmax": nmax, "ps": list(ps), "gap_factor": gap_factor})
    for tag in tags:
        for w in weights:
            for n in range(nmax + 1):
                for steps in atoms(n):
                    t = ratio_table(tag, w, steps, ps)
                    vals = [r[1] for r in t.rows]
                    gaps = [r[4] for r in t.rows]
                    limit = t.rows[0][3]
                    dominated = all(g > 0 for g in gaps) if limit > 0 else all(g == 0 for g in gaps)
                    monotone = all(u <= v for u, v in zip(vals, vals[1:]))
                    gap_ratio = gaps[-1] / gaps[0] if gaps[0] else Fraction(0)
                    contracted = gap_ratio <= gap_factor
                    res.rows.append((tag, str(w), t.params["event"], *gaps, limit, dominated, monotone,
                                     gap_ratio, contracted, dominated and monotone and contracted))
    k = cols.index("gap_ratio")
    res.summary["worst_gap_ratio"] = max((r[k] for r in res.rows), default=Fraction(0))
    res.summary["dominated"] = all(r[cols.index("dominated")] for r in res.rows)
    res.summary["monotone"] = all(r[cols.index("monotone")] for r in res.rows)
    return res


def next_zero_discrepancy(weights=None, nmax: int = 4, ps=(16, 24)) -> CheckResult:
    """``|ratio_d(p) - ratio_S(p)|`` between the next-zero and plain maximum
    penalisations, per atom; a row passes when it does not grow from the first
    horizon to the last."""
    weights = default_weights() if weights is None else weights
    cols = ("weight", "event", *(f"diff_{p}" for p in ps), "ok")
    res = CheckResult("next-zero-discrepancy", cols, params={"nmax": nmax, "ps": list(ps)})
    for w in weights:
        Gd, Gs = PenaltyFunctional("next-zero-max", w), PenaltyFunctional("max", w)
        for n in range(nmax + 1):
            for steps in atoms(n):
                ev = _event(steps)
                d = [abs(penalized_ratio(n, ev, Gd, p) - penalized_ratio(n, ev, Gs, p)) for p in ps]
                res.rows.append((str(w), ev.label, *d, d[-1] <= d[0]))
    return res
