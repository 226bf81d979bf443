"""Exact ground truth for walk functionals.

Two independent routes are provided and cross-checked in the test-suite:

* brute force over all ``2**p`` step sequences (:func:`enumerate_expect`), and
* dynamic programming over reduced :class:`~penalwalk.walk.WalkState` values
  (:func:`dp_joint_law`, :func:`penalized_expectation`).

Laws at random times (returns to zero, first passages) are computed by exact
linear solves of the harmonic equations on finite strips, never from the closed
forms in :mod:`penalwalk.laws`.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .walk import (
    STEPS,
    Path,
    PenaltyWeight,
    WalkState,
    reduce_state,
    required_fields,
    step_state,
)

ENUMERATION_CAP = 24
DEFAULT_TRUNCATION = 200

HALF = Fraction(1, 2)


class DegenerateDenominatorError(ZeroDivisionError):
    """Raised when ``E[G_p] = 0`` so the penalised ratio is undefined."""


@dataclass
class ExactDist:
    """Finite law with exact rational masses.

    ``residual`` holds mass that was truncated or killed; ``mass + residual``
    always equals ``total`` (1 for a full law).
    """

    entries: dict[Hashable, Fraction]
    residual: Fraction = Fraction(0)
    total: Fraction = Fraction(1)

    def __post_init__(self):
        for k, v in self.entries.items():
            if v < 0:
                raise ValueError(f"negative mass at {k!r}")
        if self.mass + self.residual != self.total:
            raise ValueError(
                f"mass {self.mass} + residual {self.residual} != total {self.total}"
            )

    @property
    def mass(self) -> Fraction:
        return sum(self.entries.values(), Fraction(0))

    def __getitem__(self, outcome) -> Fraction:
        return self.entries.get(outcome, Fraction(0))

    def __iter__(self):
        return iter(sorted(self.entries, key=_sort_key))

    def items(self):
        return [(k, self.entries[k]) for k in self]

    def expect(self, f: Callable) -> Fraction:
        return sum((p * f(k) for k, p in self.entries.items()), Fraction(0))

    def marginal(self, index: int) -> "ExactDist":
        out: dict = defaultdict(Fraction)
        for k, p in self.entries.items():
            out[k[index]] += p
        return ExactDist(dict(out), self.residual, self.total)

    def to_json(self) -> str:
        doc = {
            "entries": [[_jsonable(k), f"{p.numerator}/{p.denominator}"] for k, p in self.items()],
            "residual": f"{self.residual.numerator}/{self.residual.denominator}",
            "total": f"{self.total.numerator}/{self.total.denominator}",
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExactDist":
        doc = json.loads(text)
        entries = {_hashable(k): Fraction(p) for k, p in doc["entries"]}
        return cls(entries, Fraction(doc["residual"]), Fraction(doc["total"]))

    def to_csv(self, names: Sequence[str] | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        first = next(iter(self), None)
        width = len(first) if isinstance(first, tuple) else 1
        names = list(names) if names else [f"outcome{j}" for j in range(width)]
        w.writerow([*names, "numerator", "denominator"])
        for k, p in self.items():
            key = list(k) if isinstance(k, tuple) else [k]
            w.writerow([*key, p.numerator, p.denominator])
        return buf.getvalue()


def _sort_key(k):
    if isinstance(k, tuple):
        return tuple((v is None, v if v is not None else 0) for v in k)
    return (k is None, k if k is not None else 0)


def _jsonable(k):
    return list(k) if isinstance(k, tuple) else k


def _hashable(k):
    return tuple(k) if isinstance(k, list) else k


# brute force


def enumerate_paths(p: int, start: int = 0) -> Iterable[Path]:
    for steps in itertools.product(STEPS, repeat=p):
        yield Path(start, steps)


def enumerate_expect(
    p: int, start: int, f: Callable[[Path], object], cap: int = ENUMERATION_CAP
) -> Fraction:
    """``E_start[f(X_0..X_p)]`` by summing over every step sequence."""
    if p < 0:
        raise ValueError("horizon must be >= 0")
    if p > cap:
        raise ValueError(f"horizon {p} exceeds enumeration cap {cap}")
    total = sum((Fraction(f(path)) for path in enumerate_paths(p, start)), Fraction(0))
    return total / 2**p


def enumerate_law(p: int, start: int, stat: Callable[[Path], Hashable]) -> ExactDist:
    counts: dict = defaultdict(int)
    for path in enumerate_paths(p, start):
        counts[stat(path)] += 1
    return ExactDist({k: Fraction(c, 2**p) for k, c in counts.items()})


# state dynamic programming


def dp_step(
    layer: Mapping[WalkState, Fraction],
    keep: frozenset[str],
    alive: Callable[[WalkState], bool] | None = None,
) -> tuple[dict[WalkState, Fraction], Fraction]:
    """One step of the state DP; returns the next layer and the killed mass."""
    nxt: dict[WalkState, Fraction] = defaultdict(Fraction)
    killed = Fraction(0)
    for state, mass in layer.items():
        half = mass * HALF
        for e in STEPS:
            new = reduce_state(step_state(state, e), keep)
            if alive is not None and not alive(new):
                killed += half
            else:
                nxt[new] += half
    return nxt, killed


def dp_layers(
    p: int,
    start: int = 0,
    keep: Iterable[str] = ("x",),
    alive: Callable[[WalkState], bool] | None = None,
    initial: Mapping[WalkState, Fraction] | None = None,
):
    """Yield ``(n, layer, killed_so_far)`` for ``n = 0..p``."""
    keep = required_fields(keep)
    if initial is None:
        layer = {reduce_state(WalkState.initial(start), keep): Fraction(1)}
    else:
        layer = {}
        for s, m in initial.items():
            key = reduce_state(s, keep)
            layer[key] = layer.get(key, Fraction(0)) + m
    killed = Fraction(0)
    n0 = next(iter(layer)).n if layer else 0
    yield n0, layer, killed
    for n in range(n0 + 1, p + 1):
        layer, k = dp_step(layer, keep, alive)
        killed += k
        yield n, layer, killed


def dp_final(p, start=0, keep=("x",), alive=None, initial=None):
    for _, layer, killed in dp_layers(p, start, keep, alive, initial):
        pass
    return layer, killed


def dp_joint_law(p: int, start: int, projection: Sequence[str] | str) -> ExactDist:
    """Exact law of the projected statistics at time ``p``.

    ``projection`` names fields of :class:`WalkState` (or ``"r"``); a single
    name yields scalar outcomes, several names yield tuples.
    """
    names = (projection,) if isinstance(projection, str) else tuple(projection)
    if not names:
        raise ValueError("empty projection")
    layer, _ = dp_final(p, start, names)
    out: dict = defaultdict(Fraction)
    for state, mass in layer.items():
        key = tuple(state.get(nm) for nm in names)
        out[key[0] if len(names) == 1 else key] += mass
    return ExactDist(dict(out))


@lru_cache(maxsize=None)
def prob_max_zero(m: int) -> Fraction:
    """``P(S_m = 0)`` by state DP (independent of the binomial closed form)."""
    layer, _ = dp_final(m, 0, ("s",))
    return sum((p for st, p in layer.items() if st.s == 0), Fraction(0))


# absorbing chains


def solve_tridiagonal(lower, diag, upper, rhs) -> list[Fraction]:
    """Exact Thomas algorithm; ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = len(diag)
    c = [Fraction(0)] * n
    d = [Fraction(0)] * n
    for j in range(n):
        denom = diag[j] - (lower[j] * c[j - 1] if j else 0)
        if denom == 0:
            raise ZeroDivisionError("singular tridiagonal system")
        c[j] = upper[j] / denom if j < n - 1 else Fraction(0)
        d[j] = (rhs[j] - (lower[j] * d[j - 1] if j else 0)) / denom
    out = [Fraction(0)] * n
    for j in reversed(range(n)):
        out[j] = d[j] - (c[j] * out[j + 1] if j < n - 1 else 0)
    return out


@lru_cache(maxsize=None)
def _hit_top_before_zero(k: int) -> tuple[Fraction, ...]:
    """``P_a(T_k < T_0)`` for ``a = 0..k`` from the harmonic system on ``{0..k}``."""
    if k == 1:
        return (Fraction(0), Fraction(1))
    m = k - 1  # unknowns h(1..k-1)
    lower = [-HALF] * m
    diag = [Fraction(1)] * m
    upper = [-HALF] * m
    rhs = [Fraction(0)] * m
    rhs[-1] = HALF  # h(k) = 1
    inner = solve_tridiagonal(lower, diag, upper, rhs)
    return (Fraction(0), *inner, Fraction(1))


def ruin_probability(a: int, k: int) -> Fraction:
    """``P_a(T_k < T_0)`` for ``0 <= a <= k``, ``k >= 1``, by exact linear solve."""
    if k < 1 or not 0 <= a <= k:
        raise ValueError("need 0 <= a <= k and k >= 1")
    return _hit_top_before_zero(k)[a]


def excursion_max_law(x: int, kmax: int) -> ExactDist:
    """Law of ``S_{T_0}`` under ``P_x`` (``x >= 1``) on ``x..kmax``, tail as residual."""
    if x < 1:
        raise ValueError("start must be >= 1")
    entries = {}
    for k in range(x, kmax + 1):
        entries[k] = ruin_probability(x, k) - ruin_probability(x, k + 1)
    return ExactDist(entries, ruin_probability(x, kmax + 1))


def return_max_law(a: int, kmax: int = DEFAULT_TRUNCATION, bilateral: bool = False) -> ExactDist:
    """Law of ``S_{tau_a}`` (or ``S*_{tau_a}``) where ``tau_a`` is the ``a``-th visit to 0.

    Time 0 counts as the first visit, so ``a - 1`` excursions are completed.
    Excursion heights come from :func:`excursion_max_law`; masses above
    ``kmax`` are reported as residual.
    """
    if a < 1:
        raise ValueError("a must be >= 1")
    heights = excursion_max_law(1, kmax)
    beyond = "beyond"
    law: dict = {0: Fraction(1)}
    for _ in range(a - 1):
        nxt: dict = defaultdict(Fraction)
        for m, pm in law.items():
            if m == beyond:
                nxt[beyond] += pm
                continue
            if not bilateral:
                nxt[m] += pm * HALF
            w = pm if bilateral else pm * HALF
            for h, ph in heights.entries.items():
                nxt[max(m, h)] += w * ph
            nxt[beyond] += w * heights.residual
        law = nxt
    residual = law.pop(beyond, Fraction(0))
    return ExactDist({k: v for k, v in law.items() if v}, residual)


def zeros_at_hit_law(c: int, mmax: int = DEFAULT_TRUNCATION) -> ExactDist:
    """Law of ``gamma_{T_c}``, the number of visits to 0 before first reaching ``c >= 1``."""
    if c < 1:
        raise ValueError("level must be >= 1")
    escape = HALF * ruin_probability(1, c)
    entries = {}
    survive = Fraction(1)
    for m in range(1, mmax + 1):
        entries[m] = survive * escape
        survive *= 1 - escape
    return ExactDist(entries, survive)


def premax_at_hit_law(p: int, bilateral: bool = False) -> ExactDist:
    """Law of ``S_{g_{T_p}}``: the maximum before the last zero preceding ``T_p``.

    With ``bilateral`` the walk is ``|X|``: the law of ``S*_{g_{T*_p}}``.
    Absorbing chain on the running maximum of completed excursions, solved
    backwards from ``p - 1``.
    """
    if p < 1:
        raise ValueError("level must be >= 1")
    heights = excursion_max_law(1, p - 1)
    # an excursion has either sign; one-sided, only positive ones count
    c = Fraction(1) if bilateral else HALF
    absorb = c * heights.residual
    outcome: dict[int, dict[int, Fraction]] = {}
    for m in reversed(range(p)):
        stay = (1 - c) + c * sum((v for h, v in heights.entries.items() if h <= m), Fraction(0))
        law: dict[int, Fraction] = defaultdict(Fraction)
        law[m] += absorb
        for h, v in heights.entries.items():
            if h > m:
                for k, w in outcome[h].items():
                    law[k] += c * v * w
        outcome[m] = {k: w / (1 - stay) for k, w in law.items()}
    return ExactDist(outcome[0])


def exit_time_law(lo: int, hi: int, mmax: int) -> ExactDist:
    """Law of ``T_lo ^ T_hi`` from 0 (``lo < 0 < hi``) on ``1..mmax``; survival is residual."""
    if not lo < 0 < hi:
        raise ValueError("need lo < 0 < hi")
    layer = {0: Fraction(1)}
    entries = {}
    for m in range(1, mmax + 1):
        nxt: dict[int, Fraction] = defaultdict(Fraction)
        out = Fraction(0)
        for x, w in layer.items():
            for y in (x - 1, x + 1):
                if y in (lo, hi):
                    out += w * HALF
                else:
                    nxt[y] += w * HALF
        entries[m] = out
        layer = nxt
    return ExactDist({k: v for k, v in entries.items() if v}, sum(layer.values(), Fraction(0)))


def first_passage_time_law(level: int, mmax: int) -> ExactDist:
    """Law of ``T_level`` (``level >= 1``) from 0 on ``1..mmax``; survival is residual."""
    if level < 1:
        raise ValueError("level must be >= 1")
    layer = {0: Fraction(1)}
    entries = {}
    for m in range(1, mmax + 1):
        nxt: dict[int, Fraction] = defaultdict(Fraction)
        out = Fraction(0)
        for x, w in layer.items():
            if x + 1 == level:
                out += w * HALF
            else:
                nxt[x + 1] += w * HALF
            nxt[x - 1] += w * HALF
        entries[m] = out
        layer = nxt
    return ExactDist({k: v for k, v in entries.items() if v}, sum(layer.values(), Fraction(0)))


ABSORBED_LAWS = {
    "return-max": lambda a, kmax=DEFAULT_TRUNCATION: return_max_law(a, kmax),
    "return-bimax": lambda a, kmax=DEFAULT_TRUNCATION: return_max_law(a, kmax, bilateral=True),
    "zeros-at-hit": zeros_at_hit_law,
    "premax-at-hit": premax_at_hit_law,
    "bipremax-at-hit": lambda p: premax_at_hit_law(p, bilateral=True),
    "excursion-max": excursion_max_law,
    "exit-time": exit_time_law,
    "first-passage-time": first_passage_time_law,
}


def absorbed_law(kind: str, **params) -> ExactDist:
    """Dispatch to one of the absorbed-walk laws by name (see :data:`ABSORBED_LAWS`)."""
    try:
        fn = ABSORBED_LAWS[kind]
    except KeyError:
        raise ValueError(f"unknown absorbed law {kind!r}") from None
    return fn(**params)


# conditional laws at the next zero


def _psi_terms(psi, support_max: int | None):
    if isinstance(psi, PenaltyWeight):
        if not psi.is_finite:
            raise ValueError("the oracle needs a finitely supported weight")
        return psi.phi, psi.support_max
    if support_max is None:
        raise ValueError("a callable psi needs support_max")
    return psi, support_max


def next_zero_expectation(psi, s: int, x: int, support_max: int | None = None) -> Fraction:
    """``E[psi(S_{d_p}) | S_p = s, X_p = x]`` via exact ruin probabilities.

    ``psi`` is a finitely supported :class:`PenaltyWeight` or a callable that
    vanishes above ``support_max``.
    """
    f, top = _psi_terms(psi, support_max)
    if s < 0 or x > s:
        raise ValueError("inconsistent state: need s >= 0 and x <= s")
    if x <= 0:
        return Fraction(f(s))
    total = Fraction(0)
    # P_x(S_{T_0} = k) for k >= x; psi(max(s, k)) vanishes once max(s, k) > top
    hi = max(s, top)
    below_s = 1 - ruin_probability(x, s) if s > x else Fraction(0)
    total += below_s * f(s)
    for k in range(max(x, s), hi + 1):
        pk = ruin_probability(x, k) - ruin_probability(x, k + 1)
        total += pk * f(k)
    return total


def bilateral_next_zero_expectation(
    psi, s_star: int, x: int, support_max: int | None = None
) -> Fraction:
    """``E[psi(S*_{d_a}) | S*_a = s_star, X_a = x]`` via exact ruin probabilities."""
    f, top = _psi_terms(psi, support_max)
    if abs(x) > s_star:
        raise ValueError("inconsistent state: need |x| <= s_star")
    if x == 0:
        return Fraction(f(s_star))
    return next_zero_expectation(f, s_star, abs(x), support_max=top)


# penalisation functionals


@dataclass(frozen=True)
class PenaltyFunctional:
    """One of the penalising functionals ``G_p``.

    Tags: ``max`` (phi(S_p)), ``last-zero-max`` (phi(S_{g_p})), ``next-zero-max``
    (phi(S_{d_p}), reduced to ``E[. | F_p]``), ``bilateral-last-zero``
    (phi(S*_{g_p})), ``bilateral-indicator`` (1{S*_p < a}) and ``corridor``
    (1{S_p < a, I_p > -b}).
    """

    tag: str
    weight: PenaltyWeight | None = None
    a: int | None = None
    b: int | None = None

    WEIGHTED = ("max", "last-zero-max", "next-zero-max", "bilateral-last-zero")
    INDICATORS = ("bilateral-indicator", "corridor")

    def __post_init__(self):
        if self.tag in self.WEIGHTED:
            if self.weight is None:
                raise ValueError(f"{self.tag} needs a weight")
        elif self.tag in self.INDICATORS:
            if self.a is None or self.a < 1:
                raise ValueError("indicator barriers must be >= 1")
            if self.tag == "corridor" and (self.b is None or self.b < 1):
                raise ValueError("indicator barriers must be >= 1")
        else:
            raise ValueError(f"unknown functional {self.tag!r}")

    @property
    def fields(self) -> tuple[str, ...]:
        return {
            "max": ("s",),
            "last-zero-max": ("s_g",),
            "next-zero-max": ("s", "x"),
            "bilateral-last-zero": ("s_star_g",),
            "bilateral-indicator": ("s_star",),
            "corridor": ("s", "i"),
        }[self.tag]

    def alive(self, state: WalkState) -> bool:
        """False once an indicator functional is certainly 0 (used for pruning)."""
        if self.tag == "bilateral-indicator":
            return state.s_star < self.a
        if self.tag == "corridor":
            return state.s < self.a and state.i > -self.b
        return True

    def value(self, state: WalkState) -> Fraction:
        t, w = self.tag, self.weight
        if t == "max":
            return w.phi(state.s)
        if t == "last-zero-max":
            return w.phi(state.s_g) if state.s_g is not None else Fraction(0)
        if t == "next-zero-max":
            return next_zero_expectation(w, state.s, state.x)
        if t == "bilateral-last-zero":
            return w.phi(state.s_star_g) if state.s_star_g is not None else Fraction(0)
        return Fraction(int(self.alive(state)))


@dataclass(frozen=True)
class EventSpec:
    """An ``F_n``-measurable event: a path prefix or a predicate on the state at ``n``."""

    prefix: tuple[int, ...] | None = None
    predicate: Callable[[WalkState], bool] | None = field(default=None, compare=False)
    label: str = "all"

    @classmethod
    def all(cls) -> "EventSpec":
        return cls()

    @classmethod
    def path(cls, steps: Sequence[int]) -> "EventSpec":
        steps = tuple(steps)
        label = "path:" + "".join("+" if e > 0 else "-" for e in steps)
        return cls(prefix=Path(0, steps).steps, label=label)

    @classmethod
    def where(cls, predicate: Callable[[WalkState], bool], label: str = "predicate") -> "EventSpec":
        return cls(predicate=predicate, label=label)

    def initial_layer(self, n: int, keep: Iterable[str]) -> dict[WalkState, Fraction]:
        """Sub-probability law at time ``n`` of the state restricted to the event."""
        if self.prefix is not None:
            if len(self.prefix) != n:
                raise ValueError(f"path event has length {len(self.prefix)}, expected {n}")
            state = Path(0, self.prefix).final_state()
            return {state: Fraction(1, 2**n)}
        layer, _ = dp_final(n, 0, set(keep) | set(_ALL_FIELDS))
        if self.predicate is None:
            return dict(layer)
        return {s: m for s, m in layer.items() if self.predicate(s)}


_ALL_FIELDS = ("x", "s", "i", "s_star", "s_g", "s_star_g", "gamma", "g")


def penalized_expectation(n: int, event: EventSpec, G: PenaltyFunctional, p: int) -> Fraction:
    """``E_0[1_Lambda G_p]`` for ``Lambda`` in ``F_n``, by state DP from time ``n`` to ``p``."""
    if not 0 <= n <= p:
        raise ValueError("need 0 <= n <= p")
    keep = required_fields(G.fields)
    initial = {s: m for s, m in event.initial_layer(n, keep).items() if G.alive(s)}
    if not initial:
        return Fraction(0)
    layer, _ = dp_final(p, keep=keep, alive=G.alive, initial=initial)
    return sum((m * G.value(s) for s, m in layer.items()), Fraction(0))


@lru_cache(maxsize=256)
def _total_mass(G: PenaltyFunctional, p: int) -> Fraction:
    return penalized_expectation(0, EventSpec.all(), G, p)


def penalized_ratio(n: int, event: EventSpec, G: PenaltyFunctional, p: int) -> Fraction:
    """``E_0[1_Lambda G_p] / E_0[G_p]``."""
    denom = _total_mass(G, p)
    if denom == 0:
        raise DegenerateDenominatorError(f"E[G_p] = 0 for {G.tag} at p = {p}")
    return penalized_expectation(n, event, G, p) / denom


# Normalisers making E[1_Lambda G_p] / (c P(S_{p-n} = 0)) tend to E[1_Lambda M_n].
NORMALIZER = {"max": 1, "next-zero-max": 1, "last-zero-max": 2}


def normalized_expectation(n: int, event: EventSpec, G: PenaltyFunctional, p: int) -> Fraction:
    """``E_0[1_Lambda G_p] / (c P(S_{p-n} = 0))`` with ``c`` from :data:`NORMALIZER`."""
    c = NORMALIZER[G.tag]
    return penalized_expectation(n, event, G, p) / (c * prob_max_zero(p - n))


# float dynamic programming for large horizons


def corridor_survival_log(n: int, a: int, b: int) -> float:
    """``log P(S_n < a, I_n > -b)`` by a renormalised float DP on the corridor."""
    if a < 1 or b < 1:
        raise ValueError("barriers must be >= 1")
    width = a + b - 1  # sites -b+1 .. a-1
    v = np.zeros(width)
    v[b - 1] = 1.0
    log_scale = 0.0
    for _ in range(n):
        nxt = np.zeros(width)
        nxt[1:] += 0.5 * v[:-1]
        nxt[:-1] += 0.5 * v[1:]
        total = nxt.sum()
        if total == 0.0:
            return -math.inf
        log_scale += math.log(total)
        v = nxt / total
    return log_scale


def bilateral_gzero_below(alpha: int, p: int, start: int = 0) -> float:
    """``P_start(S*_{g_p} < alpha)`` (i.e. ``g_p <= T*_alpha``) by float DP.

    Phase 0: ``|X|`` has stayed below ``alpha``.  Phase 1: ``alpha`` was reached
    and 0 not revisited.  A return to 0 in phase 1 kills the path.
    """
    if alpha < 1 or abs(start) > alpha:
        raise ValueError("need alpha >= 1 and |start| <= alpha")
    half = p + abs(start) + 2
    sites = np.arange(-half, half + 1)
    zero = half
    reached = np.abs(sites) >= alpha
    ph0 = np.zeros(sites.size)
    ph1 = np.zeros(sites.size)
    (ph1 if abs(start) >= alpha else ph0)[zero + start] = 1.0
    for _ in range(p):
        n0 = np.zeros_like(ph0)
        n1 = np.zeros_like(ph1)
        n0[1:] += 0.5 * ph0[:-1]
        n0[:-1] += 0.5 * ph0[1:]
        n1[1:] += 0.5 * ph1[:-1]
        n1[:-1] += 0.5 * ph1[1:]
        n1 += np.where(reached, n0, 0.0)
        n0 = np.where(reached, 0.0, n0)
        n1[zero] = 0.0
        ph0, ph1 = n0, n1
    return float(ph0.sum() + ph1.sum())


def bilateral_gzero_at_most(alpha: int, p: int, start: int = 0) -> float:
    """``P_start(S*_{g_p} <= alpha)``."""
    return bilateral_gzero_below(alpha + 1, p, start)
