"""The penalisation martingales, their one-step check and the induced kernels.

Weighted families are evaluated in exact rational arithmetic; the corridor
and barrier families are trigonometric and use floats.

Families
--------
one-sided-max
    ``phi(S) (S - X) + Phi(S)``
next-zero-max
    same process as ``one-sided-max``
last-zero-max
    ``(1/2) phi(S_g) |X| + phi(S) (S - X+) + Phi(S)``
bilateral-last-zero
    ``phi(S*_g) |X| + phi(S*) (S* - |X|) + Phi(S*)``
corridor(a, b)
    ``1{S < a, I > -b} cos(pi/(a+b))^(-n) sin(pi (a - X)/(a+b)) / sin(pi a/(a+b))``
barrier(a)
    ``corridor(a, a)``, i.e. penalisation by ``1{S* < a}``
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable

import numpy as np

from .walk import STEPS, PenaltyWeight, WalkState, reduce_state, required_fields, step_state

WEIGHTED = ("one-sided-max", "next-zero-max", "last-zero-max", "bilateral-last-zero")
TRIG = ("corridor", "barrier")
TRIG_TOL = 1e-12

# Statistics each family reads; the verification sweep runs on their closure.
FAMILY_FIELDS = {
    "one-sided-max": ("x", "s"),
    "next-zero-max": ("x", "s"),
    "last-zero-max": ("x", "s", "s_g"),
    "bilateral-last-zero": ("x", "s_star", "s_star_g"),
    "corridor": ("x", "s", "i"),
    "barrier": ("x", "s", "i"),
}


class UndefinedStateError(ValueError):
    """The family is not defined at this state (no zero visited yet)."""


class AbsorbedKernelError(ValueError):
    """The h-transform kernel is undefined where the martingale vanishes."""


@dataclass(frozen=True)
class MartingaleFamily:
    tag: str
    weight: PenaltyWeight | None = None
    a: int | None = None
    b: int | None = None

    def __post_init__(self):
        if self.tag in WEIGHTED:
            if self.weight is None:
                raise ValueError(f"{self.tag} needs a weight")
        elif self.tag == "corridor":
            if not (self.a and self.b and self.a >= 1 and self.b >= 1):
                raise ValueError("corridor barriers must be >= 1")
        elif self.tag == "barrier":
            if not (self.a and self.a >= 1):
                raise ValueError("barrier must be >= 1")
            object.__setattr__(self, "b", self.a)
        else:
            raise ValueError(f"unknown family {self.tag!r}")

    @classmethod
    def one_sided_max(cls, w):
        return cls("one-sided-max", w)

    @classmethod
    def next_zero_max(cls, w):
        return cls("next-zero-max", w)

    @classmethod
    def last_zero_max(cls, w):
        return cls("last-zero-max", w)

    @classmethod
    def bilateral_last_zero(cls, w):
        return cls("bilateral-last-zero", w)

    @classmethod
    def corridor(cls, a, b):
        return cls("corridor", a=a, b=b)

    @classmethod
    def barrier(cls, a):
        return cls("barrier", a=a)

    @property
    def is_exact(self) -> bool:
        return self.tag in WEIGHTED

    @property
    def fields(self) -> tuple[str, ...]:
        return FAMILY_FIELDS[self.tag]

    def __str__(self) -> str:
        if self.is_exact:
            return f"{self.tag}[{self.weight}]"
        if self.tag == "barrier":
            return f"barrier({self.a})"
        return f"corridor({self.a},{self.b})"


def corridor_exited(family: MartingaleFamily, state: WalkState) -> bool:
    """Whether the path has left ``(-b, a)``; read off the running extrema."""
    return state.s >= family.a or state.i <= -family.b


def evaluate(family: MartingaleFamily, state: WalkState):
    """``M_n`` at ``state`` (exact for weighted families, float for trig ones)."""
    tag, w = family.tag, family.weight
    if tag in ("one-sided-max", "next-zero-max"):
        return w.phi(state.s) * (state.s - state.x) + w.tail(state.s)
    if tag == "last-zero-max":
        if state.s_g is None:
            raise UndefinedStateError("last-zero maximum undefined before the first zero")
        return (
            w.phi(state.s_g) * abs(state.x) / 2
            + w.phi(state.s) * (state.s - max(state.x, 0))
            + w.tail(state.s)
        )
    if tag == "bilateral-last-zero":
        if state.s_star_g is None:
            raise UndefinedStateError("last-zero maximum undefined before the first zero")
        ax = abs(state.x)
        return w.phi(state.s_star_g) * ax + w.phi(state.s_star) * (state.s_star - ax) + w.tail(state.s_star)
    # trigonometric families
    if corridor_exited(family, state):
        return 0.0
    c = math.cos(math.pi / (family.a + family.b))
    return c ** (-state.n) * _trig_ratio(family, state.x)


def _trig_ratio(family: MartingaleFamily, x: int) -> float:
    width = family.a + family.b
    return math.sin(math.pi * (family.a - x) / width) / math.sin(math.pi * family.a / width)


def one_step_mean(family: MartingaleFamily, state: WalkState):
    """``E[M_{n+1} | state] = (M(up) + M(down)) / 2``."""
    up = evaluate(family, step_state(state, 1))
    down = evaluate(family, step_state(state, -1))
    return (up + down) / 2


def q_kernel(family: MartingaleFamily, state: WalkState):
    """``(p_up, p_down)`` of the h-transformed walk: ``p_e = M(state + e) / (2 M(state))``."""
    m = evaluate(family, state)
    if m <= 0:
        raise AbsorbedKernelError(f"martingale vanishes at {state}")
    up = evaluate(family, step_state(state, 1))
    down = evaluate(family, step_state(state, -1))
    return up / (2 * m), down / (2 * m)


def positive_side_probability(family: MartingaleFamily, state: WalkState) -> Fraction:
    """``Q(the walk ends on the positive side after its last zero | F_n)``.

    Obtained by optional stopping at ``T_p`` (``T*_p``) with ``p -> oo``::

        last-zero-max:        [phi(S_g) X+ / 2 + (phi(S)(S - X+) + Phi(S)) / 2] / M_n
        bilateral-last-zero:  [phi(S*_g) X+ + (phi(S*)(S* - |X|) + Phi(S*)) / 2] / M*_n

    A Q-martingale with mean ``1/2``; the simulators use it to remove the
    truncation bias of the sign of ``X_H``.
    """
    w = family.weight
    xp = max(state.x, 0)
    if family.tag == "last-zero-max":
        num = w.phi(state.s_g) * xp / 2 + (w.phi(state.s) * (state.s - xp) + w.tail(state.s)) / 2
    elif family.tag == "bilateral-last-zero":
        num = w.phi(state.s_star_g) * xp + (
            w.phi(state.s_star) * (state.s_star - abs(state.x)) + w.tail(state.s_star)) / 2
    else:
        raise ValueError(f"no sign split for {family.tag}")
    m = evaluate(family, state)
    if m <= 0:
        raise AbsorbedKernelError(f"martingale vanishes at {state}")
    return num / m


STOPPING_RULES = {
    ("last-zero-max", "T_p"),
    ("last-zero-max", "d_a"),
    ("bilateral-last-zero", "d_a"),
    ("bilateral-last-zero", "T*_p"),
}


def stopped_value(family: MartingaleFamily, rule: str, *, k: int | None = None, p: int | None = None,
                  m: int | None = None):
    """Closed form of ``M`` at a stopping time.

    ``T_p`` (last-zero family): ``(1/2) phi(k) p + Phi(p)`` with ``k = S_{g_{T_p}}``.
    ``d_a``: ``phi(m) m + Phi(m)`` with ``m`` the (bilateral) maximum at the next zero.
    ``T*_p`` (bilateral family): ``phi(k) p + Phi(p)`` with ``k = S*_{g_{T*_p}}``.
    """
    if (family.tag, rule) not in STOPPING_RULES:
        raise ValueError(f"no stopped form for {family.tag} at {rule}")
    w = family.weight
    if rule == "d_a":
        return w.phi(m) * m + w.tail(m)
    if rule == "T_p":
        return w.phi(k) * p / 2 + w.tail(p)
    return w.phi(k) * p + w.tail(p)


# verification


def _canonical(family: MartingaleFamily, state: WalkState, keep) -> WalkState:
    state = reduce_state(state, keep)
    # weighted martingales do not read the time index
    return replace(state, n=0) if family.is_exact else state


def reachable_states(family: MartingaleFamily, depth: int, start: int = 0) -> list[WalkState]:
    """Distinct (reduced) states reachable from ``start`` in at most ``depth`` steps."""
    keep = required_fields(family.fields)
    seen: set[WalkState] = set()
    layer = {reduce_state(WalkState.initial(start), keep)}
    for n in range(depth + 1):
        seen.update(_canonical(family, s, keep) for s in layer)
        if n == depth:
            break
        nxt = set()
        for s in layer:
            if not family.is_exact and corridor_exited(family, s):
                continue
            for e in STEPS:
                nxt.add(reduce_state(step_state(s, e), keep))
        if family.is_exact:
            # collapse states that differ only in time
            nxt = {replace(s, n=0) for s in nxt} - seen
        layer = nxt
    return sorted(seen, key=_state_key)


def _state_key(s: WalkState):
    return tuple(-1 if v is None else v for v in (s.n, s.x, s.s, s.i, s.s_star, s.s_g or 0, s.s_star_g or 0))


@dataclass
class VerificationReport:
    family: str
    depth: int
    states_checked: int
    worst_diff: float | Fraction
    min_value: float | Fraction
    kernel_ok: bool
    failures: list[tuple] = field(default_factory=list)
    tolerance: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures and self.min_value >= 0 and self.kernel_ok

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["family", "n", "x", "s", "i", "s_star", "s_g", "s_star_g", "lhs", "rhs", "diff", "verdict"])
        for row in self.failures:
            w.writerow([self.family, *row, "fail"])
        w.writerow([self.family, "summary", "", "", "", "", "", "", "", "", _fmt(self.worst_diff),
                    "pass" if self.passed else "fail"])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    return repr(float(v))


def verify(family: MartingaleFamily, depth: int = 25, tol: float = TRIG_TOL) -> VerificationReport:
    """Check ``one_step_mean == evaluate`` on every state reachable within ``depth`` steps.

    Exact equality for weighted families; ``|diff| <= tol`` for trig families.
    Also records the minimum value and whether the kernel sums to one wherever
    the martingale is positive.
    """
    exact = family.is_exact
    worst = Fraction(0) if exact else 0.0
    lowest = None
    kernel_ok = True
    failures = []
    states = [s for s in reachable_states(family, depth) if s.n < depth or exact]
    for st in states:
        lhs = evaluate(family, st)
        rhs = one_step_mean(family, st)
        diff = abs(lhs - rhs)
        if not exact and st.n > 0:
            # compare on the scale of the value, which grows like cos^-n
            diff = diff / max(1.0, abs(lhs))
        worst = max(worst, diff)
        lowest = lhs if lowest is None else min(lowest, lhs)
        ok = diff == 0 if exact else diff <= tol
        if not ok:
            failures.append((st.n, st.x, st.s, st.i, st.s_star, st.s_g, st.s_star_g, _fmt(lhs), _fmt(rhs), _fmt(diff)))
        if lhs > 0:
            up, down = q_kernel(family, st)
            total = up + down
            if exact:
                kernel_ok &= total == 1 and up >= 0 and down >= 0
            else:
                kernel_ok &= abs(total - 1) <= tol and up >= -tol and down >= -tol
    return VerificationReport(str(family), depth, len(states), worst, lowest, kernel_ok, failures,
                              0.0 if exact else tol)


def expected_value(family: MartingaleFamily, n: int, layer) -> Fraction | float:
    """``E[1_Lambda M_n]`` given the sub-probability law ``layer`` of the state at time ``n``."""
    return sum((mass * evaluate(family, st) for st, mass in layer.items()),
               Fraction(0) if family.is_exact else 0.0)


# vectorised float evaluation for the simulators


class FloatEvaluator:
    """Vectorised float evaluation of a weighted family on arrays of statistics."""

    def __init__(self, family: MartingaleFamily):
        if not family.is_exact:
            raise ValueError("FloatEvaluator handles weighted families only")
        self.family = family
        w = family.weight
        if w.is_finite:
            size = w.support_max + 2
            self._phi, self._tail = w.float_tables(size)
            self._size = size
            self._q = None
        else:
            self._q = float(w.q)

    def phi(self, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k)
        if self._q is not None:
            return (1 - self._q) * self._q ** k.astype(float)
        return self._phi[np.minimum(k, self._size - 1)]

    def tail(self, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k)
        if self._q is not None:
            return self._q ** k.astype(float)
        return self._tail[np.minimum(k, self._size - 1)]

    def __call__(self, x, s=None, s_g=None, s_star=None, s_star_g=None) -> np.ndarray:
        tag = self.family.tag
        x = np.asarray(x)
        ax = np.abs(x)
        if tag in ("one-sided-max", "next-zero-max"):
            return self.phi(s) * (s - x) + self.tail(s)
        if tag == "last-zero-max":
            return 0.5 * self.phi(s_g) * ax + self.phi(s) * (s - np.maximum(x, 0)) + self.tail(s)
        return self.phi(s_star_g) * ax + self.phi(s_star) * (s_star - ax) + self.tail(s_star)

    def positive_side(self, x, s, s_g, s_star, s_star_g) -> np.ndarray:
        """Vectorised :func:`positive_side_probability`."""
        x = np.asarray(x)
        xp = np.maximum(x, 0)
        if self.family.tag == "last-zero-max":
            num = 0.5 * self.phi(s_g) * xp + 0.5 * (self.phi(s) * (s - xp) + self.tail(s))
        elif self.family.tag == "bilateral-last-zero":
            num = self.phi(s_star_g) * xp + 0.5 * (self.phi(s_star) * (s_star - np.abs(x)) + self.tail(s_star))
        else:
            return np.full(x.shape, np.nan)
        return num / self(x, s, s_g, s_star, s_star_g)


def corridor_kernel(a: int, b: int, k: int) -> tuple[float, float]:
    """Kernel of the corridor h-transform at level ``-b < k < a`` (time-homogeneous)."""
    if not -b < k < a:
        raise AbsorbedKernelError(f"level {k} outside the corridor")
    w = a + b
    c = math.cos(math.pi / w)
    den = 2 * c * math.sin(math.pi * (a - k) / w)
    up = math.sin(math.pi * (a - k - 1) / w) / den
    down = math.sin(math.pi * (a - k + 1) / w) / den
    return up, down


def is_degenerate(family: MartingaleFamily) -> bool:
    """``a + b = 2``: every path leaves the corridor at step 1, so ``E[G_p] = 0``."""
    return not family.is_exact and family.a + family.b == 2


def all_default_families(abmax: int = 6) -> Iterable[MartingaleFamily]:
    """Weighted families with the standard test weights, then the non-degenerate
    trig families with barriers up to ``abmax``."""
    for w in default_weights():
        for tag in WEIGHTED:
            yield MartingaleFamily(tag, w)
    for a in range(1, abmax + 1):
        for b in range(1, abmax + 1):
            if a + b > 2:
                yield MartingaleFamily.corridor(a, b)
        if a > 1:
            yield MartingaleFamily.barrier(a)


def default_weights() -> list[PenaltyWeight]:
    return [
        PenaltyWeight.uniform(0, 3),
        PenaltyWeight.point(2),
        PenaltyWeight.truncated_geometric(Fraction(1, 2), 30),
    ]
