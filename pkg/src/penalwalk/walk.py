"""Paths, running statistics and penalty weights for the simple symmetric walk.

Everything here is exact: positions are ints, probabilities are
:class:`fractions.Fraction`.  A :class:`WalkState` is the sufficient statistic
of a path prefix from which every penalisation functional and martingale in the
package can be evaluated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Sequence

UP = 1
DOWN = -1
STEPS = (UP, DOWN)

STATE_FIELDS = ("x", "s", "i", "s_star", "s_g", "s_star_g", "gamma", "g")

# Fields needed to update each statistic one step ahead (closure under step_state).
FIELD_DEPS = {
    "x": frozenset({"x"}),
    "s": frozenset({"x", "s"}),
    "i": frozenset({"x", "i"}),
    "s_star": frozenset({"x", "s_star"}),
    "s_g": frozenset({"x", "s", "s_g"}),
    "s_star_g": frozenset({"x", "s_star", "s_star_g"}),
    "gamma": frozenset({"x", "gamma"}),
    "g": frozenset({"x", "g"}),
    "r": frozenset({"x", "s"}),
}


def check_step(step: int) -> int:
    if step not in STEPS:
        raise ValueError(f"a step must be +1 or -1, got {step!r}")
    return step


@dataclass(frozen=True)
class Path:
    """A finite nearest-neighbour path ``start, start + steps[0], ...``."""

    start: int = 0
    steps: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(check_step(e) for e in self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def positions(self) -> list[int]:
        out = [self.start]
        for e in self.steps:
            out.append(out[-1] + e)
        return out

    def prefix(self, n: int) -> "Path":
        return Path(self.start, self.steps[:n])

    def final_state(self) -> "WalkState":
        state = WalkState.initial(self.start)
        for e in self.steps:
            state = step_state(state, e)
        return state

    @classmethod
    def from_positions(cls, positions: Sequence[int]) -> "Path":
        steps = tuple(b - a for a, b in zip(positions, positions[1:]))
        return cls(positions[0], steps)


@dataclass(frozen=True, slots=True)
class WalkState:
    """Running statistics of a path prefix at time ``n``.

    ``s_g``/``s_star_g`` are the one-sided and bilateral maxima up to the last
    zero ``g``; they are ``None`` (as is ``g``) while the path has not visited 0.
    ``gamma`` counts visits to 0 at times ``0..n`` inclusive.
    """

    n: int
    x: int
    s: int
    i: int
    s_star: int
    s_g: int | None
    s_star_g: int | None
    gamma: int
    g: int | None

    @classmethod
    def initial(cls, start: int = 0) -> "WalkState":
        if start == 0:
            return cls(0, 0, 0, 0, 0, 0, 0, 1, 0)
        return cls(0, start, start, start, abs(start), None, None, 0, None)

    @property
    def r(self) -> int:
        """Pitman statistic ``2 S_n - X_n``."""
        return 2 * self.s - self.x

    @property
    def has_zero(self) -> bool:
        return self.g is not None

    def get(self, name: str):
        return self.r if name == "r" else getattr(self, name)


def step_state(state: WalkState, step: int) -> WalkState:
    """Advance ``state`` by one step of the walk."""
    x = state.x + check_step(step)
    s = max(state.s, x)
    i = min(state.i, x)
    s_star = max(state.s_star, abs(x))
    if x == 0:
        return WalkState(state.n + 1, x, s, i, s_star, s, s_star, state.gamma + 1, state.n + 1)
    return WalkState(state.n + 1, x, s, i, s_star, state.s_g, state.s_star_g, state.gamma, state.g)


def required_fields(names: Iterable[str]) -> frozenset[str]:
    """Closure of ``names`` under the one-step update dependencies."""
    out: set[str] = set()
    for name in names:
        try:
            out |= FIELD_DEPS[name]
        except KeyError:
            raise ValueError(f"unknown walk statistic {name!r}") from None
    return frozenset(out)


def reduce_state(state: WalkState, keep: frozenset[str]) -> WalkState:
    """Blank out statistics not in ``keep`` so equal-behaving states collide.

    ``keep`` must be closed under :data:`FIELD_DEPS` (see :func:`required_fields`),
    otherwise later steps would read blanked values.
    """
    blank = {name: 0 for name in STATE_FIELDS if name not in keep}
    return replace(state, **blank) if blank else state


def path_statistics(path: Path) -> WalkState:
    """Recompute the final :class:`WalkState` of ``path`` from its positions.

    Independent of :func:`step_state`; used to cross-check the incremental update.
    """
    pos = path.positions
    n = len(pos) - 1
    zeros = [k for k, v in enumerate(pos) if v == 0]
    if zeros:
        g = zeros[-1]
        s_g, s_star_g = max(pos[: g + 1]), max(abs(v) for v in pos[: g + 1])
    else:
        g = s_g = s_star_g = None
    return WalkState(
        n=n,
        x=pos[-1],
        s=max(pos),
        i=min(pos),
        s_star=max(abs(v) for v in pos),
        s_g=s_g,
        s_star_g=s_star_g,
        gamma=len(zeros),
        g=g,
    )


@dataclass(frozen=True)
class Interval:
    """Closed rational interval ``[lo, hi]`` enclosing a real number."""

    lo: Fraction
    hi: Fraction

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("empty interval")

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def mid(self) -> Fraction:
        return (self.lo + self.hi) / 2

    def __contains__(self, value) -> bool:
        return self.lo <= value <= self.hi

    def __float__(self) -> float:
        return float(self.mid)

    def __add__(self, other):
        if isinstance(other, Interval):
            return Interval(self.lo + other.lo, self.hi + other.hi)
        return Interval(self.lo + other, self.hi + other)

    __radd__ = __add__

    def __mul__(self, c):
        c = Fraction(c)
        lo, hi = self.lo * c, self.hi * c
        return Interval(min(lo, hi), max(lo, hi))

    __rmul__ = __mul__


# Enclosure width for infinite series with no closed form.
SERIES_TOL = Fraction(1, 10**16)

_RATIONAL = r"[+-]?\d+(?:/\d+)?"


@dataclass(frozen=True)
class PenaltyWeight:
    """Probability weight ``phi`` on the non-negative integers.

    Either a finite table of exact rationals or the geometric law
    ``phi(k) = (1 - q) q**k``.
    """

    kind: str
    weights: tuple[tuple[int, Fraction], ...] = ()
    q: Fraction | None = None

    def __post_init__(self):
        if self.kind == "finite":
            table = {}
            for k, p in self.weights:
                k, p = int(k), Fraction(p)
                if k < 0:
                    raise ValueError(f"weight support must be >= 0, got {k}")
                if p < 0:
                    raise ValueError(f"negative weight at {k}: {p}")
                if p:
                    table[k] = table.get(k, Fraction(0)) + p
            total = sum(table.values(), Fraction(0))
            if total != 1:
                raise ValueError(f"weights must sum to exactly 1, got {total}")
            object.__setattr__(self, "weights", tuple(sorted(table.items())))
        elif self.kind == "geometric":
            q = Fraction(self.q)
            if not 0 < q < 1:
                raise ValueError(f"geometric parameter must lie in (0, 1), got {q}")
            object.__setattr__(self, "q", q)
        else:
            raise ValueError(f"unknown weight kind {self.kind!r}")

    # constructors

    @classmethod
    def finite(cls, table: Mapping[int, object] | Iterable[tuple[int, object]]) -> "PenaltyWeight":
        items = table.items() if isinstance(table, Mapping) else table
        return cls("finite", tuple((int(k), Fraction(v)) for k, v in items))

    @classmethod
    def uniform(cls, lo: int, hi: int) -> "PenaltyWeight":
        m = hi - lo + 1
        return cls.finite({k: Fraction(1, m) for k in range(lo, hi + 1)})

    @classmethod
    def point(cls, k: int) -> "PenaltyWeight":
        return cls.finite({k: 1})

    @classmethod
    def geometric(cls, q) -> "PenaltyWeight":
        return cls("geometric", q=Fraction(q))

    @classmethod
    def truncated_geometric(cls, q, kmax: int) -> "PenaltyWeight":
        """Geometric law restricted to ``0..kmax`` and renormalised."""
        q = Fraction(q)
        raw = {k: (1 - q) * q**k for k in range(kmax + 1)}
        z = sum(raw.values())
        return cls.finite({k: v / z for k, v in raw.items()})

    @classmethod
    def parse(cls, text: str) -> "PenaltyWeight":
        """Parse a weight specification.

        Accepted forms: ``"0:1/4, 1:3/4"`` (table), ``"geometric q=1/2"`` or
        ``"geometric:1/2"``, ``"uniform:0..3"``, ``"point:2"`` and
        ``"truncgeom:1/2:30"`` (geometric on ``0..30``, renormalised).
        """
        text = text.strip()
        m = re.fullmatch(r"uniform:(\d+)\.\.(\d+)", text)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if lo > hi:
                raise ValueError(f"empty uniform range {text!r}")
            return cls.uniform(lo, hi)
        m = re.fullmatch(r"point:(\d+)", text)
        if m:
            return cls.point(int(m.group(1)))
        m = re.fullmatch(rf"geometric:({_RATIONAL})", text)
        if m:
            return cls.geometric(Fraction(m.group(1)))
        m = re.fullmatch(rf"truncgeom:({_RATIONAL}):(\d+)", text)
        if m:
            return cls.truncated_geometric(Fraction(m.group(1)), int(m.group(2)))
        m = re.fullmatch(rf"geometric\s+q\s*=\s*({_RATIONAL})", text)
        if m:
            return cls.geometric(Fraction(m.group(1)))
        pairs = [p for p in re.split(r"[,\s]+", text) if p]
        if not pairs:
            raise ValueError("empty weight specification")
        table = []
        for pair in pairs:
            m = re.fullmatch(rf"(\d+):({_RATIONAL})", pair)
            if not m:
                raise ValueError(f"cannot parse weight entry {pair!r}; expected k:p/q")
            table.append((int(m.group(1)), Fraction(m.group(2))))
        return cls("finite", tuple(table))

    def __str__(self) -> str:
        if self.kind == "geometric":
            return f"geometric q={self.q}"
        return ", ".join(f"{k}:{p}" for k, p in self.weights)

    # evaluation

    @property
    def is_finite(self) -> bool:
        return self.kind == "finite"

    @property
    def support_max(self) -> int | None:
        return self.weights[-1][0] if self.is_finite else None

    @cached_property
    def _table(self) -> dict[int, Fraction]:
        return dict(self.weights)

    def phi(self, k: int) -> Fraction:
        if k < 0:
            return Fraction(0)
        if self.is_finite:
            return self._table.get(k, Fraction(0))
        return (1 - self.q) * self.q**k

    def tail(self, x: int) -> Fraction:
        """``Phi(x) = sum_{k >= x} phi(k)``."""
        if x <= 0:
            return Fraction(1)
        if self.is_finite:
            return sum((p for k, p in self.weights if k >= x), Fraction(0))
        return self.q**x

    def moment(self, r: int) -> Fraction:
        if r not in (1, 2):
            raise ValueError("only the first two moments are provided")
        if self.is_finite:
            return sum((k**r * p for k, p in self.weights), Fraction(0))
        q = self.q
        mean = q / (1 - q)
        return mean if r == 1 else q * (1 + q) / (1 - q) ** 2

    def series(self, coef, start: int) -> Fraction | Interval:
        """``sum_{k >= start} phi(k) coef(k)`` for non-increasing ``0 <= coef``.

        Exact for finite support.  For the geometric kind, returns an
        :class:`Interval` of width at most :data:`SERIES_TOL`; the tail beyond
        the partial sum is bounded by ``coef(N + 1) * Phi(N + 1)``.
        """
        start = max(start, 0)
        if self.is_finite:
            return sum((p * coef(k) for k, p in self.weights if k >= start), Fraction(0))
        total = Fraction(0)
        k = start
        while True:
            total += self.phi(k) * coef(k)
            bound = coef(k + 1) * self.tail(k + 1)
            if bound <= SERIES_TOL:
                return Interval(total, total + bound)
            k += 1

    def aux_series_h(self, x: int) -> Fraction | Interval:
        """``h(x) = sum_{k >= x} phi(k) / k``."""
        if x < 1:
            raise ValueError("h(x) needs x >= 1")
        return self.series(lambda k: Fraction(1, k), x)

    def float_tables(self, size: int):
        """``(phi, Phi)`` as float arrays on ``0..size-1`` (used by simulators)."""
        import numpy as np

        if not self.is_finite:
            q = float(self.q)
            tail = q ** np.arange(size, dtype=float)
            return (1 - q) * tail, tail
        phi = np.zeros(size)
        for k, p in self.weights:
            if k < size:
                phi[k] = float(p)
        tail = np.cumsum(phi[::-1])[::-1]
        # tail beyond the table still counts towards Phi
        tail += float(sum((p for k, p in self.weights if k >= size), Fraction(0)))
        return phi, tail


def tail(w: PenaltyWeight, x: int) -> Fraction:
    return w.tail(x)


def moment(w: PenaltyWeight, r: int) -> Fraction:
    return w.moment(r)


def aux_series_h(w: PenaltyWeight, x: int) -> Fraction | Interval:
    return w.aux_series_h(x)

