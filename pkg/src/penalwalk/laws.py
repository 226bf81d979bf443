"""Closed-form laws, identities and asymptotic rates for the walk.

Exact functions return :class:`fractions.Fraction`; trigonometric and
asymptotic ones return floats or :class:`AsymptoticEstimate`.  Inputs outside
the parity/range support give probability 0 rather than raising, so grid sweeps
stay total.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Callable

from .walk import Interval, PenaltyWeight

Number = Fraction | Interval


@dataclass(frozen=True)
class AsymptoticEstimate:
    """Leading-order estimate ``value`` of a quantity at large parameter ``n``."""

    value: float
    leading_term: str
    n: int

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value < 0:
            raise ValueError(f"estimate must be finite and >= 0, got {self.value}")

    def __float__(self) -> float:
        return self.value


# maxima and endpoints


def endpoint_pmf(n: int, c: int) -> Fraction:
    """``P(X_n = c)`` from 0."""
    if n < 0 or abs(c) > n or (n + c) % 2:
        return Fraction(0)
    return Fraction(comb(n, (n + c) // 2), 2**n)


def srw_max_pmf(n: int, k: int) -> Fraction:
    """``P(S_n = k)`` by reflection: ``P(X_n = k) + P(X_n = k + 1)``."""
    if k < 0:
        return Fraction(0)
    return endpoint_pmf(n, k) + endpoint_pmf(n, k + 1)


def max_zero_prob(n: int) -> Fraction:
    """``P(S_n = 0) = C(n, floor(n/2)) / 2**n``."""
    return Fraction(comb(n, n // 2), 2**n)


def log_max_zero_prob(n: int) -> float:
    """``log P(S_n = 0)`` through log-gamma, usable for ``n`` in the millions."""
    h = n // 2
    return math.lgamma(n + 1) - math.lgamma(h + 1) - math.lgamma(n - h + 1) - n * math.log(2)


def max_ratio_product(n: int, k: int) -> Fraction:
    """``P(S_n = k) / P(S_n = 0)`` as the telescoping product of binomial ratios.

    For ``k`` with the parity of ``n`` the product runs over the factors
    ``(n - k + 2j) / (n + 2j)`` (even ``n``) or ``(n - k + 2j) / (n + 2j - 1)``
    (odd ``n``); the value at ``k - 1`` is the same.
    """
    if k < 0 or k > n:
        return Fraction(0)
    if k % 2 != n % 2:
        k += 1
    out = Fraction(1)
    if n % 2 == 0:
        for j in range(1, k // 2 + 1):
            out *= Fraction(n - k + 2 * j, n + 2 * j)
    else:
        for j in range(1, (k + 1) // 2 + 1):
            out *= Fraction(n - k + 2 * j, n + 2 * j - 1)
    return out


def joint_max_endpoint_pmf(p: int, b: int, a: int) -> Fraction:
    """``P(S_p = b, X_p = a)`` for ``a <= b``, ``b >= 0``."""
    if b < 0 or a > b:
        return Fraction(0)
    r = 2 * b - a
    return endpoint_pmf(p, r) * Fraction(2 * r + 2, p + r + 2)


def first_passage_max_law(a: int, k: int) -> Fraction:
    """``P_a(S_{T_0} = k) = a / (k (k + 1))`` for ``k >= a > 0``; 0 when ``k < a``."""
    if a <= 0:
        raise ValueError("start must be > 0")
    if k < a:
        return Fraction(0)
    return Fraction(a, k * (k + 1))


# conditional laws at the next zero


def _psi(psi, support_max):
    if isinstance(psi, PenaltyWeight):
        return psi.phi, lambda coef, start: psi.series(coef, start)
    if support_max is None:
        raise ValueError("a callable psi needs support_max")

    def series(coef, start):
        return sum((Fraction(psi(k)) * coef(k) for k in range(start, support_max + 1)), Fraction(0))

    return psi, series


def _inv_kk1(k: int) -> Fraction:
    return Fraction(1, k * (k + 1))


def cond_next_zero_max(
    psi: PenaltyWeight | Callable[[int], object], s: int, x: int, support_max: int | None = None
) -> Number:
    """``E[psi(S_{d_p}) | S_p = s, X_p = x]``.

    Equal to ``psi(0)`` when ``s = 0`` and otherwise to
    ``psi(s) (1 - x+/s) + x+ sum_{k >= s} psi(k) / (k (k + 1))``.  With
    ``psi = phi`` this is the function ``f(s, x)``.  Geometric weights give an
    :class:`~penalwalk.walk.Interval` enclosure.
    """
    if s < 0 or x > s:
        raise ValueError(f"inconsistent state (s={s}, x={x})")
    f, series = _psi(psi, support_max)
    if s == 0:
        return Fraction(f(0))
    xp = max(x, 0)
    head = Fraction(f(s)) * (1 - Fraction(xp, s))
    if xp == 0:
        return head
    return xp * series(_inv_kk1, s) + head


def f_next_zero(w: PenaltyWeight, b: int, a: int) -> Number:
    """The reduction ``f(b, a)`` of ``phi(S_{d_p})`` to ``(S_p, X_p) = (b, a)``."""
    return cond_next_zero_max(w, b, a)


def bilateral_cond_next_zero(
    psi: PenaltyWeight | Callable[[int], object], s_star: int, x: int, support_max: int | None = None
) -> Number:
    """``E[psi(S*_{d_a}) | S*_a = s_star, X_a = x]``.

    The series starts at ``S*_a``, the bilateral maximum.
    """
    if abs(x) > s_star:
        raise ValueError(f"inconsistent state (s_star={s_star}, x={x})")
    f, series = _psi(psi, support_max)
    if x == 0:
        return Fraction(f(s_star))
    ax = abs(x)
    return ax * series(_inv_kk1, s_star) + Fraction(f(s_star)) * (1 - Fraction(ax, s_star))


def tail_ratio_identity(w: PenaltyWeight, n: int) -> tuple[Fraction, Fraction, Fraction]:
    """``(lhs, Phi(n)/n, (1 - Phi(n))/n)`` for the identity
    ``sum_{k >= n} (k phi(k) + Phi(k)) / (k (k + 1)) = Phi(n) / n``.

    The third entry is the alternative right-hand side kept for comparison.
    Finite support only.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not w.is_finite:
        raise ValueError("exact identity check needs a finitely supported weight")
    top = max(n, w.support_max)
    lhs = sum(((k * w.phi(k) + w.tail(k)) * _inv_kk1(k) for k in range(n, top + 1)), Fraction(0))
    # beyond the support Phi vanishes, so the sum is finite
    return lhs, w.tail(n) / n, (1 - w.tail(n)) / n


# returns to zero


def tau_max_pmf(a: int, c: int, exponent_shift: int = 1) -> Fraction:
    """``P(S_{tau_a} = c)`` where ``tau_a`` is the ``a``-th visit to 0 (``tau_1 = 0``).

    ``(1/2)^(a-1)`` at ``c = 0``, otherwise
    ``(1 - 1/(2(c+1)))^(a-1) - (1 - 1/(2c))^(a-1)``.  ``exponent_shift = 0``
    evaluates the same expression with exponent ``a`` for comparison.
    """
    if a < 1 or c < 0:
        raise ValueError("need a >= 1 and c >= 0")
    e = a - exponent_shift
    if c == 0:
        return Fraction(1, 2) ** e
    return (1 - Fraction(1, 2 * (c + 1))) ** e - (1 - Fraction(1, 2 * c)) ** e


def tau_bimax_pmf(a: int, k: int, exponent_shift: int = 1) -> Fraction:
    """``P(S*_{tau_a} = k)``: 0 at ``k = 0``, else ``(1 - 1/(k+1))^(a-1) - (1 - 1/k)^(a-1)``."""
    if a <= 1 or k < 0:
        raise ValueError("need a > 1 and k >= 0")
    if k == 0:
        return Fraction(0)
    e = a - exponent_shift
    return (1 - Fraction(1, k + 1)) ** e - (1 - Fraction(1, k)) ** e


def gamma_hit_pmf(c: int, m: int) -> Fraction:
    """``P(gamma_{T_c} = m)``: geometric with parameter ``1/(2c)`` on ``m >= 1``."""
    if c < 1 or m < 1:
        raise ValueError("need c >= 1 and m >= 1")
    r = Fraction(1, 2 * c)
    return (1 - r) ** (m - 1) * r


def uniform_pre_max_pmf(p: int, k: int) -> Fraction:
    """``P(S_{g_{T_p}} = k) = 1/p`` on ``0..p-1``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return Fraction(1, p) if 0 <= k < p else Fraction(0)


# laws under the penalised measures


def q_joint_gamma_sg(w: PenaltyWeight, a: int, k: int) -> Fraction:
    """``Q(gamma_g = a, S_g = k)`` for the last-zero-maximum penalisation.

    ``(1/2)^a phi(0)`` at ``k = 0`` and ``(1/2) P(S_{tau_a} = k) phi(k)`` otherwise.
    """
    if a < 1 or k < 0:
        return Fraction(0)
    return Fraction(1, 2) * tau_max_pmf(a, k) * w.phi(k)


def q_star_joint_gamma_sg(w: PenaltyWeight, a: int, k: int, exponent_shift: int = 1) -> Fraction:
    """``Q*(gamma_g = a, S*_g = k)`` for the bilateral last-zero penalisation.

    ``phi(0)`` at ``(a, k) = (1, 0)`` and ``P(S*_{tau_a} = k) phi(k)`` for ``a > 1``, ``k > 0``.
    """
    if k == 0:
        return w.phi(0) if a == 1 else Fraction(0)
    if a <= 1 or k < 0:
        return Fraction(0)
    return tau_bimax_pmf(a, k, exponent_shift) * w.phi(k)


def q_star_premax_at_hit(w: PenaltyWeight, p: int, k: int) -> Fraction:
    """``Q*(S*_{g_{T*_p}} = k) = phi(k) + Phi(p)/p`` on ``0..p-1``.

    At ``T*_p`` the bilateral martingale equals ``p phi(S*_g) + Phi(p)`` and
    ``S*_g`` is uniform under P, so the law is uniform only when ``phi`` is.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if not 0 <= k < p:
        return Fraction(0)
    return w.phi(k) + w.tail(p) / p


def q_max_exceed(w: PenaltyWeight, p: int) -> Fraction:
    """``Q(S_inf >= p) = (1/2) sum_{k < p} phi(k) + Phi(p)`` (last-zero-maximum Q).

    Tends to ``1/2`` as ``p`` grows; equal to it once ``p`` passes the support.
    """
    if p < 0:
        raise ValueError("p must be >= 0")
    return Fraction(1, 2) * (1 - w.tail(p)) + w.tail(p)


# corridor


def corridor_pmf(n: int, a: int, b: int, c: int) -> Fraction:
    """``P(S_n < a, X_n = c, I_n > -b)`` by the two-sided reflection sum."""
    if a < 1 or b < 1:
        raise ValueError("barriers must be >= 1")
    if not -b < c < a or (n + c) % 2 or abs(c) > n:
        return Fraction(0)
    w = a + b
    total = 0
    kmax = n // w + 2
    for k in range(-kmax, kmax + 1):
        i = (n + c) // 2 + k * w
        j = (n - c) // 2 + k * w + a
        total += (comb(n, i) if 0 <= i <= n else 0) - (comb(n, j) if 0 <= j <= n else 0)
    return Fraction(total, 2**n)


def corridor_survival(n: int, a: int, b: int) -> Fraction:
    """``P(S_n < a, I_n > -b)`` as the sum of :func:`corridor_pmf` over ``c``."""
    return sum((corridor_pmf(n, a, b, c) for c in range(-b + 1, a)), Fraction(0))


def corridor_pmf_trig(n: int, a: int, b: int, c: int) -> float:
    """Spectral form ``(2/(a+b)) sum_l cos^n(pi l/(a+b)) sin(pi l a/(a+b)) sin(pi l (a-c)/(a+b))``.

    An exact identity, so it agrees with :func:`corridor_pmf` up to rounding
    (about ``(a+b) * 1e-16``).
    """
    if a < 1 or b < 1:
        raise ValueError("barriers must be >= 1")
    if not -b < c < a:
        return 0.0
    w = a + b
    total = 0.0
    for ell in range(1, w):
        t = math.pi * ell / w
        total += math.cos(t) ** n * math.sin(t * a) * math.sin(t * (a - c))
    return 2.0 * total / w


def corridor_survival_asym(n: int, a: int, b: int) -> AsymptoticEstimate:
    """Leading term of ``P(S_n < a, I_n > -b)``:

    ``4/(a+b) cos^n(pi/(a+b)) sin(a pi/(a+b)) sum_{c = n mod 2} sin(pi (a-c)/(a+b))``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if a < 1 or b < 1:
        raise ValueError("barriers must be >= 1")
    value = math.exp(corridor_survival_asym_log(n, a, b))
    return AsymptoticEstimate(value, "4/(a+b) cos^n(pi/(a+b)) sin(a pi/(a+b)) sum_c sin(pi(a-c)/(a+b))", n)


def corridor_survival_asym_log(n: int, a: int, b: int) -> float:
    """``log`` of the leading term of :func:`corridor_survival_asym`; safe when ``cos^n`` underflows."""
    w = a + b
    if w == 2:
        return -math.inf  # cos(pi/2) = 0: a single site, left at the first step
    t = math.pi / w
    sines = sum(math.sin(t * (a - c)) for c in range(-b + 1, a) if (c - n) % 2 == 0)
    if sines <= 0.0 or math.cos(t) <= 0.0:
        return -math.inf
    return math.log(4.0 / w) + n * math.log(math.cos(t)) + math.log(math.sin(a * t)) + math.log(sines)


def binomial_filter(n: int, p: int, u: int) -> tuple[int, float]:
    """``sum_k C(n, kp + u)`` directly and through the roots-of-unity filter.

    ``0 <= u < p``; the filter reads ``(1/p) sum_l (1 + w^l)^n w^(-l u)`` with
    ``w = exp(2 i pi / p)``.
    """
    if p < 1 or not 0 <= u < p:
        raise ValueError("need p >= 1 and 0 <= u < p")
    left = sum(comb(n, j) for j in range(u, n + 1, p))
    right = sum(
        (1 + cmath.exp(2j * math.pi * ell / p)) ** n * cmath.exp(-2j * math.pi * ell * u / p)
        for ell in range(p)
    )
    return left, (right / p).real


def binomial_filter_alt(n: int, p: int, u: int) -> float:
    """The filter with phase exponent ``-2 i pi l u / u`` in place of ``/ p``.

    Kept for comparison only: the phase collapses to 1, giving the ``u = 0`` sum.
    """
    if u == 0:
        raise ValueError("u must be nonzero")
    right = sum(
        (1 + cmath.exp(2j * math.pi * ell / p)) ** n * cmath.exp(-2j * math.pi * ell * u / u)
        for ell in range(p)
    )
    return (right / p).real


# generating functions


def cosh_pgf(a: int, b: int, lam: float) -> float:
    """``E[(cosh lam)^(-T_a ^ T_b)] = cosh(lam (a+b)/2) / cosh(lam (a-b)/2)`` for ``a < 0 < b``."""
    if not a < 0 < b:
        raise ValueError("need a < 0 < b")
    return math.cosh(lam * (a + b) / 2) / math.cosh(lam * (a - b) / 2)


def geometric_time_hit_pgf(alpha: int, beta: float) -> float:
    """``E[(1 - beta)^(T_alpha)] = ((1 + sqrt(2 beta - beta^2)) / (1 - beta))^(-alpha)``."""
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    return ((1 + math.sqrt(2 * beta - beta * beta)) / (1 - beta)) ** (-alpha)


# asymptotic rates


def bilateral_gzero_asym(alpha: int, p: int) -> AsymptoticEstimate:
    """``alpha sqrt(2 / (pi p))``, the rate of ``P(S*_{g_p} < alpha)``."""
    if alpha < 1 or p < 1:
        raise ValueError("need alpha >= 1 and p >= 1")
    return AsymptoticEstimate(alpha * math.sqrt(2 / (math.pi * p)), "alpha sqrt(2/(pi p))", p)


def max_zero_asym(p: int) -> AsymptoticEstimate:
    """``sqrt(2 / (pi p))``, the rate of ``P(S_p = 0)``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return AsymptoticEstimate(math.sqrt(2 / (math.pi * p)), "sqrt(2/(pi p))", p)
