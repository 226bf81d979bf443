"""Seeded simulation under the penalised measures and statistical checks of their laws.

Randomness comes from numpy's counter-based Philox generator.  A run is split
into blocks of chains; block ``j`` of a run with seed ``s`` draws from
``SeedSequence([s, j])``, so results depend only on the parameters and seed.

The last zero ``g`` is not a stopping time, so simulations truncate at a
horizon ``H`` and report ``g_H`` instead.  Every report carries a proxy for the
resulting bias: the fraction of chains whose last zero before ``H`` lies in
``(H/2, H]``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import stats

from . import laws
from .martingales import (
    AbsorbedKernelError,
    FloatEvaluator,
    MartingaleFamily,
    corridor_kernel,
    q_kernel,
)
from .walk import Path, PenaltyWeight, WalkState, step_state

GENERATOR_ID = "numpy.random.Philox4x32-10/SeedSequence"
BLOCK = 20_000
POST_G_LEVELS = 10
KERNEL_TOL = 1e-12


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *keys])))


# kernels


def bessel3_step_probs(x: int) -> tuple[Fraction, Fraction]:
    """``((x+2)/(2x+2), x/(2x+2))`` for ``x >= 0``."""
    if x < 0:
        raise ValueError("3-Bessel walk lives on x >= 0")
    return Fraction(x + 2, 2 * x + 2), Fraction(x, 2 * x + 2)


def bessel3_star_step_probs(x: int) -> tuple[Fraction, Fraction]:
    """``((x+1)/(2x), (x-1)/(2x))`` for ``x >= 1``."""
    if x <= 0:
        raise ValueError("3-Bessel* walk lives on x >= 1")
    return Fraction(x + 1, 2 * x), Fraction(x - 1, 2 * x)


@dataclass(frozen=True)
class ChainKernel:
    """One-step law of a nearest-neighbour chain.

    ``step_probs(state)`` gives ``(p_up, p_down)``; ``advance`` and ``position``
    let the chain carry richer state than its position (a
    :class:`~penalwalk.walk.WalkState` for h-transforms).
    """

    name: str
    step_probs: Callable
    support: str
    advance: Callable = staticmethod(lambda state, e: state + e)
    position: Callable = staticmethod(lambda state: state)
    init: Callable = staticmethod(lambda start: start)
    level_based: bool = True

    @classmethod
    def bessel3(cls) -> "ChainKernel":
        return cls("bessel3", lambda x: tuple(map(float, bessel3_step_probs(x))), "x >= 0")

    @classmethod
    def bessel3_star(cls) -> "ChainKernel":
        return cls("bessel3*", lambda x: tuple(map(float, bessel3_star_step_probs(x))), "x >= 1")

    @classmethod
    def corridor(cls, a: int, b: int) -> "ChainKernel":
        return cls(f"corridor({a},{b})", lambda k: corridor_kernel(a, b, k), f"{-b} < x < {a}")

    @classmethod
    def from_family(cls, family: MartingaleFamily) -> "ChainKernel":
        def probs(state):
            up, down = q_kernel(family, state)
            return float(up), float(down)

        return cls(
            f"h[{family}]",
            probs,
            "states with M > 0",
            advance=step_state,
            position=lambda st: st.x,
            init=WalkState.initial,
            level_based=False,
        )

    def level_table(self, lo: int, hi: int) -> np.ndarray:
        """``p_up`` at levels ``lo..hi`` (level-based kernels only)."""
        if not self.level_based:
            raise ValueError("kernel is not a function of the level")
        return np.array([self.step_probs(k)[0] for k in range(lo, hi + 1)])


@dataclass(frozen=True)
class SampledPath:
    path: Path
    absorbed: bool
    seed: int
    generator: str = GENERATOR_ID


def sample_chain(kernel: ChainKernel, start: int, n_steps: int, seed: int) -> SampledPath:
    """Run ``kernel`` for ``n_steps`` from ``start``.

    If the kernel is undefined or has no mass before ``n_steps`` (the martingale
    vanished) the path is cut there and marked ``absorbed``.
    """
    rng = make_rng(seed)
    u = rng.random(n_steps)
    state = kernel.init(start)
    try:
        kernel.step_probs(state)
    except (AbsorbedKernelError, ValueError) as exc:
        raise ValueError(f"start {start} outside the support of {kernel.name}") from exc
    steps = []
    absorbed = False
    for t in range(n_steps):
        try:
            up, down = kernel.step_probs(state)
        except AbsorbedKernelError:
            absorbed = True
            break
        if abs(up + down - 1) > 1e-9:
            raise ValueError(f"kernel {kernel.name} does not sum to 1 at {state}")
        e = 1 if u[t] < up else -1
        steps.append(e)
        state = kernel.advance(state, e)
    return SampledPath(Path(start, tuple(steps)), absorbed, seed)


# batch simulation of weighted h-transforms


@dataclass
class QSample:
    """Per-chain outcomes of a batch run under an h-transformed measure."""

    family: str
    n_samples: int
    horizon: int
    seed: int
    s_g: np.ndarray
    s_star_g: np.ndarray
    gamma_g: np.ndarray
    last_zero: np.ndarray
    positive: np.ndarray  # X_H > 0 (or on the positive side once frozen)
    positive_prob: np.ndarray  # Q(positive side after g | F_H)
    post_g: np.ndarray  # (levels, 2): up/down moves of |X| since the last zero
    r_counts: np.ndarray  # (levels + 1, 2): up/down moves of R = 2S - X
    hit_stat: np.ndarray  # S*_g at T*_level (bilateral) when requested, else empty
    x: np.ndarray  # state when the chain stopped
    s: np.ndarray
    s_star: np.ndarray
    m: np.ndarray  # martingale value there
    unhit: int
    kernel_max_dev: float
    generator: str = GENERATOR_ID

    @property
    def late_zero_fraction(self) -> float:
        return float(np.mean(self.last_zero > self.horizon // 2))


def _frozen(family: MartingaleFamily, s: np.ndarray, s_star: np.ndarray) -> np.ndarray:
    """Chains whose martingale vanishes at 0 can never return there."""
    w = family.weight
    if not w.is_finite:
        return np.zeros(s.shape, dtype=bool)
    k = w.support_max
    if family.tag == "last-zero-max":
        return s > k
    if family.tag == "bilateral-last-zero":
        return s_star > k
    return np.zeros(s.shape, dtype=bool)


def _simulate_block(family, ev, n, horizon, rng, stop_level, track_r):
    x = np.zeros(n, dtype=np.int64)
    s = np.zeros(n, dtype=np.int64)
    ss = np.zeros(n, dtype=np.int64)
    sg = np.zeros(n, dtype=np.int64)
    ssg = np.zeros(n, dtype=np.int64)
    gam = np.ones(n, dtype=np.int64)
    g = np.zeros(n, dtype=np.int64)
    counts = np.zeros(n * 2 * POST_G_LEVELS, dtype=np.int64)
    r_counts = np.zeros((POST_G_LEVELS + 1) * 2, dtype=np.int64)
    idx = np.arange(n)

    out = {
        "s_g": np.zeros(n, dtype=np.int64),
        "s_star_g": np.zeros(n, dtype=np.int64),
        "gamma_g": np.zeros(n, dtype=np.int64),
        "last_zero": np.zeros(n, dtype=np.int64),
        "positive": np.zeros(n, dtype=bool),
        "positive_prob": np.zeros(n),
        "hit": np.full(n, -1, dtype=np.int64),
        "x": np.zeros(n, dtype=np.int64),
        "s": np.zeros(n, dtype=np.int64),
        "s_star": np.zeros(n, dtype=np.int64),
        "m": np.zeros(n),
    }
    worst = 0.0

    def retire(mask):
        j = idx[mask]
        out["s_g"][j] = sg[mask]
        out["s_star_g"][j] = ssg[mask]
        out["gamma_g"][j] = gam[mask]
        out["last_zero"][j] = g[mask]
        out["positive"][j] = x[mask] > 0
        out["positive_prob"][j] = ev.positive_side(x[mask], s[mask], sg[mask], ss[mask], ssg[mask])
        out["x"][j], out["s"][j], out["s_star"][j] = x[mask], s[mask], ss[mask]
        out["m"][j] = ev(x[mask], s[mask], sg[mask], ss[mask], ssg[mask])

    for t in range(horizon):
        if idx.size == 0:
            break
        m0 = ev(x, s, sg, ss, ssg)
        xu = x + 1
        su = np.maximum(s, xu)
        ssu = np.maximum(ss, np.abs(xu))
        zu = xu == 0
        mu = ev(xu, su, np.where(zu, su, sg), ssu, np.where(zu, ssu, ssg))
        xd = x - 1
        ssd = np.maximum(ss, np.abs(xd))
        zd = xd == 0
        md = ev(xd, s, np.where(zd, s, sg), ssd, np.where(zd, ssd, ssg))
        worst = max(worst, float(np.max(np.abs(mu + md - 2 * m0) / (2 * m0))))
        p_up = mu / (2 * m0)
        up = rng.random(idx.size) < p_up
        step = np.where(up, 1, -1)
        ax = np.abs(x)

        # |X| transitions since the last zero, levels 1..POST_G_LEVELS
        lvl = (ax >= 1) & (ax <= POST_G_LEVELS)
        if lvl.any():
            away = (x > 0) == up
            pos = np.flatnonzero(lvl)
            counts[(pos * POST_G_LEVELS + ax[pos] - 1) * 2 + (~away[pos]).astype(np.int64)] += 1
        if track_r:
            r = 2 * s - x
            new_r = 2 * np.maximum(s, x + step) - (x + step)
            sel = r <= POST_G_LEVELS
            np.add.at(r_counts, r[sel] * 2 + (new_r[sel] < r[sel]), 1)

        x = x + step
        s = np.maximum(s, x)
        ss = np.maximum(ss, np.abs(x))
        zero = x == 0
        if zero.any():
            sg = np.where(zero, s, sg)
            ssg = np.where(zero, ss, ssg)
            gam = gam + zero
            g = np.where(zero, t + 1, g)
            zpos = np.flatnonzero(zero)
            for j in range(2 * POST_G_LEVELS):
                counts[zpos * 2 * POST_G_LEVELS + j] = 0

        done = np.zeros(idx.size, dtype=bool)
        if stop_level is not None:
            hit = np.abs(x) >= stop_level
            if hit.any():
                out["hit"][idx[hit]] = ssg[hit]
                done |= hit
        elif (t + 1) % 32 == 0 or t + 1 == horizon:
            done |= _frozen(family, s, ss) & (np.abs(x) > POST_G_LEVELS)
        if done.any() or t + 1 == horizon:
            if t + 1 == horizon:
                done[:] = True
            retire(done)
            keep = ~done
            # fold the retired chains' counts into the running total
            c2 = counts.reshape(-1, 2 * POST_G_LEVELS)
            out.setdefault("post_g", np.zeros(2 * POST_G_LEVELS, dtype=np.int64))
            out["post_g"] += c2[done].sum(axis=0)
            counts = c2[keep].reshape(-1)
            x, s, ss, sg, ssg, gam, g, idx = (v[keep] for v in (x, s, ss, sg, ssg, gam, g, idx))
    out.setdefault("post_g", np.zeros(2 * POST_G_LEVELS, dtype=np.int64))
    out["r"] = r_counts
    out["worst"] = worst
    return out


@lru_cache(maxsize=16)
def simulate_q(family: MartingaleFamily, n_samples: int, horizon: int, seed: int,
               stop_level: int | None = None) -> QSample:
    """Run ``n_samples`` chains of the h-transform of a weighted ``family``.

    With ``stop_level`` each chain stops at ``T*_level`` (first time ``|X|``
    reaches it) and records ``S*_g`` there; ``horizon`` is then a step cap.
    """
    if n_samples < 1 or horizon < 1:
        raise ValueError("need n_samples >= 1 and horizon >= 1")
    if not family.is_exact:
        raise ValueError("batch simulation handles weighted families")
    ev = FloatEvaluator(family)
    parts = []
    for j, start in enumerate(range(0, n_samples, BLOCK)):
        n = min(BLOCK, n_samples - start)
        parts.append(_simulate_block(family, ev, n, horizon, make_rng(seed, j), stop_level,
                                     family.tag in ("one-sided-max", "next-zero-max")))
    cat = lambda key: np.concatenate([p[key] for p in parts])
    post = sum(p["post_g"] for p in parts).reshape(POST_G_LEVELS, 2)
    hit = cat("hit")
    return QSample(
        family=str(family),
        n_samples=n_samples,
        horizon=horizon,
        seed=seed,
        s_g=cat("s_g"),
        s_star_g=cat("s_star_g"),
        gamma_g=cat("gamma_g"),
        last_zero=cat("last_zero"),
        positive=cat("positive"),
        positive_prob=cat("positive_prob"),
        post_g=post,
        r_counts=sum(p["r"] for p in parts).reshape(POST_G_LEVELS + 1, 2),
        hit_stat=hit[hit >= 0] if stop_level is not None else np.empty(0, dtype=np.int64),
        x=cat("x"),
        s=cat("s"),
        s_star=cat("s_star"),
        m=cat("m"),
        unhit=int(np.sum(hit < 0)) if stop_level is not None else 0,
        kernel_max_dev=max(p["worst"] for p in parts),
    )


# reports


@dataclass
class SimReport:
    name: str
    n_samples: int
    seed: int
    horizon: int
    empirical: dict
    reference: dict
    tv: float | None = None
    chi2: float | None = None
    chi2_pvalue: float | None = None
    dof: int | None = None
    verdict: bool = False
    generator: str = GENERATOR_ID
    params: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        doc = asdict(self)
        doc["empirical"] = {str(k): v for k, v in self.empirical.items()}
        doc["reference"] = {str(k): v for k, v in self.reference.items()}
        return json.dumps(doc, indent=2, sort_keys=True, default=_json_default)

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["outcome", "empirical", "reference"])
        keys = sorted(set(self.empirical) | set(self.reference), key=str)
        for k in keys:
            w.writerow([k, repr(self.empirical.get(k, 0.0)), repr(self.reference.get(k, 0.0))])
        return buf.getvalue()


def _json_default(v):
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    return str(v)


def empirical_law(values) -> dict:
    vals, counts = np.unique(np.asarray(values), return_counts=True, axis=0)
    n = counts.sum()
    if vals.ndim > 1:
        return {tuple(int(t) for t in v): c / n for v, c in zip(vals, counts)}
    return {int(v): c / n for v, c in zip(vals, counts)}


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def pooled_chisquare(observed: dict, expected_prob: dict, n: int, min_expected: float = 5.0):
    """Chi-square goodness of fit; cells with expected count < ``min_expected`` are
    pooled into one cell together with any outcome missing from the reference."""
    obs_cells, exp_cells = [], []
    pool_obs = 0.0
    pool_exp = 0.0
    for k, pk in expected_prob.items():
        e = pk * n
        o = observed.get(k, 0)
        if e >= min_expected:
            obs_cells.append(o)
            exp_cells.append(e)
        else:
            pool_obs += o
            pool_exp += e
    pool_obs += sum(v for k, v in observed.items() if k not in expected_prob)
    pool_exp += max(0.0, n - sum(exp_cells) - pool_exp)
    if pool_exp > 0 or pool_obs > 0:
        if pool_exp < min_expected and obs_cells:
            obs_cells[-1] += pool_obs
            exp_cells[-1] += pool_exp
        else:
            obs_cells.append(pool_obs)
            exp_cells.append(pool_exp)
    obs = np.asarray(obs_cells, dtype=float)
    exp = np.asarray(exp_cells, dtype=float)
    exp *= obs.sum() / exp.sum()
    if len(obs) < 2:
        return 0.0, 1.0, 0
    res = stats.chisquare(obs, exp)
    return float(res.statistic), float(res.pvalue), len(obs) - 1


def _family(tag: str, w: PenaltyWeight) -> MartingaleFamily:
    if tag not in ("last-zero-max", "bilateral-last-zero", "one-sided-max"):
        raise ValueError(f"unsupported family for this test: {tag}")
    return MartingaleFamily(tag, w)


def _bias_note(sample: QSample) -> dict:
    return {
        "late_zero_fraction": sample.late_zero_fraction,
        "sqrt_horizon_scale": 1 / math.sqrt(sample.horizon),
        "kernel_max_dev": sample.kernel_max_dev,
    }


def estimate_sg_density(tag: str, w: PenaltyWeight, horizon: int, n_samples: int, seed: int,
                        tv_tol: float = 0.02) -> SimReport:
    """Empirical law of ``S_{g_H}`` (or ``S*_{g_H}``) under the h-transform against ``phi``."""
    if n_samples < 1:
        raise ValueError("empty sample")
    fam = _family(tag, w)
    sample = simulate_q(fam, n_samples, horizon, seed)
    stat = sample.s_star_g if tag == "bilateral-last-zero" else sample.s_g
    emp = empirical_law(stat)
    top = max(max(emp), w.support_max if w.is_finite else 0)
    ref = {k: float(w.phi(k)) for k in range(top + 1) if w.phi(k) > 0}
    tv = total_variation(emp, ref)
    counts = {k: v * n_samples for k, v in emp.items()}
    chi2, pval, dof = pooled_chisquare(counts, ref, n_samples)
    return SimReport(f"sg-density[{tag}]", n_samples, seed, horizon, emp, ref, tv, chi2, pval, dof,
                     tv <= tv_tol, params={"weight": str(w), "tv_tol": tv_tol}, extra=_bias_note(sample))


def _weight_cutoff(w: PenaltyWeight) -> int:
    if w.is_finite:
        return w.support_max
    return max(1, math.ceil(math.log(1e-17) / math.log(float(w.q))))


def completed_joint_law(sample: QSample, family: MartingaleFamily, per_chain: bool = False):
    """Average over chains of ``Q(gamma_g = a, S_g = k | F_H)``.

    Given the state at ``H`` the rest of the zero process is explicit.  With
    ``c = 1/2`` (one-sided maximum) or ``c = 1`` (bilateral maximum), no further
    zero occurs with probability ``c phi(S_g)|X_H| / M_H``.  The maximum at
    successive later zeros is a Markov chain that jumps from ``m`` to ``j > m``
    with probability ``c (1/j - 1/(j+1))``.  Each later zero ``tau_a`` is the
    last one with weight ``c phi(S_{tau_a}) / M_H``.  The average is an
    unbiased estimate of the ``Q`` law at every horizon.

    Returns a dict ``(a, k) -> probability``; with ``per_chain`` also the
    total mass of each chain's conditional law (one up to truncation).
    """
    if family.tag not in ("last-zero-max", "bilateral-last-zero"):
        raise ValueError("the completed law needs a last-zero family")
    bil = family.tag == "bilateral-last-zero"
    c = 1.0 if bil else 0.5
    K = _weight_cutoff(family.weight)
    phi, _ = family.weight.float_tables(K + 1)
    n = sample.x.size
    if n == 0:
        raise ValueError("empty sample")
    x, gam, inv = sample.x, sample.gamma_g, 1.0 / sample.m
    top = sample.s_star if bil else sample.s
    mg = sample.s_star_g if bil else sample.s_g
    reach = np.abs(x) if bil else np.maximum(x, 0)  # excursion height that can raise the max

    jump = np.zeros((K + 1, K + 1))
    for m in range(K + 1):
        jump[m, m] = 1 - c / (m + 1)
        for j in range(m + 1, K + 1):
            jump[m, j] = c * (1 / j - 1 / (j + 1))

    amax = int(gam.max()) + 2
    U = np.zeros((amax, K + 1))
    atom = np.zeros((amax, K + 1))
    ok = mg <= K
    w_atom = np.where(ok, c * phi[np.minimum(mg, K)] * np.abs(x) * inv, 0.0)
    np.add.at(atom, (gam[ok], mg[ok]), w_atom[ok])
    at0 = (x == 0) & (top <= K)
    np.add.at(U, (gam[at0], top[at0]), inv[at0])
    away = (x != 0) & (top <= K)
    stay = np.where(away, 1 - reach / (top + 1), 0.0)
    np.add.at(U, (gam[away] + 1, top[away]), stay[away] * inv[away])
    for j in range(1, K + 1):
        sel = away & (top < j) & (reach > 0)
        if sel.any():
            np.add.at(U, (gam[sel] + 1, np.full(sel.sum(), j)), reach[sel] * (1 / j - 1 / (j + 1)) * inv[sel])

    D = c * phi
    table = {}
    total = U.sum()
    a = 0
    row = np.zeros(K + 1)
    while a < amax or row.sum() > 1e-16 * total:
        row = (U[a] if a < amax else 0.0) + (row @ jump if a else 0.0)
        for k in np.flatnonzero(D > 0):
            v = row[k] * D[k] + (atom[a, k] if a < amax else 0.0)
            if v > 0:
                table[(a, int(k))] = v / n
        a += 1
    if per_chain:
        return table, _chain_masses(sample, family, K, c, jump, D)
    return table


def _pool_bins(ref: dict, n: int, min_expected: float):
    """Bins of consecutive ``a`` for each ``k``; each holds ``n * mass >= min_expected``
    and the last one of each ``k`` is open-ended.  Returns ``(binmap, masses)``
    with ``binmap[k][a]`` the bin of cell ``(a, k)`` (the last entry covers larger ``a``)."""
    ks = sorted({k for _, k in ref})
    binmap, masses = {}, []
    for k in ks:
        cells = sorted((a, v) for (a, kk), v in ref.items() if kk == k)
        amax = cells[-1][0]
        row = np.zeros(amax + 1, dtype=np.int64)
        acc, first = 0.0, len(masses)
        row[: cells[0][0]] = first
        for a, v in cells:
            if acc * n >= min_expected:
                masses.append(acc)
                acc = 0.0
            row[a] = len(masses)
            acc += v
        if acc * n < min_expected and len(masses) > first:
            row[row == len(masses)] = len(masses) - 1
            masses[-1] += acc
        else:
            masses.append(acc)
        binmap[k] = row
    return binmap, np.array(masses)


def completed_wald_test(sample: QSample, family: MartingaleFamily, ref: dict,
                        min_expected: float = 500.0, block: int = 10_000):
    """Wald test of the mean conditional law ``Q(gamma_g, S_g | F_H)`` against ``ref``.

    Each chain gives a vector of pooled-cell probabilities; their mean is
    compared with the pooled reference using their empirical covariance, so
    the statistic is asymptotically chi-square with (bins - 1) degrees of
    freedom.  Bins are large (``min_expected`` reference counts each) because a
    covariance estimated from sparse bins inflates the statistic.  ``ref`` must
    carry (numerically) all of the reference mass.
    Returns ``(statistic, pvalue, dof)``.
    """
    bil = family.tag == "bilateral-last-zero"
    c = 1.0 if bil else 0.5
    K = _weight_cutoff(family.weight)
    phi, _ = family.weight.float_tables(K + 1)
    D = c * phi
    n = sample.x.size
    binmap, r = _pool_bins(ref, n, min_expected)
    B = r.size
    if B < 2:
        return 0.0, 1.0, 0
    live = [k for k in range(K + 1) if D[k] > 0 and k in binmap]
    jump = np.zeros((K + 1, K + 1))
    for m in range(K + 1):
        jump[m, m] = 1 - c / (m + 1)
        for j in range(m + 1, K + 1):
            jump[m, j] = c * (1 / j - 1 / (j + 1))

    def bins_of(a, k):
        row = binmap[k]
        return row[np.minimum(a, row.size - 1)]

    total = np.zeros(B)
    cross = np.zeros((B, B))
    for lo in range(0, n, block):
        sl = slice(lo, min(n, lo + block))
        x, gam, inv = sample.x[sl], sample.gamma_g[sl], 1.0 / sample.m[sl]
        top = (sample.s_star if bil else sample.s)[sl]
        mg = (sample.s_star_g if bil else sample.s_g)[sl]
        reach = np.abs(x) if bil else np.maximum(x, 0)
        m_ = x.size
        rows = np.arange(m_)
        Y = np.zeros((m_, B))
        ok = (x != 0) & (mg <= K)
        if ok.any():
            kk = np.minimum(mg, K)
            w_atom = np.where(ok, c * phi[kk] * np.abs(x) * inv, 0.0)
            for k in live:
                sel = ok & (mg == k)
                np.add.at(Y, (rows[sel], bins_of(gam[sel], k)), w_atom[sel])
        v0 = np.zeros((m_, K + 1))
        inside = top <= K
        t = np.minimum(top, K)
        v0[rows[inside], t[inside]] = np.where(x[inside] == 0, 1.0, 1 - reach[inside] / (top[inside] + 1))
        for j in range(1, K + 1):
            sel = inside & (x != 0) & (top < j)
            v0[sel, j] = reach[sel] * (1 / j - 1 / (j + 1))
        start = np.where(x == 0, gam, gam + 1)
        V = np.zeros((m_, K + 1))
        a = int(start.min())
        while True:
            V = V @ jump
            now = start == a
            V[now] += v0[now]
            for k in live:
                Y[:, bins_of(a, k)] += D[k] * V[:, k] * inv
            a += 1
            if a > start.max() and V.sum() < 1e-16 * m_:
                break
        total += Y.sum(axis=0)
        cross += Y.T @ Y
    mean = total / n
    cov = (cross - n * np.outer(mean, mean)) / (n - 1)
    d = (mean - r)[:-1]
    S = cov[:-1, :-1]
    stat = float(n * d @ np.linalg.pinv(S, rcond=1e-12, hermitian=True) @ d)
    dof = int(np.linalg.matrix_rank(S, tol=1e-12 * max(1.0, float(np.abs(S).max()))))
    return stat, float(stats.chi2.sf(stat, dof)), dof


def _chain_masses(sample, family, K, c, jump, D):
    """Total mass of each chain's conditional law (a consistency check)."""
    bil = family.tag == "bilateral-last-zero"
    phi_w = D / c
    out = np.zeros(sample.x.size)
    for i in range(sample.x.size):
        x, m = int(sample.x[i]), float(sample.m[i])
        top = int(sample.s_star[i] if bil else sample.s[i])
        mg = int(sample.s_star_g[i] if bil else sample.s_g[i])
        reach = abs(x) if bil else max(x, 0)
        tot = c * phi_w[mg] * abs(x) / m if mg <= K else 0.0
        v = np.zeros(K + 1)
        if top <= K:
            if x == 0:
                v[top] = 1.0
            else:
                v[top] = 1 - reach / (top + 1)
                for j in range(top + 1, K + 1):
                    v[j] = reach * (1 / j - 1 / (j + 1))
        for _ in range(20_000):
            tot += float(v @ D) / m
            v = v @ jump
            if v.sum() < 1e-17:
                break
        out[i] = tot
    return out


def estimate_joint_gamma_sg(tag: str, w: PenaltyWeight, horizon: int, n_samples: int, seed: int,
                            alpha: float = 1e-3, exponent_shift: int = 1,
                            estimator: str = "completed") -> SimReport:
    """Law of ``(gamma_g, S_g)`` against the closed-form table.

    With ``estimator="completed"`` (default) each chain contributes its
    conditional law given ``F_H`` (:func:`completed_joint_law`), which removes
    the truncation bias of the raw frequencies of ``(gamma_{g_H}, S_{g_H})``;
    the verdict is the Wald test of :func:`completed_wald_test`.  With
    ``estimator="raw"`` it is the multinomial chi-square of the raw
    frequencies, which is also reported in ``extra`` either way.
    """
    if n_samples < 1:
        raise ValueError("empty sample")
    if estimator not in ("completed", "raw"):
        raise ValueError("estimator must be 'completed' or 'raw'")
    fam = _family(tag, w)
    sample = simulate_q(fam, n_samples, horizon, seed)
    if tag == "bilateral-last-zero":
        stat = np.stack([sample.gamma_g, sample.s_star_g], axis=1)
        cell = lambda a, k: float(laws.q_star_joint_gamma_sg(w, a, k, exponent_shift))
    else:
        stat = np.stack([sample.gamma_g, sample.s_g], axis=1)
        cell = lambda a, k: float(laws.q_joint_gamma_sg(w, a, k))
    raw = empirical_law(stat)
    done = completed_joint_law(sample, fam)
    emp = done if estimator == "completed" else raw
    kmax = _weight_cutoff(w) if w.is_finite else max(k for _, k in emp)
    amin = max(a for a, _ in emp) + 5
    ref = {}
    a = 1
    while a <= amin or (row > 1e-17 and a < 20_000):
        row = 0.0
        for k in range(kmax + 1):
            v = cell(a, k)
            if v > 0:
                ref[(a, k)] = v
                row += v
        a += 1

    def test(law):
        counts = {k: v * n_samples for k, v in law.items()}
        return pooled_chisquare(counts, ref, n_samples)

    mchi2, mpval, mdof = test(done)
    raw_chi2, raw_p, raw_dof = test(raw)
    if estimator == "completed":
        chi2, pval, dof = completed_wald_test(sample, fam, ref)
    else:
        chi2, pval, dof = raw_chi2, raw_p, raw_dof
    shown = {key: v for key, v in ref.items() if v * n_samples >= 1e-3 or key in emp}
    rep = SimReport(f"joint-gamma-sg[{tag}]", n_samples, seed, horizon, emp, shown,
                    total_variation(emp, ref), chi2, pval, dof, pval > alpha,
                    params={"weight": str(w), "alpha": alpha, "exponent_shift": exponent_shift,
                            "estimator": estimator},
                    extra={"raw_chi2": raw_chi2, "raw_pvalue": raw_p, "raw_tv": total_variation(raw, ref),
                           "completed_multinomial_pvalue": mpval, **_bias_note(sample)})
    if estimator == "completed":
        rep.notes.append("completed estimator: mean of Q(gamma_g, S_g | F_H), Wald test on pooled cells")
    return rep


def estimate_sign_split(tag: str, w: PenaltyWeight, horizon: int, n_samples: int, seed: int,
                        n_sigma: float = 4.0) -> SimReport:
    """Probability that the walk ends on the positive side after ``g``, against ``1/2``.

    The verdict uses the mean over chains of ``Q(positive side | F_H)``, an
    unbiased estimator at any horizon.  The raw fraction with ``X_H > 0`` is
    reported alongside; it carries a truncation bias of order ``H^(-1/2)``.
    """
    if n_samples < 1:
        raise ValueError("empty sample")
    fam = _family(tag, w)
    sample = simulate_q(fam, n_samples, horizon, seed)
    est = float(np.mean(sample.positive_prob))
    raw = float(np.mean(sample.positive))
    sigma = float(np.std(sample.positive_prob)) / math.sqrt(n_samples)
    sigma_raw = math.sqrt(0.25 / n_samples)
    z = (est - 0.5) / sigma if sigma > 0 else 0.0
    z_raw = (raw - 0.5) / sigma_raw
    rep = SimReport(f"sign-split[{tag}]", n_samples, seed, horizon, {1: est, 0: 1 - est}, {1: 0.5, 0: 0.5},
                    tv=abs(est - 0.5), verdict=abs(z) <= n_sigma,
                    params={"weight": str(w), "n_sigma": n_sigma},
                    extra={"z": z, "sigma": sigma, "raw_fraction": raw, "z_raw": z_raw, **_bias_note(sample)})
    rep.notes.append("raw sign of X_H is biased by truncation; verdict uses the conditional probability")
    return rep


def _band_check(counts: np.ndarray, levels, p_up_ref, n_sigma, min_count):
    rows, ok, skipped = {}, True, []
    for lvl, (up, down), p in zip(levels, counts, p_up_ref):
        tot = int(up + down)
        if tot < min_count:
            skipped.append(int(lvl))
            continue
        f = up / tot
        sigma = math.sqrt(max(p * (1 - p), 1e-300) / tot)
        z = (f - p) / sigma if sigma > 1e-150 else (0.0 if abs(f - p) < 1e-12 else math.inf)
        rows[int(lvl)] = {"visits": tot, "freq_up": f, "p_up": p, "z": z}
        ok &= abs(z) <= n_sigma
    return rows, ok, skipped


def post_g_transition_test(tag: str, w: PenaltyWeight, horizon: int, n_samples: int, seed: int,
                           n_sigma: float = 4.0, min_count: int = 30) -> SimReport:
    """One-step frequencies of ``|X|`` after the last zero against the 3-Bessel* kernel.

    For ``one-sided-max`` the frequencies of ``R = 2S - X`` over the whole path are
    compared with the 3-Bessel kernel instead.  Levels with fewer than
    ``min_count`` visits are skipped and listed.
    """
    if n_samples < 1:
        raise ValueError("empty sample")
    fam = _family(tag, w)
    sample = simulate_q(fam, n_samples, horizon, seed)
    if tag == "one-sided-max":
        levels = range(0, POST_G_LEVELS + 1)
        ref = [float(bessel3_step_probs(r)[0]) for r in levels]
        counts = sample.r_counts
        name = "r-transitions"
    else:
        levels = range(1, POST_G_LEVELS + 1)
        ref = [float(bessel3_star_step_probs(x)[0]) for x in levels]
        counts = sample.post_g
        name = "post-g-transitions"
    rows, ok, skipped = _band_check(counts, levels, ref, n_sigma, min_count)
    emp = {k: v["freq_up"] for k, v in rows.items()}
    refd = {int(lvl): p for lvl, p in zip(levels, ref)}
    rep = SimReport(f"{name}[{tag}]", n_samples, seed, horizon, emp, refd, verdict=ok,
                    params={"weight": str(w), "n_sigma": n_sigma, "min_count": min_count},
                    extra={"levels": rows, "skipped": skipped, **_bias_note(sample)})
    if skipped:
        rep.notes.append(f"levels skipped for lack of visits: {skipped}")
    return rep


def _plain_premax_at_hit(p: int, n_samples: int, seed: int, cap: int) -> tuple[np.ndarray, int]:
    """``S_{g_{T_p}}`` for the unpenalised walk, by vectorised simulation."""
    out, unhit = [], 0
    for j, start in enumerate(range(0, n_samples, BLOCK)):
        n = min(BLOCK, n_samples - start)
        rng = make_rng(seed, j)
        x = np.zeros(n, dtype=np.int64)
        s = np.zeros(n, dtype=np.int64)
        sg = np.zeros(n, dtype=np.int64)
        for _ in range(cap):
            if x.size == 0:
                break
            x = x + np.where(rng.random(x.size) < 0.5, 1, -1)
            s = np.maximum(s, x)
            sg = np.where(x == 0, s, sg)
            hit = x >= p
            if hit.any():
                out.append(sg[hit])
                x, s, sg = x[~hit], s[~hit], sg[~hit]
        unhit += x.size
    return (np.concatenate(out) if out else np.empty(0, dtype=np.int64)), unhit


def uniform_pre_max_test(p: int, n_samples: int, seed: int, measure: str = "P",
                         w: PenaltyWeight | None = None, alpha: float = 1e-3,
                         cap: int = 100_000) -> SimReport:
    """Law of ``S_{g_{T_p}}`` under P, or of ``S*_{g_{T*_p}}`` under Q*, against uniform on ``0..p-1``.

    Under Q* the weight ``w`` defaults to uniform on ``0..3``.  ``cap`` bounds the
    number of steps; chains that have not hit the level by then are reported.
    The Q* report also carries a chi-square against the law
    ``phi(k) + Phi(p)/p`` of :func:`~penalwalk.laws.q_star_premax_at_hit`, which
    differs from uniform unless ``phi`` is uniform on ``0..p-1``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if n_samples < 1:
        raise ValueError("empty sample")
    if measure == "P":
        stat, unhit = _plain_premax_at_hit(p, n_samples, seed, cap)
    elif measure == "Q*":
        w = w or PenaltyWeight.uniform(0, 3)
        sample = simulate_q(MartingaleFamily("bilateral-last-zero", w), n_samples, cap, seed, stop_level=p)
        stat, unhit = sample.hit_stat, sample.unhit
    else:
        raise ValueError("measure must be 'P' or 'Q*'")
    m = stat.size
    emp = empirical_law(stat) if m else {}
    ref = {k: 1.0 / p for k in range(p)}
    counts = {k: v * m for k, v in emp.items()}
    chi2, pval, dof = pooled_chisquare(counts, ref, m) if m else (math.nan, 0.0, 0)
    rep = SimReport(f"uniform-pre-max[{measure}]", n_samples, seed, cap, emp, ref,
                    total_variation(emp, ref) if m else None, chi2, pval, dof,
                    pval > alpha or p == 1, params={"p": p, "measure": measure, "alpha": alpha},
                    extra={"unhit": unhit})
    if measure == "Q*" and m:
        law = {k: float(laws.q_star_premax_at_hit(w, p, k)) for k in range(p)}
        c2, pv, _ = pooled_chisquare(counts, law, m)
        rep.extra.update({"q_star_law": law, "q_star_law_chi2": c2, "q_star_law_pvalue": pv,
                          "q_star_law_tv": total_variation(emp, law)})
    if unhit:
        rep.notes.append(f"{unhit} chains did not reach the level within {cap} steps")
    return rep


def kernel_frequency_test(kernel: ChainKernel, start: int, n_steps: int, n_chains: int, seed: int,
                          lo: int, hi: int, n_sigma: float = 4.0, min_visits: int = 1000) -> SimReport:
    """Empirical one-step frequencies of a level kernel against its probabilities,
    at every level in ``lo..hi`` visited at least ``min_visits`` times."""
    table = kernel.level_table(lo, hi)
    rng = make_rng(seed)
    x = np.full(n_chains, start, dtype=np.int64)
    visits = np.zeros(hi - lo + 1, dtype=np.int64)
    ups = np.zeros(hi - lo + 1, dtype=np.int64)
    for _ in range(n_steps):
        inside = (x >= lo) & (x <= hi)
        if not inside.all():
            raise ValueError("chain left the tabulated range")
        p = table[x - lo]
        up = rng.random(n_chains) < p
        visits += np.bincount(x - lo, minlength=hi - lo + 1)
        ups += np.bincount(x[up] - lo, minlength=hi - lo + 1)
        x = x + np.where(up, 1, -1)
    counts = np.stack([ups, visits - ups], axis=1)
    rows, ok, skipped = _band_check(counts, range(lo, hi + 1), table, n_sigma, min_visits)
    emp = {k: v["freq_up"] for k, v in rows.items()}
    ref = {k: float(table[k - lo]) for k in rows}
    return SimReport(f"kernel-frequencies[{kernel.name}]", n_chains, seed, n_steps, emp, ref, verdict=ok,
                     params={"start": start, "n_sigma": n_sigma, "min_visits": min_visits},
                     extra={"levels": rows, "skipped": skipped})


def bessel_transience(n_runs: int, length: int, seed: int, level: int = 10,
                      min_fraction: float = 0.99) -> SimReport:
    """Fraction of 3-Bessel chains of ``length`` steps from 0 that end above ``level``.

    A trend check of transience, not a limit statement.
    """
    rng = make_rng(seed)
    x = np.zeros(n_runs, dtype=np.int64)
    for _ in range(length):
        p = (x + 2) / (2 * x + 2)
        x = x + np.where(rng.random(n_runs) < p, 1, -1)
    frac = float(np.mean(x > level))
    return SimReport("bessel3-transience", n_runs, seed, length, {"above": frac}, {"above": min_fraction},
                     verdict=frac >= min_fraction, params={"level": level})


def trend_last_zero(tag: str, w: PenaltyWeight, horizons, n_samples: int, seed: int) -> SimReport:
    """Fraction of chains whose last zero before ``H`` lies in ``(H/2, H]``, for growing ``H``.

    Under the penalised measure ``g`` is finite, so the fraction should fall with
    ``H``; this is reported as a trend, never asserted as a limit.
    """
    fam = _family(tag, w)
    fracs = {int(h): simulate_q(fam, n_samples, int(h), seed).late_zero_fraction for h in horizons}
    vals = [fracs[int(h)] for h in horizons]
    decreasing = all(b <= a + 3 * math.sqrt(max(a, 1e-3) / n_samples) for a, b in zip(vals, vals[1:]))
    return SimReport(f"late-zero-trend[{tag}]", n_samples, seed, int(max(horizons)), fracs, {},
                     verdict=decreasing, params={"horizons": list(map(int, horizons))},
                     notes=["trend only: the fraction of late zeros is a truncation-bias diagnostic"])


# conditional bridge before g


def sample_bridge(a: int, b: int, seed: int, max_tries: int = 100_000, max_steps: int = 10_000,
                  bilateral: bool = False):
    """Rejection sampler for the walk stopped at ``tau_a`` given ``S_{tau_a} = b``.

    Runs the plain walk until its ``a``-th visit to 0 (counting time 0) and
    accepts when the maximum (bilateral with ``bilateral=True``) equals ``b``.
    Attempts that exceed ``b`` are cut early; attempts longer than ``max_steps``
    are dropped and counted.  Returns ``(path, tries, dropped)``.
    """
    if a < 1 or b < 0:
        raise ValueError("need a >= 1 and b >= 0")
    rng = make_rng(seed)
    dropped = 0
    for tries in range(1, max_tries + 1):
        pos = [0]
        visits, top, ok = 1, 0, True
        while visits < a:
            if len(pos) > max_steps:
                ok = False
                dropped += 1
                break
            pos.append(pos[-1] + (1 if rng.random() < 0.5 else -1))
            top = max(top, abs(pos[-1]) if bilateral else pos[-1])
            if top > b:
                ok = False
                break
            visits += pos[-1] == 0
        if ok and top == b:
            return Path.from_positions(pos), tries, dropped
    raise RuntimeError(f"no accepted bridge in {max_tries} tries")
