"""Command-line front end.

Every subcommand writes a CSV table (header row, data rows, then a ``#``
metadata block with the full parameters and verdict) to stdout or, with
``--out DIR``, to a file in ``DIR``.  Exact values are written as ``num/den``;
``--float`` switches to decimals with ``--digits`` significant digits.

Exit codes: 0 when every verdict passes, 1 when a verification fails, 2 on a
usage or configuration error.

A config file (``--config FILE``) holds ``key = value`` lines mirroring the long
flags of the subcommand (``command = law`` may name the subcommand itself);
flags given on the command line override it.  ``PENALWALK_WORKERS`` sets the
number of worker processes for sweeps.
"""

from __future__ import annotations

import argparse
import csv
import inspect
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path as FsPath
from typing import Callable

import numpy as np

from . import __version__, checks, laws, qsim
from .martingales import MartingaleFamily, all_default_families, evaluate, verify
from .oracle import NORMALIZER, EventSpec, PenaltyFunctional, normalized_expectation, penalized_ratio
from .walk import Interval, Path, PenaltyWeight, aux_series_h, moment, tail

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_DIGITS = 17


class UsageError(Exception):
    """Bad arguments or configuration; reported with exit code 2."""


# output


@dataclass
class Table:
    name: str
    columns: tuple[str, ...]
    rows: list[tuple]
    meta: dict = field(default_factory=dict)
    passed: bool = True
    extra_files: dict = field(default_factory=dict)  # file name -> text


def fmt(v, as_float: bool = False, digits: int = DEFAULT_DIGITS) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, np.integer):
        v = int(v)
    if isinstance(v, np.floating):
        v = float(v)
    if isinstance(v, Fraction):
        if as_float:
            return format(float(v), f".{digits}g")
        return f"{v.numerator}/{v.denominator}"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            return repr(v)
        return format(v, f".{digits}g") if as_float else repr(v)
    if isinstance(v, Interval):
        return f"[{fmt(v.lo, as_float, digits)}; {fmt(v.hi, as_float, digits)}]"
    if isinstance(v, (list, tuple)):
        return " ".join(fmt(x, as_float, digits) for x in v)
    if isinstance(v, dict):
        return " ".join(f"{k}={fmt(x, as_float, digits)}" for k, x in sorted(v.items(), key=lambda kv: str(kv[0])))
    return str(v)


def render(table: Table, as_float: bool, digits: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([fmt(v, as_float, digits) for v in row])
    meta = {
        "artifact": f"penalwalk {__version__}",
        "table": table.name,
        "rows": len(table.rows),
        "number-format": f"decimal, {digits} significant digits" if as_float else "exact num/den; floats shortest repr",
        "verdict": "pass" if table.passed else "fail",
        **table.meta,
    }
    for k in sorted(meta):
        if meta[k] is None:
            continue
        buf.write(f"# {k}: {fmt(meta[k], as_float, digits)}\n")
    return buf.getvalue()


def emit(table: Table, opts) -> None:
    text = render(table, opts.float, opts.digits)
    if opts.out is None:
        sys.stdout.write(text)
        return
    out = FsPath(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{table.name}.csv").write_text(text)
    for fname, body in sorted(table.extra_files.items()):
        (out / fname).write_text(body)
    sys.stdout.write(f"{table.name}: {'pass' if table.passed else 'fail'} -> {out / (table.name + '.csv')}\n")


# argument helpers


def parse_grid(text: str, kind: type = int) -> list:
    """``"3"``, ``"1..5"`` or a comma list of either, for integer grids; comma
    lists of numbers for float grids."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if kind is int and ".." in part:
                lo, hi = (int(x) for x in part.split(".."))
                if lo > hi:
                    raise UsageError(f"empty range {part!r}")
                out.extend(range(lo, hi + 1))
            else:
                out.append(kind(part))
        except ValueError:
            raise UsageError(f"cannot read {part!r} as {kind.__name__}") from None
    if not out:
        raise UsageError(f"empty grid {text!r}")
    return out


def parse_weight(text: str) -> PenaltyWeight:
    try:
        return PenaltyWeight.parse(text)
    except ValueError as exc:
        raise UsageError(f"bad weight {text!r}: {exc}") from None


def parse_pairs(tokens: list[str]) -> dict[str, str]:
    """``--key value`` / ``--key=value`` tokens into a dict (last one wins)."""
    out: dict[str, str] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            if i + 1 >= len(tokens):
                raise UsageError(f"missing value for {tok}")
            i += 1
            val = tokens[i]
        out[key.replace("-", "_")] = val
        i += 1
    return out


def workers() -> int:
    raw = os.environ.get("PENALWALK_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"PENALWALK_WORKERS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"PENALWALK_WORKERS must be a positive integer, got {raw!r}")
    return n


def pmap(fn, items) -> list:
    """Ordered map, in worker processes when ``PENALWALK_WORKERS > 1``."""
    n = workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# law registry


@dataclass(frozen=True)
class LawSpec:
    fn: Callable
    params: tuple[str, ...]
    lower: dict  # param -> lower end of the --<param>max range, int or callable of earlier params
    weighted: bool = False
    floats: tuple[str, ...] = ()
    columns: tuple[str, ...] = ("value",)
    help: str = ""


def _est(fn):
    return lambda *a: fn(*a).value


LAWS: dict[str, LawSpec] = {
    "endpoint": LawSpec(laws.endpoint_pmf, ("n", "c"), {"n": 0, "c": lambda P: -P["n"]}, help="P(X_n = c)"),
    "srw-max": LawSpec(laws.srw_max_pmf, ("n", "k"), {"n": 0, "k": 0}, help="P(S_n = k)"),
    "max-zero": LawSpec(laws.max_zero_prob, ("n",), {"n": 0}, help="P(S_n = 0)"),
    "max-ratio-product": LawSpec(laws.max_ratio_product, ("n", "k"), {"n": 0, "k": 0},
                                 help="P(S_n = k) / P(S_n = 0)"),
    "joint-max-endpoint": LawSpec(laws.joint_max_endpoint_pmf, ("p", "b", "a"),
                                  {"p": 0, "b": 0, "a": lambda P: -P["p"]}, help="P(S_p = b, X_p = a)"),
    "first-passage-max": LawSpec(laws.first_passage_max_law, ("a", "k"), {"a": 1, "k": lambda P: P["a"]},
                                 help="P_a(S_{T_0} = k)"),
    "next-zero": LawSpec(laws.cond_next_zero_max, ("s", "x"), {"s": 0, "x": lambda P: -P["s"]}, weighted=True,
                         help="E[phi(S_d) | S_p = s, X_p = x]"),
    "bilateral-next-zero": LawSpec(laws.bilateral_cond_next_zero, ("s_star", "x"),
                                   {"s_star": 0, "x": lambda P: -P["s_star"]}, weighted=True,
                                   help="E[phi(S*_d) | S* = s_star, X = x]"),
    "tau-max": LawSpec(laws.tau_max_pmf, ("a", "c"), {"a": 1, "c": 0}, help="P(S_{tau_a} = c)"),
    "tau-bimax": LawSpec(laws.tau_bimax_pmf, ("a", "k"), {"a": 2, "k": 0}, help="P(S*_{tau_a} = k)"),
    "gamma-hit": LawSpec(laws.gamma_hit_pmf, ("c", "m"), {"c": 1, "m": 1}, help="P(gamma_{T_c} = m)"),
    "uniform-pre-max": LawSpec(laws.uniform_pre_max_pmf, ("p", "k"), {"p": 1, "k": 0}, help="P(S_{g_{T_p}} = k)"),
    "q-joint": LawSpec(laws.q_joint_gamma_sg, ("a", "k"), {"a": 1, "k": 0}, weighted=True,
                       help="Q(gamma_g = a, S_g = k)"),
    "q-star-joint": LawSpec(laws.q_star_joint_gamma_sg, ("a", "k"), {"a": 1, "k": 0}, weighted=True,
                            help="Q*(gamma_g = a, S*_g = k)"),
    "q-star-premax": LawSpec(laws.q_star_premax_at_hit, ("p", "k"), {"p": 1, "k": 0}, weighted=True,
                             help="Q*(S*_{g_{T*_p}} = k)"),
    "q-max-exceed": LawSpec(laws.q_max_exceed, ("p",), {"p": 0}, weighted=True, help="Q(S_inf >= p)"),
    "corridor": LawSpec(laws.corridor_pmf, ("n", "a", "b", "c"),
                        {"n": 0, "a": 1, "b": 1, "c": lambda P: -P["b"] + 1}, help="P(S_n < a, I_n > -b, X_n = c)"),
    "corridor-trig": LawSpec(laws.corridor_pmf_trig, ("n", "a", "b", "c"),
                             {"n": 0, "a": 1, "b": 1, "c": lambda P: -P["b"] + 1}, help="spectral form of corridor"),
    "corridor-survival": LawSpec(laws.corridor_survival, ("n", "a", "b"), {"n": 0, "a": 1, "b": 1},
                                 help="P(S_n < a, I_n > -b)"),
    "corridor-asym": LawSpec(_est(laws.corridor_survival_asym), ("n", "a", "b"), {"n": 1, "a": 1, "b": 1},
                             help="leading term of the corridor survival"),
    "binomial-filter": LawSpec(laws.binomial_filter, ("n", "p", "u"), {"n": 0, "p": 1, "u": 0},
                               columns=("exact", "filter"), help="sum_k C(n, kp + u), both sides"),
    "cosh-pgf": LawSpec(laws.cosh_pgf, ("a", "b", "lam"), {}, floats=("lam",),
                        help="E[(cosh lam)^-(T_a ^ T_b)]"),
    "geometric-time-hit-pgf": LawSpec(laws.geometric_time_hit_pgf, ("alpha", "beta"), {"alpha": 1},
                                      floats=("beta",), help="E[(1 - beta)^T_alpha]"),
    "bilateral-gzero-asym": LawSpec(_est(laws.bilateral_gzero_asym), ("alpha", "p"), {"alpha": 1, "p": 1},
                                    help="alpha sqrt(2/(pi p))"),
    "max-zero-asym": LawSpec(_est(laws.max_zero_asym), ("p",), {"p": 1}, help="sqrt(2/(pi p))"),
    "tail": LawSpec(tail, ("x",), {"x": 0}, weighted=True, help="Phi(x) = sum_{k >= x} phi(k)"),
    "moment": LawSpec(moment, ("r",), {"r": 1}, weighted=True, help="sum_k k^r phi(k)"),
    "aux-h": LawSpec(aux_series_h, ("x",), {"x": 1}, weighted=True, help="auxiliary series h(x)"),
    "tail-ratio": LawSpec(laws.tail_ratio_identity, ("n",), {"n": 1}, weighted=True,
                          columns=("lhs", "tail_over_n", "complement_over_n"), help="tail-ratio identity"),
}


def _law_grid(spec: LawSpec, name: str, pairs: dict[str, str]) -> list[dict]:
    combos: list[dict] = [{}]
    for prm in spec.params:
        kind = float if prm in spec.floats else int
        nxt = []
        for P in combos:
            if prm in pairs:
                vals = parse_grid(pairs[prm], kind)
            elif prm + "max" in pairs and prm in spec.lower:
                lo = spec.lower[prm]
                lo = lo(P) if callable(lo) else lo
                hi = parse_grid(pairs[prm + "max"])[0]
                vals = list(range(lo, hi + 1))
            else:
                hint = f" (or --{prm}max)" if prm in spec.lower else ""
                raise UsageError(f"law {name} needs --{prm.replace('_', '-')}{hint}")
            nxt.extend({**P, prm: v} for v in vals)
        combos = nxt
    return combos


def cmd_law(opts, extra: list[str]) -> Table:
    pairs = parse_pairs(extra)
    name = opts.name or opts.name_opt
    if name is None:
        raise UsageError(f"law needs a name; choose from {', '.join(sorted(LAWS))}")
    spec = LAWS.get(name)
    if spec is None:
        raise UsageError(f"unknown law {name!r}; choose from {', '.join(sorted(LAWS))}")
    known = set(spec.params) | {p + "max" for p in spec.lower} | ({"weight"} if spec.weighted else set())
    for k in pairs:
        if k not in known:
            raise UsageError(f"unknown parameter --{k.replace('_', '-')} for law {name}")
    w = None
    if spec.weighted:
        if "weight" not in pairs:
            raise UsageError(f"law {name} needs --weight")
        w = parse_weight(pairs["weight"])
    rows, skipped = [], 0
    grid = _law_grid(spec, name, pairs)
    for P in grid:
        args = [P[p] for p in spec.params]
        try:
            v = spec.fn(w, *args) if spec.weighted else spec.fn(*args)
        except ValueError:
            skipped += 1
            continue
        vals = tuple(v) if isinstance(v, tuple) else (v,)
        rows.append((*args, *vals))
    if not rows:
        raise UsageError(f"no valid grid point for law {name}")
    meta = {"command": "law", "law": name, "description": spec.help, "skipped-invalid": skipped,
            **{k: v for k, v in sorted(pairs.items())}}
    return Table(f"law-{name}", (*spec.params, *spec.columns), rows, meta)


# ratio


FUNCTIONAL_LIMIT = {
    "max": lambda G: MartingaleFamily.one_sided_max(G.weight),
    "next-zero-max": lambda G: MartingaleFamily.next_zero_max(G.weight),
    "last-zero-max": lambda G: MartingaleFamily.last_zero_max(G.weight),
    "bilateral-last-zero": lambda G: MartingaleFamily.bilateral_last_zero(G.weight),
    "bilateral-indicator": lambda G: MartingaleFamily.barrier(G.a),
    "corridor": lambda G: MartingaleFamily.corridor(G.a, G.b),
}


def parse_event(text: str) -> tuple[int, ...] | None:
    """``all`` or a step string such as ``+-+`` (optionally prefixed ``path:``)."""
    text = text.strip()
    if text == "all":
        return None
    if text.startswith("path:"):
        text = text[5:]
    if not text or any(c not in "+-" for c in text):
        raise UsageError(f"event must be 'all' or a string of + and -, got {text!r}")
    return tuple(1 if c == "+" else -1 for c in text)


def _functional(opts) -> PenaltyFunctional:
    if opts.family is None:
        raise UsageError(f"ratio needs --family; choose from {', '.join(FUNCTIONAL_LIMIT)}")
    if opts.family not in FUNCTIONAL_LIMIT:
        raise UsageError(f"unknown family {opts.family!r}; choose from {', '.join(FUNCTIONAL_LIMIT)}")
    w = parse_weight(opts.weight) if opts.family in PenaltyFunctional.WEIGHTED else None
    try:
        return PenaltyFunctional(opts.family, w, opts.a, opts.b)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_ratio(opts, extra) -> Table:
    if extra:
        raise UsageError(f"unexpected arguments {extra}")
    if opts.sweep:
        return _ratio_sweep(opts)
    G = _functional(opts)
    steps = parse_event(opts.event)
    if steps is None:
        n, ev, state = opts.n, EventSpec.all(), None
    else:
        if opts.n is not None and opts.n != len(steps):
            raise UsageError(f"--n {opts.n} does not match the event length {len(steps)}")
        n, ev = len(steps), EventSpec.path(steps)
        state = Path(0, steps).final_state()
    n = n or 0
    if opts.pmax is None:
        raise UsageError("ratio needs --pmax")
    pmin = opts.pmin if opts.pmin is not None else max(n, 1)
    if not 0 <= n <= pmin <= opts.pmax:
        raise UsageError("need 0 <= n <= pmin <= pmax")
    fam = FUNCTIONAL_LIMIT[G.tag](G)
    limit = Fraction(1) if fam.is_exact else 1.0
    if state is not None:
        limit = evaluate(fam, state) / 2**n
    rows, ok = [], True
    for p in range(pmin, opts.pmax + 1, opts.pstep):
        try:
            r = penalized_ratio(n, ev, G, p)
        except ZeroDivisionError:
            rows.append((p, None, None, limit, None, None))
            continue
        if fam.is_exact is False:
            r = float(r)
        normed = normalized_expectation(n, ev, G, p) if G.tag in NORMALIZER else None
        if normed is not None:
            ok &= normed <= limit
        rows.append((p, r, normed, limit, limit - r, None if normed is None else limit - normed))
    meta = {"command": "ratio", "family": G.tag, "weight": G.weight, "a": G.a, "b": G.b,
            "event": ev.label, "n": n, "pmin": pmin, "pmax": opts.pmax, "pstep": opts.pstep,
            "limit": "E[1_event M_n]", "normalizer": NORMALIZER.get(G.tag, "none")}
    return Table("ratio", ("p", "ratio", "normalized", "limit", "gap", "normalized_gap"), rows, meta, ok)


def _ratio_sweep(opts) -> Table:
    weights = [parse_weight(opts.weight)] if opts.weight else None
    res = checks.ratio_convergence(weights=weights, nmax=opts.nmax)
    disc = checks.next_zero_discrepancy(weights=weights, nmax=opts.nmax)
    extra = {"ratio-discrepancy.csv": render(Table("ratio-discrepancy", disc.columns, disc.rows,
                                                   {"verdict-detail": "diff at last horizon <= first"},
                                                   disc.passed), opts.float, opts.digits)}
    meta = {"command": "ratio --sweep", **res.params, **res.summary, "discrepancy-verdict":
            "pass" if disc.passed else "fail", "discrepancy-failures": len(disc.failures())}
    return Table("ratio-sweep", res.columns, res.rows, meta, res.passed and disc.passed, extra)


# verify-martingale


def _verify_one(args):
    fam, depth, tol = args
    return verify(fam, depth, tol)


def _families(opts) -> list[MartingaleFamily]:
    if opts.family == "all":
        return list(all_default_families(opts.abmax))
    if opts.family is None:
        raise UsageError("verify-martingale needs --family")
    try:
        if opts.family in ("corridor", "barrier"):
            if opts.a is None or (opts.family == "corridor" and opts.b is None):
                raise UsageError(f"{opts.family} needs --a" + (" and --b" if opts.family == "corridor" else ""))
            return [MartingaleFamily(opts.family, a=opts.a, b=opts.b)]
        if opts.weight is None:
            raise UsageError(f"{opts.family} needs --weight")
        return [MartingaleFamily(opts.family, parse_weight(opts.weight))]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_verify(opts, extra) -> Table:
    if extra:
        raise UsageError(f"unexpected arguments {extra}")
    if opts.depth < 0:
        raise UsageError("--depth must be >= 0")
    fams = _families(opts)
    reports = pmap(_verify_one, [(f, opts.depth, opts.tol) for f in fams])
    rows = [(r.family, r.depth, r.states_checked, r.worst_diff, r.min_value, r.kernel_ok, len(r.failures),
             r.passed) for r in reports]
    ok = all(r.passed for r in reports)
    extra_files = {}
    bad = [r for r in reports if r.failures]
    if bad:
        extra_files["verify-failures.csv"] = "".join(r.to_csv() for r in bad)
    meta = {"command": "verify-martingale", "family": opts.family, "weight": opts.weight, "a": opts.a,
            "b": opts.b, "depth": opts.depth, "tol": opts.tol, "families": len(fams)}
    return Table("verify-martingale", ("family", "depth", "states", "worst_diff", "min_value", "kernel_ok",
                                       "failures", "passed"), rows, meta, ok, extra_files)


# identity and asym


def _generic_kwargs(fn: Callable, pairs: dict[str, str], what: str) -> dict:
    sig = inspect.signature(fn)
    kwargs = {}
    for k, raw in pairs.items():
        if k == "weight" and "weights" in sig.parameters:
            kwargs["weights"] = [parse_weight(raw)]
            continue
        if k not in sig.parameters:
            opts = ", ".join(f"--{p.replace('_', '-')}" for p in sig.parameters if p != "weights")
            raise UsageError(f"unknown parameter --{k.replace('_', '-')} for {what}; accepted: {opts}")
        default = sig.parameters[k].default
        try:
            if isinstance(default, bool):
                kwargs[k] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                kwargs[k] = int(raw)
            elif isinstance(default, float):
                kwargs[k] = float(raw)
            elif isinstance(default, Fraction):
                kwargs[k] = Fraction(raw)
            elif isinstance(default, tuple):
                kwargs[k] = tuple(parse_grid(raw))
            else:
                kwargs[k] = raw
        except ValueError:
            raise UsageError(f"bad value {raw!r} for --{k} of {what}") from None
    return kwargs


def cmd_identity(opts, extra) -> Table:
    pairs = parse_pairs(extra)
    name = opts.name or pairs.pop("name", None)
    if name == "adjudication":
        depth = int(pairs.pop("depth", 25))
        if pairs:
            raise UsageError(f"unknown parameters for adjudication: {sorted(pairs)}")
        items = checks.adjudicate_all(depth)
        return Table("identity-adjudication", checks.Adjudication.COLUMNS, [a.row() for a in items],
                     {"command": "identity", "name": name, "depth": depth}, all(a.consistent for a in items))
    if name not in checks.IDENTITIES:
        raise UsageError(f"identity needs --name; choose from adjudication, {', '.join(sorted(checks.IDENTITIES))}")
    kwargs = _generic_kwargs(checks.IDENTITIES[name], pairs, f"identity {name}")
    res = checks.run_identity(name, **kwargs)
    meta = {"command": "identity", "name": name, **res.params, **res.summary, "failures": len(res.failures())}
    return Table(f"identity-{name}", res.columns, res.rows, meta, res.passed)


def cmd_asym(opts, extra) -> Table:
    pairs = parse_pairs(extra)
    name = opts.name or pairs.pop("name", None)
    if name not in checks.ASYMPTOTICS:
        raise UsageError(f"asym needs --name; choose from {', '.join(sorted(checks.ASYMPTOTICS))}")
    kwargs = _generic_kwargs(checks.ASYMPTOTICS[name], pairs, f"asym {name}")
    res = checks.run_asymptotic(name, **kwargs)
    meta = {"command": "asym", "name": name, **res.params, **res.summary}
    return Table(f"asym-{name}", res.columns, res.rows, meta, res.passed)


# sample and simtest


def _kernel(opts) -> qsim.ChainKernel:
    k = opts.kernel
    if k == "bessel3":
        return qsim.ChainKernel.bessel3()
    if k == "bessel3-star":
        return qsim.ChainKernel.bessel3_star()
    if k == "corridor":
        if opts.a is None or opts.b is None:
            raise UsageError("corridor kernel needs --a and --b")
        return qsim.ChainKernel.corridor(opts.a, opts.b)
    if k == "h":
        return qsim.ChainKernel.from_family(_families(opts)[0])
    raise UsageError("--kernel must be one of bessel3, bessel3-star, corridor, h")


def cmd_sample(opts, extra) -> Table:
    if extra:
        raise UsageError(f"unexpected arguments {extra}")
    if opts.steps < 0:
        raise UsageError("--steps must be >= 0")
    kern = _kernel(opts)
    start = opts.start if opts.start is not None else (1 if opts.kernel == "bessel3-star" else 0)
    try:
        sp = qsim.sample_chain(kern, start, opts.steps, opts.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = list(enumerate(sp.path.positions))
    meta = {"command": "sample", "kernel": kern.name, "support": kern.support, "start": start,
            "steps": opts.steps, "seed": opts.seed, "generator": sp.generator, "absorbed": sp.absorbed}
    return Table("sample", ("t", "x"), rows, meta)


SIMTESTS = ("sg-density", "joint", "sign-split", "post-g", "uniform-pre-max", "kernel-frequency",
            "transience", "late-zero-trend")


def _simtest(opts) -> qsim.SimReport:
    t = opts.test
    w = parse_weight(opts.weight or "uniform:0..3")
    fam = opts.family or "last-zero-max"
    H, N, seed = opts.horizon, opts.n_samples, opts.seed
    if N < 1 or H < 1:
        raise UsageError("--n-samples and --horizon must be >= 1")
    try:
        if t == "sg-density":
            return qsim.estimate_sg_density(fam, w, H, N, seed, tv_tol=opts.tv_tol)
        if t == "joint":
            return qsim.estimate_joint_gamma_sg(fam, w, H, N, seed, alpha=opts.alpha,
                                                exponent_shift=opts.exponent_shift, estimator=opts.estimator)
        if t == "sign-split":
            return qsim.estimate_sign_split(fam, w, H, N, seed, n_sigma=opts.n_sigma)
        if t == "post-g":
            return qsim.post_g_transition_test(fam, w, H, N, seed, n_sigma=opts.n_sigma)
        if t == "uniform-pre-max":
            return qsim.uniform_pre_max_test(opts.p, N, seed, opts.measure, w, alpha=opts.alpha, cap=H)
        if t == "kernel-frequency":
            kern = _kernel(opts)
            lo, hi = opts.lo, opts.hi
            if lo is None or hi is None:
                raise UsageError("kernel-frequency needs --lo and --hi")
            start = opts.start if opts.start is not None else lo
            return qsim.kernel_frequency_test(kern, start, H, N, seed, lo, hi, n_sigma=opts.n_sigma)
        if t == "transience":
            return qsim.bessel_transience(N, H, seed)
        if t == "late-zero-trend":
            hs = parse_grid(opts.horizons) if opts.horizons else [H // 4, H // 2, H]
            return qsim.trend_last_zero(fam, w, hs, N, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    raise UsageError(f"--test must be one of {', '.join(SIMTESTS)}")


def cmd_simtest(opts, extra) -> Table:
    if extra:
        raise UsageError(f"unexpected arguments {extra}")
    rep = _simtest(opts)
    keys = sorted(set(rep.empirical) | set(rep.reference), key=str)
    rows = [(k, rep.empirical.get(k, 0.0), rep.reference.get(k, None)) for k in keys]
    scalars = {k: v for k, v in rep.extra.items() if isinstance(v, (int, float, np.integer, np.floating))}
    meta = {"command": "simtest", "test": opts.test, "report": rep.name, "seed": rep.seed,
            "n-samples": rep.n_samples, "horizon": rep.horizon, "generator": rep.generator,
            "tv": rep.tv, "chi2": rep.chi2, "chi2-pvalue": rep.chi2_pvalue, "dof": rep.dof,
            **{f"param-{k}": v for k, v in rep.params.items()}, **scalars,
            **{f"note-{i}": n for i, n in enumerate(rep.notes)}}
    name = f"simtest-{opts.test}"
    return Table(name, ("outcome", "empirical", "reference"), rows, meta, bool(rep.verdict),
                 {f"{name}.json": rep.to_json() + "\n"})


# parser


COMMANDS = {
    "law": cmd_law,
    "ratio": cmd_ratio,
    "verify-martingale": cmd_verify,
    "identity": cmd_identity,
    "sample": cmd_sample,
    "simtest": cmd_simtest,
    "asym": cmd_asym,
}
GENERIC = ("law", "identity", "asym")  # subcommands taking free-form --param value pairs


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", help="key = value file mirroring the long flags")
    common.add_argument("--out", help="directory for output files (default: stdout)")
    common.add_argument("--float", action="store_true", help="write decimals instead of num/den")
    common.add_argument("--digits", type=int, default=DEFAULT_DIGITS, help="significant digits with --float")

    parser = argparse.ArgumentParser(prog="penalwalk", description="Penalisations of the simple random walk.",
                                     allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"penalwalk {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("law", parents=[common], allow_abbrev=False, help="evaluate a closed-form law over a grid")
    p.add_argument("name", nargs="?", help=f"one of: {', '.join(sorted(LAWS))}")
    p.add_argument("--name", dest="name_opt", help="alternative to the positional name")
    p.epilog = "grid parameters: --<param> VALUE|LO..HI|A,B,C or --<param>max HI"

    p = sub.add_parser("ratio", parents=[common], allow_abbrev=False, help="penalised ratio convergence table")
    p.add_argument("--family", help=", ".join(FUNCTIONAL_LIMIT))
    p.add_argument("--weight")
    p.add_argument("--a", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--event", default="all", help="'all' or a step string such as +-+")
    p.add_argument("--n", type=int)
    p.add_argument("--pmin", type=int)
    p.add_argument("--pmax", type=int)
    p.add_argument("--pstep", type=int, default=1)
    p.add_argument("--sweep", action="store_true", help="every atom of F_n, n <= nmax, default weights")
    p.add_argument("--nmax", type=int, default=4)

    p = sub.add_parser("verify-martingale", parents=[common], allow_abbrev=False, help="exhaustive one-step martingale check")
    p.add_argument("--family", help="one-sided-max, next-zero-max, last-zero-max, bilateral-last-zero, "
                                    "corridor, barrier or all")
    p.add_argument("--weight")
    p.add_argument("--a", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--depth", type=int, default=25)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--abmax", type=int, default=6, help="barrier range for --family all")

    for name, helptext in (("identity", "cross-check a closed form against an oracle"),
                           ("asym", "asymptotic ratio table")):
        p = sub.add_parser(name, parents=[common], allow_abbrev=False, help=helptext)
        p.add_argument("--name")

    p = sub.add_parser("sample", parents=[common], allow_abbrev=False, help="sample one chain path")
    p.add_argument("--kernel", default="bessel3", help="bessel3, bessel3-star, corridor or h")
    p.add_argument("--family")
    p.add_argument("--weight")
    p.add_argument("--a", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--start", type=int)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simtest", parents=[common], allow_abbrev=False, help="run a simulation test and report")
    p.add_argument("--test", required=False, help=", ".join(SIMTESTS))
    p.add_argument("--family")
    p.add_argument("--weight")
    p.add_argument("--kernel", default="bessel3")
    p.add_argument("--a", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--start", type=int)
    p.add_argument("--lo", type=int)
    p.add_argument("--hi", type=int)
    p.add_argument("--horizon", type=int, default=10_000)
    p.add_argument("--horizons")
    p.add_argument("--n-samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--p", type=int, default=5)
    p.add_argument("--measure", default="P", choices=("P", "Q*"))
    p.add_argument("--tv-tol", type=float, default=0.02)
    p.add_argument("--alpha", type=float, default=1e-3)
    p.add_argument("--n-sigma", type=float, default=4.0)
    p.add_argument("--exponent-shift", type=int, default=1)
    p.add_argument("--estimator", default="completed", choices=("completed", "raw"),
                   help="joint test: conditional law given F_H (completed) or raw frequencies")
    return parser


def _split_generic(parser, command: str, tokens: list[str]) -> tuple[list[str], list[str]]:
    """Separate the subcommand's own flags from free-form ``--param value`` pairs."""
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {opt: a for a in sub._actions for opt in a.option_strings}
    keep, extra = [], []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        flag = tok.split("=", 1)[0]
        takes_value = "=" not in tok and i + 1 < len(tokens)
        if flag in actions:
            keep.append(tok)
            if takes_value and actions[flag].nargs != 0:
                keep.append(tokens[i + 1])
                i += 1
        elif tok.startswith("--"):
            extra.append(tok)
            if takes_value:
                extra.append(tokens[i + 1])
                i += 1
        else:
            keep.append(tok)
        i += 1
    return keep, extra


def read_config(path: str) -> list[tuple[str, str, int]]:
    try:
        text = FsPath(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise UsageError(f"{path}:{lineno}: empty key")
        out.append((key.replace("_", "-"), val, lineno))
    return out


def _config_tokens(parser, command: str, entries, path: str) -> list[str]:
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {opt: a for a in sub._actions for opt in a.option_strings}
    tokens = []
    for key, val, lineno in entries:
        if key in ("command", "config"):
            continue
        flag = "--" + key
        act = actions.get(flag)
        if act is None:
            if command in GENERIC:
                tokens += [flag, val]
                continue
            raise UsageError(f"{path}:{lineno}: unknown field {key!r} for {command}")
        if act.nargs == 0:
            if val.lower() in ("true", "yes", "1"):
                tokens.append(flag)
            elif val.lower() not in ("false", "no", "0"):
                raise UsageError(f"{path}:{lineno}: field {key!r} expects true or false, got {val!r}")
            continue
        if act.type is not None:
            try:
                act.type(val)
            except (TypeError, ValueError):
                raise UsageError(f"{path}:{lineno}: field {key!r}: invalid {act.type.__name__} value {val!r}") from None
        if act.choices is not None and val not in act.choices:
            raise UsageError(f"{path}:{lineno}: field {key!r} must be one of {', '.join(act.choices)}")
        tokens += [flag, val]
    return tokens


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
        pre.add_argument("--config")
        known, rest = pre.parse_known_args(argv)
        entries = read_config(known.config) if known.config else []
        command = next((t for t in rest if t in COMMANDS), None)
        if command is None and rest and not rest[0].startswith("-"):
            raise UsageError(f"unknown command {rest[0]!r}; choose from {', '.join(COMMANDS)}")
        if command is None:
            from_file = [v for k, v, _ in entries if k == "command"]
            if not from_file:
                if any(t in ("-h", "--help", "--version") for t in rest):
                    parser.parse_args(rest)
                raise UsageError(f"missing command; choose from {', '.join(COMMANDS)}")
            command = from_file[-1]
            if command not in COMMANDS:
                raise UsageError(f"unknown command {command!r} in {known.config}")
            rest = [command] + rest
        i = rest.index(command)
        before, after = rest[:i], rest[i + 1:]
        if before:
            raise UsageError(f"unexpected arguments before the command: {before}")
        tokens = _config_tokens(parser, command, entries, known.config) if entries else []
        final = [command] + tokens + after
        if command in GENERIC:
            keep, extra = _split_generic(parser, command, final[1:])
            opts = parser.parse_args([command] + keep)
        else:
            opts, extra = parser.parse_args(final), []
        opts.config = known.config
        if opts.digits < 1 or opts.digits > 40:
            raise UsageError("--digits must lie in 1..40")
        table = COMMANDS[command](opts, extra)
        emit(table, opts)
        return EXIT_OK if table.passed else EXIT_FAIL
    except UsageError as exc:
        print(f"penalwalk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE


def main(argv: list[str] | None = None) -> None:
    sys.exit(run(argv))
