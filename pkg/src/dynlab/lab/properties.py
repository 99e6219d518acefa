"""Monte-Carlo estimators for the seven phase/epoch properties and the
coloring checks.

High-probability statements are tested as finite-n frequencies against
thresholds fixed here, before any run.  Every report keeps the raw
frequencies so a threshold can be revisited without rerunning.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import DEFAULT_VARIANT, Configuration, step_agent, step_aggregate
from ..instrumentation import (DEFAULT_DELTA, coloring_begin_phase, max_light_excursion, not_super_weak,
                               phase_length)
from ..rng import RandomSource
from .scaling import fit_scaling

PROPERTIES = ("p1", "p2", "p3", "p4", "p5", "p6", "p7")


@dataclass
class PropertyReport:
    property: str
    passed: bool
    metrics: dict
    thresholds: dict
    params: dict
    seed: int
    quick: bool = False
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _se(p: float, m: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / m)


def _spread(n: int, k: int, fixed: dict[int, int]) -> Configuration:
    """Valid counts with ``fixed`` opinion counts; the rest split evenly."""
    valid = np.zeros(k, dtype=np.int64)
    for o, c in fixed.items():
        valid[o - 1] = c
    free = [i for i in range(k) if (i + 1) not in fixed]
    rest = n - int(valid.sum())
    if rest < 0 or (rest and not free):
        raise ValueError("fixed counts do not fit in n")
    base, rem = divmod(rest, len(free)) if free else (0, 0)
    for j, i in enumerate(free):
        valid[i] = base + (1 if j < rem else 0)
    return Configuration.from_valid(valid)


def _max_gap(config: Configuration, i: int = 1, j: int = 2) -> float:
    a, b = int(config.counts[i - 1]), int(config.counts[j - 1])
    if a == 0 or b == 0:
        return math.inf
    return max(a / b - 1, b / a - 1)


def _run_rounds(config: Configuration, rounds: int, src: RandomSource) -> Configuration:
    for _ in range(rounds):
        config = step_aggregate(config, DEFAULT_VARIANT, src)
    return config


# -- P1 ---------------------------------------------------------------------

def p1_super_weak_and_weak(n=10**5, k=10, trials=200, horizon_factor=50.0, seed=0,
                           max_violation=0.05, quick=False) -> PropertyReport:
    """Seed a super-weak and a weak opinion; count trials where either escapes."""
    if k < 4:
        raise ValueError("P1 needs k >= 4 (one super-weak, one weak, >= 2 others)")
    sw = round(0.5 * n / (10 * k))          # 0.5/(10k)
    wk = round(1.5 * n / (10 * k))          # 1.5/(10k): above the super-weak cut
    start = _spread(n, k, {1: sw, 2: wk})
    if 5 * wk >= int(start.valid_counts.max()) or 10 * k * wk <= n:
        raise ValueError("parameters do not make opinion 2 weak at the start")
    horizon = math.ceil(horizon_factor * k * math.log(n))
    sw_bad = wk_bad = 0
    rounds_used = []
    for t in range(trials):
        src = RandomSource(seed, t)
        c = start
        esc_sw = esc_wk = False
        for _ in range(horizon):
            c = step_aggregate(c, DEFAULT_VARIANT, src)
            c1, c2 = int(c.counts[0]), int(c.counts[1])
            top = int(c.valid_counts.max())
            esc_sw |= 10 * k * c1 > n
            esc_wk |= 5 * c2 >= top and 10 * k * c2 > n
            # extinct opinions stay extinct; nothing more can happen to them
            if (c1 == 0 and c2 == 0) or c.is_consensus():
                break
        rounds_used.append(c.round)
        sw_bad += esc_sw
        wk_bad += esc_wk
    f_sw, f_wk = sw_bad / trials, wk_bad / trials
    return PropertyReport(
        property="p1",
        passed=f_sw <= max_violation and f_wk <= max_violation,
        metrics={"super_weak_violation_freq": f_sw, "super_weak_violation_se": _se(f_sw, trials),
                 "weak_violation_freq": f_wk, "weak_violation_se": _se(f_wk, trials),
                 "median_rounds_observed": float(np.median(rounds_used))},
        thresholds={"max_violation_freq": max_violation},
        params={"n": n, "k": k, "trials": trials, "horizon": horizon,
                "super_weak_start": sw, "weak_start": wk},
        seed=seed, quick=quick)


# -- P2 / P3 / P5: one phase from a prescribed gap ----------------------------

def _gap_start(n: int, k: int, g: float) -> Configuration:
    base = n // k
    return _spread(n, k, {1: round(base * (1 + g)), 2: base})


def _phase_growth(n, k, g, trials, seed, delta):
    """Per-trial (start_gap, end_gap) over one phase for opinions 1 and 2."""
    start = _gap_start(n, k, g)
    g0 = start.counts[0] / start.counts[1] - 1
    rounds = phase_length(k, delta)
    ends = np.empty(trials)
    for t in range(trials):
        c = _run_rounds(start, rounds, RandomSource(seed, t))
        a, b = int(c.counts[0]), int(c.counts[1])
        ends[t] = a / b - 1 if b else math.inf
    return g0, ends, start


def p2_symmetry_breaking(n=10**5, k=20, trials=400, c1=1.0, delta=DEFAULT_DELTA, seed=0,
                         min_success=0.02, quick=False) -> PropertyReport:
    """From an exact tie, how often does one phase open a gap of C1/sqrt(n/kappa)?"""
    start = Configuration.uniform(n, k)
    if start.counts[0] != start.counts[1]:
        raise ValueError("P2 needs an exact tie between opinions 1 and 2; pick n divisible by k")
    target = c1 / math.sqrt(n / k)
    rounds = phase_length(k, delta)
    gaps = np.array([_max_gap(_run_rounds(start, rounds, RandomSource(seed, t)))
                     for t in range(trials)])
    freq = float(np.mean(gaps >= target))
    by_c1 = {str(c): float(np.mean(gaps >= c / math.sqrt(n / k))) for c in (0.5, 1.0, 2.0)}
    return PropertyReport(
        property="p2", passed=freq >= min_success,
        metrics={"success_freq": freq, "success_se": _se(freq, trials),
                 "success_freq_by_c1": by_c1, "median_gap": float(np.median(gaps))},
        thresholds={"min_success_freq": min_success, "gap_target": target},
        params={"n": n, "k": k, "kappa": k, "trials": trials, "c1": c1, "delta": delta,
                "phase_rounds": rounds},
        seed=seed, quick=quick)


def p3_gap_growth(n=10**5, k=20, trials=400, xs=(2.0, 4.0, 8.0, 16.0), delta=DEFAULT_DELTA,
                  seed=0, min_success_at_max_x=0.95, quick=False) -> PropertyReport:
    """Frequency of g_new >= (1 + delta/100) g over one phase, for g = x/sqrt(n/kappa)."""
    if any(x <= 0 for x in xs):
        raise ValueError("P3 needs x > 0 (a strictly positive starting gap)")
    scale = math.sqrt(n / k)
    freqs, ses, c4 = {}, {}, {}
    for idx, x in enumerate(sorted(xs)):
        g0, ends, _ = _phase_growth(n, k, x / scale, trials, seed * 1000 + idx, delta)
        if g0 <= 0:
            raise ValueError(f"x={x} rounds to a non-positive gap at n={n}")
        f = float(np.mean(ends >= (1 + delta / 100) * g0))
        freqs[str(x)], ses[str(x)] = f, _se(f, trials)
        c4[str(x)] = -math.log(max(1 - f, 1 / trials)) / x**2
    seq = [freqs[str(x)] for x in sorted(xs)]
    sev = [ses[str(x)] for x in sorted(xs)]
    monotone = all(b >= a - 2 * math.hypot(sa, sb) for a, b, sa, sb in zip(seq, seq[1:], sev, sev[1:]))
    return PropertyReport(
        property="p3", passed=monotone and seq[-1] >= min_success_at_max_x,
        metrics={"success_freq_by_x": freqs, "success_se_by_x": ses,
                 "implied_c4_by_x": c4, "monotone_in_x": monotone},
        thresholds={"min_success_at_max_x": min_success_at_max_x, "growth_factor": 1 + delta / 100},
        params={"n": n, "k": k, "kappa": k, "trials": trials, "xs": list(xs), "delta": delta,
                "phase_rounds": phase_length(k, delta)},
        seed=seed, quick=quick)


def p5_gap_growth_whp(n=10**5, k=20, trials=400, c5=6.0, delta=DEFAULT_DELTA, seed=0,
                      min_success=0.99, quick=False) -> PropertyReport:
    """Growth by (1 + delta/100) per phase once g >= C5 sqrt(ln n)/sqrt(n/kappa)."""
    g = c5 * math.sqrt(math.log(n)) / math.sqrt(n / k)
    if g <= 0:
        raise ValueError("P5 requires a strictly positive starting gap (g_ij = 0 is outside its premise)")
    g0, ends, start = _phase_growth(n, k, g, trials, seed, delta)
    if g0 <= 0:
        raise ValueError("P5 requires a strictly positive starting gap (g_ij = 0 is outside its premise)")
    if 5 * int(start.counts[1]) < int(start.valid_counts.max()):
        raise ValueError("P5 premise: both opinions must be strong at the phase start")
    f = float(np.mean(ends >= (1 + delta / 100) * g0))
    return PropertyReport(
        property="p5", passed=f >= min_success,
        metrics={"success_freq": f, "success_se": _se(f, trials), "start_gap": g0,
                 "median_end_gap": float(np.median(ends))},
        thresholds={"min_success_freq": min_success, "growth_factor": 1 + delta / 100},
        params={"n": n, "k": k, "kappa": k, "trials": trials, "c5": c5, "delta": delta,
                "phase_rounds": phase_length(k, delta)},
        seed=seed, quick=quick)


def check_p5_premise(g: float) -> None:
    """Raise unless the starting gap lies in P5's premise (strictly positive)."""
    if not g > 0:
        raise ValueError("P5 requires a strictly positive starting gap (g_ij = 0 is outside its premise)")


# -- P4 ---------------------------------------------------------------------

def p4_gap_emergence(n=10**5, k=20, trials=200, c5=2.0, horizon_factor=20.0,
                     delta=DEFAULT_DELTA, seed=0, min_reach=0.95, quick=False) -> PropertyReport:
    """Phases from an exact tie until max(g12, g21) >= C5 sqrt(ln n)/sqrt(n/kappa)."""
    start = Configuration.uniform(n, k)
    target = c5 * math.sqrt(math.log(n)) / math.sqrt(n / k)
    plen = phase_length(k, delta)
    horizon = math.ceil(horizon_factor * math.log(n))
    phases = []
    for t in range(trials):
        src = RandomSource(seed, t)
        c = start
        hit = None
        for ph in range(1, horizon + 1):
            c = _run_rounds(c, plen, src)
            if _max_gap(c) >= target:
                hit = ph
                break
        phases.append(hit)
    reached = [p for p in phases if p is not None]
    f = len(reached) / trials
    med = float(np.median(reached)) if reached else math.inf
    return PropertyReport(
        property="p4", passed=f >= min_reach,
        metrics={"reach_freq": f, "median_phases": med,
                 "median_phases_over_ln_n": med / math.log(n)},
        thresholds={"min_reach_freq": min_reach, "horizon_phases": horizon, "gap_target": target},
        params={"n": n, "k": k, "kappa": k, "trials": trials, "c5": c5, "delta": delta,
                "phase_rounds": plen},
        seed=seed, quick=quick)


# -- P6 / P7 ----------------------------------------------------------------

def _epoch_one(n, k, trials, seed, horizon):
    """(rounds to end-of-time, extra rounds to <= floor(5k/6) not-super-weak) per trial."""
    kappa = k
    goal = math.floor(5 * kappa / 6)
    out = []
    for t in range(trials):
        src = RandomSource(seed, t)
        c = Configuration.uniform(n, k)
        eot = None
        done = None
        while c.round < horizon:
            c = step_aggregate(c, DEFAULT_VARIANT, src)
            # the end-of-time threshold is the epoch-1 one, regardless of clock advances
            if eot is None and 2 * kappa * int(c.valid_counts.max()) >= 3 * n:
                eot = c.round
            if eot is not None and not_super_weak(c) <= goal:
                done = c.round - eot
                break
        out.append((eot, done))
    return out


def _epoch_grid(ns, ks, trials, seed, horizon_factor):
    rows = []
    for a, n in enumerate(ns):
        for b, k in enumerate(ks):
            horizon = math.ceil(horizon_factor * k * math.log(n))
            res = _epoch_one(n, k, trials, seed + 7919 * (a * len(ks) + b), horizon)
            rows.append((n, k, horizon, res))
    return rows


def p6_end_of_time(ns=(10**5,), ks=(4, 8, 16), trials=50, horizon_factor=20.0, seed=0,
                   min_reach=0.95, quick=False) -> PropertyReport:
    """Rounds from an epoch start (uniform, kappa = k) to p_max >= 1.5/kappa."""
    rows = _epoch_grid(ns, ks, trials, seed, horizon_factor)
    points, per, ok = [], {}, True
    for n, k, horizon, res in rows:
        hits = [e for e, _ in res if e is not None]
        f = len(hits) / len(res)
        ok &= f >= min_reach
        med = float(np.median(hits)) if hits else math.inf
        per[f"n={n},k={k}"] = {"reach_freq": f, "median_rounds": med,
                               "median_over_kappa_ln_n": med / (k * math.log(n)),
                               "horizon": horizon}
        points.append((n, k, med))
    metrics = {"points": per}
    if len(points) >= 2 and all(math.isfinite(p[2]) for p in points):
        metrics["fit_kappa_ln_n"] = fit_scaling(points, min_points=2).to_dict()
    return PropertyReport(
        property="p6", passed=ok, metrics=metrics,
        thresholds={"min_reach_freq": min_reach, "horizon": f"{horizon_factor}*kappa*ln(n)"},
        params={"ns": list(ns), "ks": list(ks), "trials": trials}, seed=seed, quick=quick)


def p7_epoch_exit(ns=(10**5,), ks=(4, 8, 16), trials=50, horizon_factor=20.0, seed=0,
                  min_reach=0.95, quick=False) -> PropertyReport:
    """Rounds from end-of-time until at most floor(5 kappa/6) opinions are not super-weak.

    Both kappa ln k and kappa ln n are reported as regressors.
    """
    rows = _epoch_grid(ns, ks, trials, seed, horizon_factor)
    points, per, ok = [], {}, True
    for n, k, horizon, res in rows:
        extra = [d for e, d in res if e is not None and d is not None]
        f = len(extra) / len(res)
        ok &= f >= min_reach
        med = float(np.median(extra)) if extra else math.inf
        per[f"n={n},k={k}"] = {"reach_freq": f, "median_rounds": med,
                               "median_over_kappa_ln_k": med / (k * math.log(max(k, 2))),
                               "median_over_kappa_ln_n": med / (k * math.log(n))}
        points.append((n, k, med))
    metrics = {"points": per}
    if len(points) >= 2 and all(math.isfinite(p[2]) for p in points):
        metrics["fit_kappa_ln_k"] = fit_scaling(points, "k*ln(k)", min_points=2).to_dict()
        metrics["fit_kappa_ln_n"] = fit_scaling(points, "k*ln(n)", min_points=2).to_dict()
    return PropertyReport(
        property="p7", passed=ok, metrics=metrics,
        thresholds={"min_reach_freq": min_reach, "horizon": f"{horizon_factor}*kappa*ln(n)"},
        params={"ns": list(ns), "ks": list(ks), "trials": trials}, seed=seed, quick=quick)


_SUITE = {
    "p1": p1_super_weak_and_weak,
    "p2": p2_symmetry_breaking,
    "p3": p3_gap_growth,
    "p4": p4_gap_emergence,
    "p5": p5_gap_growth_whp,
    "p6": p6_end_of_time,
    "p7": p7_epoch_exit,
}

_QUICK = {
    "p1": {"n": 10**4, "trials": 40},
    "p2": {"n": 10**4, "trials": 200},
    "p3": {"n": 10**4, "trials": 100},
    "p4": {"n": 10**4, "trials": 40},
    "p5": {"n": 10**4, "trials": 100},
    "p6": {"ns": (10**4,), "trials": 20},
    "p7": {"ns": (10**4,), "trials": 20},
}


def property_suite(property_id: str, quick: bool = False, seed: int = 0, **overrides) -> PropertyReport:
    """Run one property estimator; ``quick`` shrinks n and trial counts."""
    pid = property_id.lower()
    if pid not in _SUITE:
        raise ValueError(f"unknown property {property_id!r}; expected one of {', '.join(PROPERTIES)}")
    kw = dict(_QUICK[pid]) if quick else {}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return _SUITE[pid](seed=seed, quick=quick, **kw)


# -- coloring checks --------------------------------------------------------

def light_variance(n=10**5, kappa=10, trials=10**4, seed=0, opinion=1) -> dict:
    """Light charge (node units) of one strong opinion after the first round of a phase.

    The start is an exact or near tie among ``kappa`` opinions.
    """
    start = Configuration.uniform(n, kappa).with_nodes()
    vals = np.empty(trials)
    for t in range(trials):
        src = RandomSource(seed, t)
        ledger = coloring_begin_phase(start, [opinion])
        _, moves = step_agent(start, DEFAULT_VARIANT, src)
        ledger.observe_round(moves)
        vals[t] = float(ledger.light_nodes(opinion))
    var = float(vals.var(ddof=1))
    return {"variance": var,
            "variance_se": var * math.sqrt(2.0 / (trials - 1)),
            "bound": n * (1.5 / kappa) ** 2,
            "mean": float(vals.mean()),
            "trials": trials}


def sample_phase(n: int, kappa: int, delta: float, src: RandomSource, opinion: int = 1,
                 start: Configuration | None = None):
    """Run one coloring-tracked phase from a tie; return the finished ledger and config."""
    c = (start or Configuration.uniform(n, kappa)).with_nodes()
    ledger = coloring_begin_phase(c, [opinion])
    for _ in range(phase_length(kappa, delta)):
        c, moves = step_agent(c, DEFAULT_VARIANT, src)
        ledger.observe_round(moves, rng=src)
    return ledger, c


def extra_light_minority(n=10**5, kappa=10, delta=DEFAULT_DELTA, phases=500, seed=0) -> dict:
    """How often the phase-end extra-light count is below the phase-end |light| count."""
    wins = 0
    extra_tot = light_tot = 0.0
    for t in range(phases):
        ledger, _ = sample_phase(n, kappa, delta, RandomSource(seed, t))
        extra = ledger.extra_light_count(1)
        light = abs(float(ledger.light_nodes(1)))
        wins += extra < light
        extra_tot += extra
        light_tot += light
    return {"minority_freq": wins / phases, "phases": phases,
            "phase_rounds": phase_length(kappa, delta),
            "mean_extra": extra_tot / phases, "mean_abs_light": light_tot / phases}


def excursion_check(n=10**5, kappa=40, delta=DEFAULT_DELTA, phases=300, seed=0) -> dict:
    """Max light excursion against 3 C sqrt(n delta kappa) (1.5/kappa).

    C is fitted as the 95th percentile of |phase-end light| in units of
    sqrt(n delta kappa) (1.5/kappa).
    """
    unit = math.sqrt(n * delta * kappa) * 1.5 / kappa
    ends, peaks = np.empty(phases), np.empty(phases)
    for t in range(phases):
        ledger, _ = sample_phase(n, kappa, delta, RandomSource(seed, t))
        ends[t] = abs(ledger.light_history(1)[-1])
        peaks[t] = max_light_excursion(ledger, 1)
    c_fit = float(np.quantile(ends, 0.95) / unit)
    bound = 3 * c_fit * unit
    return {"c_fit": c_fit, "bound": bound, "within_freq": float(np.mean(peaks <= bound)),
            "phases": phases, "phase_rounds": phase_length(kappa, delta)}
