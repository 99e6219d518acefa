"""Acceptance criteria 1-11.  Each test prints one PASS/FAIL line; the
terminal summary repeats them in order."""
import contextlib
import io
import itertools
import json
import math
from dataclasses import replace

import numpy as np

from dynlab import adversary as adv
from dynlab.cli import main
from dynlab.core import (Configuration, Protocol, ProtocolVariant, mean_field_step, step_agent,
                         step_aggregate)
from dynlab.instrumentation import EpochPhaseState, OpinionClass, advance_clock, classify, coloring_begin_phase
from dynlab.lab.experiment import ExperimentSpec, median_rounds, run_trials
from dynlab.lab.oracles import exact_round_expectation, galton_watson_tail, tail_shape_check
from dynlab.lab.properties import extra_light_minority, light_variance, property_suite
from dynlab.lab.scaling import KLogNRegressor
from dynlab.rng import RandomSource


def _fit(rows, predictor):
    X = np.array([r[:2] for r in rows], dtype=float)
    y = np.array([r[2] for r in rows], dtype=float)
    return KLogNRegressor(predictor=predictor).fit(X, y).result()


def test_c01_drift_law_exact(verdict):
    worst, checked = 0.0, 0
    for k in (1, 2, 3):
        for n in range(1, 6):
            for counts in itertools.product(range(n + 1), repeat=k):
                if sum(counts) != n:
                    continue
                c = Configuration.from_valid(counts)
                got = exact_round_expectation(c, method="enumerate")
                closed = mean_field_step(c.fractions) * n
                worst = max(worst, max(abs(float(g) - e) for g, e in zip(got, closed)))
                checked += 1
    ok = verdict(1, "drift law", worst <= 1e-12, f"{checked} configurations, max error {worst:.2e}")
    assert ok


def test_c02_mode_equivalence(verdict):
    m = 10**5
    c = Configuration.from_valid([6000, 4000])
    agent_c = c.with_nodes()
    sa, sb = RandomSource(1), RandomSource(2)
    a = np.array([step_agent(agent_c, rng=sa, record=False)[0].counts[:2] for _ in range(m)], float)
    b = np.array([step_aggregate(c, rng=sb).counts[:2] for _ in range(m)], float)
    se = np.sqrt(a.var(axis=0, ddof=1) / m + b.var(axis=0, ddof=1) / m)
    z = np.abs(a.mean(axis=0) - b.mean(axis=0)) / se
    rel = np.abs(a.var(axis=0, ddof=1) / b.var(axis=0, ddof=1) - 1)
    ok = verdict(2, "mode equivalence", bool(np.all(z <= 4) and np.all(rel <= 0.10)),
                 f"mean z={np.round(z, 2).tolist()} variance rel diff={', '.join(f'{r:.1e}' for r in rel)}")
    assert ok


def test_c03_scaling_in_n(verdict):
    rows = []
    for n in (2**10, 2**12, 2**14, 2**16):
        res = run_trials(ExperimentSpec(n=n, k=2, trials=100, seed=3))
        rows.append((n, 2, median_rounds(res)))
    fit = _fit(rows, "ln(n)")
    ok = verdict(3, "scaling in n", fit.r_squared >= 0.9 and fit.slope > 0,
                 f"medians={[r[2] for r in rows]} slope={fit.slope:.3f} R2={fit.r_squared:.3f}")
    assert ok


def test_c04_scaling_in_k(verdict):
    rows = []
    for k in (2, 4, 8, 16):
        res = run_trials(ExperimentSpec(n=10**5, k=k, trials=50, seed=4))
        rows.append((10**5, k, median_rounds(res)))
    fit = _fit(rows, "k*ln(n)")
    ok = verdict(4, "scaling in k", fit.r_squared >= 0.9 and fit.slope > 0,
                 f"medians={[r[2] for r in rows]} slope={fit.slope:.4f} R2={fit.r_squared:.3f}")
    assert ok


def test_c05_super_weak_stays_super_weak(verdict):
    rep = property_suite("p1", seed=0)
    m = rep.metrics
    ok = verdict(5, "P1 suite", rep.passed and m["super_weak_violation_freq"] <= 0.05,
                 f"super-weak {m['super_weak_violation_freq']:.3f} weak {m['weak_violation_freq']:.3f}"
                 f" over {rep.params['trials']} trials")
    assert ok


def test_c06_validity_under_adversary(verdict):
    k = 5
    spec = ExperimentSpec(n=10**5, k=k, trials=200, seed=6,
                          adversary=adv.AdversaryPolicy(0.1, adv.Strategy.INVALID_INJECTOR))
    res = run_trials(spec)
    valid = np.mean([r.winner_valid for r in res])
    low = np.mean([r.peak_invalid_fraction <= 1 / (10 * k) for r in res])
    ok = verdict(6, "validity under adversary", valid >= 0.95 and low >= 0.95,
                 f"F={spec.budget} winner_valid={valid:.3f} peak_invalid_ok={low:.3f}")
    assert ok


def test_c07_coloring_identity(verdict):
    # full traced trajectories: every round, every tracked opinion, exact in node units
    rounds = bad = 0
    for seed, variant, strategy in [(1, ProtocolVariant(), adv.Strategy.NONE),
                                    (2, ProtocolVariant(Protocol.THREE_RANDOM), adv.Strategy.RANDOM_SCRAMBLE),
                                    (3, ProtocolVariant(self_sampling=False), adv.Strategy.EQUALIZER)]:
        src = RandomSource(seed)
        policy = adv.AdversaryPolicy(strategy=strategy, budget_override=10)
        c = Configuration.uniform(10**4, 4).with_nodes()
        clock = EpochPhaseState.start(4, c)
        strong = lambda cfg: [i + 1 for i, lab in enumerate(classify(cfg)) if lab is OpinionClass.STRONG]
        ledger = coloring_begin_phase(c, strong(c))
        key = (clock.epoch_index, clock.phase_index)
        while not c.is_consensus(slack=10) and c.round < 2000:
            c, moves = step_agent(c, variant, src)
            c, _ = adv.apply(c, policy, src)
            ledger.observe_round(replace(moves, after=c.nodes), rng=src)
            bad += sum(ledger.identity_residual(o, c) != 0 for o in ledger.tracked)
            rounds += 1
            clock = advance_clock(clock, c)
            if (clock.epoch_index, clock.phase_index) != key:
                key = (clock.epoch_index, clock.phase_index)
                ledger = coloring_begin_phase(c, strong(c))
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(["trace", "--n", "20000", "--k", "3", "--track", "1,2,3", "--seed", "7"])
    ok = verdict(7, "coloring identity", bad == 0 and code == 0,
                 f"{rounds} rounds, {bad} nonzero residuals; CLI trace of "
                 f"{len(buf.getvalue().splitlines())} rows re-validated")
    assert ok


def test_c08_light_variance(verdict):
    out = light_variance(n=10**5, kappa=10, trials=10**4, seed=0)
    ok = verdict(8, "light variance", out["variance"] <= out["bound"] + 3 * out["variance_se"],
                 f"variance={out['variance']:.1f} bound={out['bound']:.1f} se={out['variance_se']:.1f}")
    assert ok


def test_c09_extra_light_minority(verdict):
    out = extra_light_minority(n=10**5, kappa=10, delta=0.1, phases=500, seed=0)
    ok = verdict(9, "extra-light minority", out["minority_freq"] >= 0.95,
                 f"freq={out['minority_freq']:.3f} over {out['phases']} phases"
                 f" of {out['phase_rounds']} round(s)")
    assert ok


def test_c10_galton_watson(verdict):
    est = galton_watson_tail(0.3, 2, 10**5, RandomSource(10))
    z = abs(est.mean_size - 1 / 0.7) / est.mean_size_se
    shape = tail_shape_check(0.3, 2, 10**5, RandomSource(11))
    ok = verdict(10, "Galton-Watson oracle", z <= 3 and shape["passed"],
                 f"mean={est.mean_size:.4f} z={z:.2f}; P(>=4)={shape['tail_2t']:.4f}"
                 f" vs P(>=2)^2={shape['tail_t_squared']:.4f}")
    assert ok


def _cli(argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(argv)
    return code, buf.getvalue()


def test_c11_determinism(verdict, tmp_path):
    sweep = ["sweep", "--n-list", "1024,4096,16384,65536", "--k-list", "2", "--trials", "10"]
    commands = [
        ["run", "--n", "10000", "--k", "2", "--trials", "5", "--seed", "7"],
        ["run", "--n", "5000", "--k", "3", "--variant", "three-random", "--adversary", "random",
         "--epsilon", "2", "--trials", "3", "--seed", "9"],
        sweep,
        ["verify", "--property", "all", "--quick", "--seed", "3"],
        ["trace", "--n", "3000", "--k", "3", "--track", "1,2,3", "--adversary", "anti-plurality",
         "--budget", "5", "--seed", "4"],
    ]
    same = []
    for argv in commands:
        a, b = _cli(argv), _cli(argv)
        same.append(a == b and a[1] != "")
    saved = tmp_path / "sweep.csv"
    saved.write_text(_cli(sweep)[1])
    same.append(_cli(["sweep", "--replay", str(saved)])[1] == saved.read_text())
    ok = verdict(11, "determinism", all(same), f"{sum(same)}/{len(same)} outputs byte-identical")
    assert ok
