"""Command-line entry point: ``dynlab run|sweep|verify|trace``.

Settings come from three layers, later ones winning: built-in defaults,
an optional ``--config`` file of ``key = value`` lines, then flags given on
the command line.  Keys in the file use the flag names without the leading
dashes (``max-rounds = 500``).  Unknown keys are usage errors.

Exit codes: 0 success, 2 usage, 3 non-convergence under ``--strict``,
4 property failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time

import numpy as np

from . import adversary as adv
from .core import Configuration, Protocol, ProtocolVariant, sigma2, step_agent
from .instrumentation import (DEFAULT_DELTA, EpochPhaseState, advance_clock, classify,
                              coloring_begin_phase, OpinionClass)
from .lab.experiment import ExperimentSpec, Initial, median_rounds, run_trials
from .lab.properties import PROPERTIES, property_suite
from .lab.scaling import PREDICTORS, KLogNRegressor
from .rng import RandomSource

EXIT_OK, EXIT_USAGE, EXIT_DNC, EXIT_PROPERTY = 0, 2, 3, 4
SCHEMA = "# schema=1"
RUN_HEADER = ["trial", "seed", "rounds", "winner", "winner_valid", "epochs", "peak_invalid_fraction"]
SWEEP_HEADER = ["n", "k", "predictor", "trials", "converged", "median", "mean", "stddev"]
MIN_FIT_POINTS = 4


class UsageError(Exception):
    pass


# -- value parsers ----------------------------------------------------------

def _int_list(text):
    try:
        vals = [int(x) for x in str(text).replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# -- parser -----------------------------------------------------------------

DEFAULTS = {
    "variant": Protocol.TWO_SAMPLE_OWN.value,
    "exclude_self": False,
    "mode": "auto",
    "adversary": adv.Strategy.NONE.value,
    "epsilon": 0.1,
    "budget": None,
    "initial": "uniform",
    "counts": None,
    "gap": 0.0,
    "seed": 0,
    "max_rounds": None,
    "trials": 1,
    "delta": DEFAULT_DELTA,
    "strict": False,
    "out": None,
    "predictor": "k*ln(n)",
    "n_list": None,
    "k_list": None,
    "replay": None,
    "property": "all",
    "quick": False,
    "timing": False,
    "track": None,
    "sigma2_source": "configuration",
    "n": None,
    "k": None,
}
# property estimators carry their own trial counts
COMMAND_DEFAULTS = {"verify": {"trials": None}}


def _dynamics_flags(p, with_mode=True):
    p.add_argument("--variant", choices=[t.value for t in Protocol])
    p.add_argument("--exclude-self", action="store_true", help="peers drawn from the other n-1 nodes")
    if with_mode:
        p.add_argument("--mode", choices=["auto", "agent", "aggregate"])
    p.add_argument("--adversary", choices=[s.value for s in adv.Strategy])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--budget", type=int, help="fixed corruption budget F (overrides epsilon)")
    p.add_argument("--initial", choices=["uniform", "counts", "plurality"])
    p.add_argument("--counts", type=_int_list, help="comma-separated valid counts (implies --initial counts)")
    p.add_argument("--gap", type=float, help="lead of opinion 1 for --initial plurality")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--delta", type=float)


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps unset flags out of the namespace so the config file can fill them
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="file of key = value lines")
    common.add_argument("--out", help="write output here instead of stdout")

    parser = argparse.ArgumentParser(prog="dynlab", description="3-majority plurality consensus lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        return sub.add_parser(name, help=help, parents=[common], argument_default=argparse.SUPPRESS)

    p = add("run", "run trials, one CSV row per trial")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    _dynamics_flags(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--strict", action="store_true", help="exit 3 if any trial does not converge")

    p = add("sweep", "median rounds over an (n, k) grid plus a scaling fit")
    p.add_argument("--n-list", type=_int_list)
    p.add_argument("--k-list", type=_int_list)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    _dynamics_flags(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--predictor", choices=list(PREDICTORS))
    p.add_argument("--replay", help="recompute the fit from a saved sweep CSV")

    p = add("verify", "run property estimators, JSON report list")
    p.add_argument("--property")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--timing", action="store_true", help="include wall-clock seconds in the JSON")

    p = add("trace", "per-round JSON lines with the coloring ledger")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    _dynamics_flags(p, with_mode=False)
    p.add_argument("--track", type=_int_list, help="opinion ids (1-based) to track")
    p.add_argument("--sigma2-source", choices=["configuration", "clear"])
    return parser


def _actions(parser: argparse.ArgumentParser, command: str) -> dict:
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {a.dest: a for a in subs.choices[command]._actions if a.dest not in ("help", "config")}


def read_config(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}") from None
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def merge_settings(parser, command: str, ns: argparse.Namespace) -> dict:
    """defaults <- config file <- flags."""
    actions = _actions(parser, command)
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    settings = {d: DEFAULTS.get(d) for d in actions}
    settings.update({d: v for d, v in COMMAND_DEFAULTS.get(command, {}).items() if d in actions})
    path = getattr(ns, "config", None)
    if path:
        for key, raw in read_config(path).items():
            act = actions.get(key)
            if act is None:
                raise UsageError(f"unknown config key {key!r} for '{command}'")
            try:
                if isinstance(act, argparse._StoreTrueAction):
                    val = _bool(raw)
                else:
                    val = act.type(raw) if act.type else raw
            except (argparse.ArgumentTypeError, ValueError) as e:
                raise UsageError(f"config key {key!r}: {e}") from None
            if act.choices is not None and val not in act.choices:
                raise UsageError(f"config key {key!r}: {val!r} not in {sorted(act.choices)}")
            settings[key] = val
    settings.update(given)
    return settings


# -- spec assembly ----------------------------------------------------------

def _spec(s: dict, n: int, k: int, mode: str | None = None) -> ExperimentSpec:
    if k is None and s.get("counts"):
        k = len(s["counts"])
    if n is None and s.get("counts"):
        n = sum(s["counts"])
    if n is None or k is None:
        raise UsageError("--n and --k are required (or --counts)")
    variant = ProtocolVariant(Protocol(s["variant"]), self_sampling=not s["exclude_self"])
    policy = adv.AdversaryPolicy(epsilon=s["epsilon"], strategy=adv.Strategy(s["adversary"]),
                                 budget_override=s["budget"])
    kind = s["initial"]
    if s["counts"] is not None:
        kind = "counts"
    initial = Initial(kind=kind, counts=tuple(s["counts"]) if s["counts"] else None, gap=s["gap"])
    try:
        spec = ExperimentSpec(n=n, k=k, variant=variant, adversary=policy, initial=initial,
                              seed=s["seed"], max_rounds=s["max_rounds"], trials=s.get("trials", 1),
                              mode=mode or s.get("mode", "auto"), delta=s["delta"])
        spec.initial.build(n, k)
    except ValueError as e:
        raise UsageError(str(e)) from None
    return spec


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


# -- commands ---------------------------------------------------------------

def cmd_run(s: dict) -> tuple[int, str]:
    spec = _spec(s, s["n"], s["k"])
    results = run_trials(spec)
    rows = [RUN_HEADER]
    for r in results:
        epochs = ";".join(f"{e}:{c}" for e, c in r.epoch_transcript)
        rows.append([r.trial, r.seed, r.rounds if r.converged else "dnc", r.winner,
                     r.winner_valid, epochs, float(r.peak_invalid_fraction)])
    text = SCHEMA + "\n" + _csv(rows)
    code = EXIT_DNC if s["strict"] and not all(r.converged for r in results) else EXIT_OK
    return code, text


def _sweep_text(points, predictor: str) -> str:
    """points: rows (n, k, trials, converged, median, mean, stddev)."""
    rows = [SWEEP_HEADER]
    for n, k, trials, conv, med, mean, sd in points:
        rows.append([n, k, predictor, trials, conv, med, mean, sd])
    footer = []
    finite = [p for p in points if np.isfinite(p[4])]
    distinct = {(p[0], p[1]) for p in finite}
    if len(distinct) < MIN_FIT_POINTS:
        footer.append(["fit", "status", "insufficient_points"])
    else:
        X = np.array([[p[0], p[1]] for p in finite], dtype=float)
        y = np.array([p[4] for p in finite], dtype=float)
        res = KLogNRegressor(predictor=predictor).fit(X, y).result()
        footer += [["fit", "slope", res.slope], ["fit", "intercept", res.intercept],
                   ["fit", "r_squared", res.r_squared], ["fit", "predictor", predictor]]
    return SCHEMA + "\n" + _csv(rows) + _csv(footer)


def _read_sweep(path: str):
    try:
        with open(path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    except OSError as e:
        raise UsageError(f"cannot read replay file: {e}") from None
    reader = csv.reader(lines)
    header = next(reader, None)
    if header != SWEEP_HEADER:
        raise UsageError("replay file does not have the sweep header")
    points, predictor = [], None
    for row in reader:
        if row and row[0] == "fit":
            continue
        try:
            n, k, pred, trials, conv = int(row[0]), int(row[1]), row[2], int(row[3]), int(row[4])
            med, mean, sd = (float(v) for v in row[5:8])
        except (ValueError, IndexError):
            raise UsageError(f"malformed sweep row: {row}") from None
        if predictor is not None and pred != predictor:
            raise UsageError("replay file mixes predictors")
        predictor = pred
        points.append((n, k, trials, conv, med, mean, sd))
    return points, predictor


def cmd_sweep(s: dict) -> tuple[int, str]:
    if s["replay"]:
        points, predictor = _read_sweep(s["replay"])
        predictor = predictor or s["predictor"]
    else:
        ns = s["n_list"] or ([s["n"]] if s["n"] is not None else None)
        ks = s["k_list"] or ([s["k"]] if s["k"] is not None else None)
        if not ns or not ks:
            raise UsageError("sweep needs --n-list/--n and --k-list/--k")
        predictor = s["predictor"]
        points = []
        for n in ns:
            for k in ks:
                res = run_trials(_spec(s, n, k))
                done = [r.rounds for r in res if r.converged]
                mean = float(np.mean(done)) if done else float("nan")
                sd = float(np.std(done, ddof=1)) if len(done) > 1 else 0.0
                points.append((n, k, len(res), len(done), median_rounds(res), mean, sd))
    grid = {(p[0], p[1]) for p in points}
    if len(grid) < 2:
        raise UsageError("degenerate grid: need at least 2 distinct (n, k) points")
    z = {float(PREDICTORS[predictor](np.array([n], float), np.array([k], float))[0]) for n, k in grid}
    if len(z) < 2:
        raise UsageError(f"degenerate grid: {predictor} is constant over the grid")
    return EXIT_OK, _sweep_text(points, predictor)


def cmd_verify(s: dict) -> tuple[int, str]:
    pid = str(s["property"]).lower()
    if pid == "all":
        ids = list(PROPERTIES)
    elif pid in PROPERTIES:
        ids = [pid]
    else:
        raise UsageError(f"unknown property {s['property']!r}; choose from {', '.join(PROPERTIES)}, all")
    reports = []
    for p in ids:
        over = {"trials": s["trials"]}
        if p in ("p6", "p7"):
            over["ns"] = (s["n"],) if s["n"] is not None else None
            over["ks"] = (s["k"],) if s["k"] is not None else None
        else:
            over["n"], over["k"] = s["n"], s["k"]
        t0 = time.perf_counter()
        try:
            rep = property_suite(p, quick=s["quick"], seed=s["seed"], **over)
        except ValueError as e:
            raise UsageError(f"{p}: {e}") from None
        elapsed = time.perf_counter() - t0
        print(f"{p}: {'pass' if rep.passed else 'FAIL'} in {elapsed:.1f}s", file=sys.stderr)
        d = rep.to_dict()
        if s["timing"]:
            d["wall_clock_seconds"] = elapsed
        reports.append(d)
    code = EXIT_OK if all(r["passed"] for r in reports) else EXIT_PROPERTY
    return code, json.dumps(reports, indent=2, sort_keys=True) + "\n"


def _strong_ids(config: Configuration, ids) -> list[int]:
    labels = classify(config)
    return [o for o in ids if labels[o - 1] is OpinionClass.STRONG]


def cmd_trace(s: dict) -> tuple[int, str]:
    spec = _spec(s, s["n"], s["k"], mode="agent")
    k, n = spec.k, spec.n
    src = RandomSource(spec.seed, 0)
    config = spec.initial.build(n, k).with_nodes()
    track = sorted(set(s["track"] or []))
    for o in track:
        if not 1 <= o <= k:
            raise UsageError(f"--track {o}: opinion ids run from 1 to {k}")
    bad = [o for o in track if o not in _strong_ids(config, track)]
    if bad:
        raise UsageError(f"--track: opinion(s) {bad} are not strong at the start")

    f = spec.budget
    clock = EpochPhaseState.start(k, config, spec.delta)
    ledger = coloring_begin_phase(config, track, s["sigma2_source"])
    phase_key = (clock.epoch_index, clock.phase_index)
    lines = []

    def row(cfg, record):
        if not ledger.check_identity(cfg):
            raise RuntimeError(f"coloring identity broken at round {cfg.round}")
        p = cfg.fractions
        tracked = {}
        for o in track:
            if o in ledger.tracked:
                tracked[str(o)] = {"clear": ledger.clear(o), "light_charge": ledger.light_charge(o),
                                   "extra_light_count": ledger.extra_light_count(o)}
            else:
                tracked[str(o)] = None
        lines.append(json.dumps({
            "round": cfg.round,
            "counts": cfg.counts.tolist(),
            "sigma2": sigma2(p),
            "p_max": float(p[:k].max()),
            "classes": [c.value for c in classify(cfg)],
            "kappa": clock.kappa,
            "epoch": clock.epoch_index,
            "phase": clock.phase_index,
            "round_in_phase": clock.round_in_phase,
            "end_of_time": clock.end_of_time,
            "tracked": tracked,
            "corruption": record.to_dict() if record is not None else None,
        }, sort_keys=True))

    row(config, None)
    while not config.is_consensus(slack=f) and config.round < spec.round_cap:
        config, moves = step_agent(config, spec.variant, src, record=True)
        record = None
        if spec.adversary.active:
            config, record = adv.apply(config, spec.adversary, src)
        moves.after = config.nodes
        ledger.observe_round(moves, rng=src)
        clock = advance_clock(clock, config)
        # the row shows the ledger as the round left it; a new phase starts afresh after
        row(config, record)
        if (clock.epoch_index, clock.phase_index) != phase_key:
            phase_key = (clock.epoch_index, clock.phase_index)
            ledger = coloring_begin_phase(config, _strong_ids(config, track), s["sigma2_source"])
    return EXIT_OK, "\n".join(lines) + "\n"


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "trace": cmd_trace}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        settings = merge_settings(parser, ns.command, ns)
        code, text = COMMANDS[ns.command](settings)
    except UsageError as e:
        print(f"dynlab {ns.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    out = settings.get("out")
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
