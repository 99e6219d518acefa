"""Experiment specs, single trials and parallel trial batches."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import adversary as adv
from ..core import (DEFAULT_VARIANT, Configuration, ProtocolVariant, default_max_rounds,
                    step_agent, step_aggregate)
from ..instrumentation import DEFAULT_DELTA, EpochPhaseState, advance_clock
from ..rng import RandomSource


@dataclass(frozen=True)
class Initial:
    """Starting configuration: ``uniform``, ``counts`` or ``plurality``.

    ``plurality`` gives opinion 1 a relative lead ``gap`` over every other
    opinion, which share the rest evenly.
    """

    kind: str = "uniform"
    counts: tuple[int, ...] | None = None
    gap: float = 0.0

    def build(self, n: int, k: int) -> Configuration:
        if self.kind == "uniform":
            return Configuration.uniform(n, k)
        if self.kind == "counts":
            if self.counts is None or len(self.counts) != k:
                raise ValueError(f"custom counts must list k={k} values")
            if sum(self.counts) != n:
                raise ValueError(f"custom counts sum to {sum(self.counts)}, not n={n}")
            return Configuration.from_valid(self.counts)
        if self.kind == "plurality":
            if self.gap < 0:
                raise ValueError("plurality gap must be >= 0")
            other = int(n / (k + self.gap))
            valid = np.full(k, other, dtype=np.int64)
            valid[0] = n - other * (k - 1)
            return Configuration.from_valid(valid)
        raise ValueError(f"unknown initial kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    n: int
    k: int
    variant: ProtocolVariant = DEFAULT_VARIANT
    adversary: adv.AdversaryPolicy = adv.NO_ADVERSARY
    initial: Initial = Initial()
    seed: int = 0
    max_rounds: int | None = None
    trials: int = 1
    mode: str = "auto"
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not (self.n >= self.k >= 1):
            raise ValueError("need n >= k >= 1")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.mode not in ("auto", "agent", "aggregate"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "aggregate" and not self.variant.aggregate_ok:
            raise ValueError("aggregate mode needs two-sample-own with self sampling")

    @property
    def round_cap(self) -> int:
        return self.max_rounds if self.max_rounds is not None else default_max_rounds(self.n, self.k)

    @property
    def budget(self) -> int:
        return self.adversary.f_for(self.n, self.k)

    @property
    def uses_agents(self) -> bool:
        return self.mode == "agent" or (self.mode == "auto" and not self.variant.aggregate_ok)


@dataclass
class TrialResult:
    trial: int
    seed: int
    rounds: int | None           # None: did not converge within the cap
    winner: int | None
    winner_valid: bool
    epoch_transcript: list[tuple[int, int]] = field(default_factory=list)
    peak_invalid_fraction: float = 0.0

    @property
    def converged(self) -> bool:
        return self.rounds is not None


def run_trial(spec: ExperimentSpec, trial_index: int = 0) -> TrialResult:
    """Step until ``n - F`` nodes share one opinion or the round cap is hit."""
    src = RandomSource(spec.seed, trial_index)
    k, n = spec.k, spec.n
    f = spec.budget
    config = spec.initial.build(n, k)
    if spec.uses_agents:
        config = config.with_nodes()
    clock = EpochPhaseState.start(k, config, spec.delta)
    spent: dict[int, int] = {}
    peak_invalid = config.invalid_count / n
    cap = spec.round_cap

    rounds = None
    while True:
        if config.is_consensus(slack=f):
            rounds = config.round
            break
        if config.round >= cap:
            break
        if spec.uses_agents:
            config, _ = step_agent(config, spec.variant, src, record=False)
        else:
            config = step_aggregate(config, spec.variant, src)
        if spec.adversary.active:
            config, _ = adv.apply(config, spec.adversary, src)
        spent[clock.epoch_index] = spent.get(clock.epoch_index, 0) + 1
        clock = advance_clock(clock, config)
        peak_invalid = max(peak_invalid, config.invalid_count / n)

    winner = int(np.argmax(config.counts)) + 1 if rounds is not None else None
    return TrialResult(
        trial=trial_index,
        seed=spec.seed,
        rounds=rounds,
        winner=winner,
        winner_valid=winner is not None and winner <= k,
        epoch_transcript=sorted(spent.items()),
        peak_invalid_fraction=peak_invalid,
    )


def worker_count() -> int:
    """Parallelism cap from DYNLAB_THREADS (0 or unset: one per CPU)."""
    raw = os.environ.get("DYNLAB_THREADS", "0").strip() or "0"
    try:
        val = int(raw)
    except ValueError:
        raise ValueError(f"DYNLAB_THREADS must be an integer, got {raw!r}") from None
    if val < 0:
        raise ValueError("DYNLAB_THREADS must be >= 0")
    return val or (os.cpu_count() or 1)


def _run_one(args):
    spec, i = args
    return run_trial(spec, i)


def run_trials(spec: ExperimentSpec, workers: int | None = None) -> list[TrialResult]:
    """All ``spec.trials`` trials, ordered by trial index whatever the parallelism."""
    workers = worker_count() if workers is None else workers
    jobs = [(spec, i) for i in range(spec.trials)]
    if workers <= 1 or spec.trials == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, spec.trials)) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=max(1, spec.trials // (4 * workers))))
    return sorted(results, key=lambda r: r.trial)


def median_rounds(results: list[TrialResult]) -> float:
    """Median over all trials; non-converged trials count as +inf."""
    vals = [r.rounds if r.rounds is not None else np.inf for r in results]
    return float(np.median(vals))
