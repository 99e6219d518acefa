"""Executable form of the epoch/phase analysis: opinion classes, the epoch
clock, gap snapshots and the clear/light/extra-light coloring ledger."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .core import Configuration, Protocol, RoundMoves
from .rng import RandomSource, as_source

DEFAULT_DELTA = 0.1
# clear mass is stored as an integer number of 1/SCALE node units
SCALE = 2**20


class OpinionClass(str, enum.Enum):
    SUPER_WEAK = "super-weak"
    WEAK = "weak"
    STRONG = "strong"


def classify_counts(valid_counts, n: int, k: int) -> list[OpinionClass]:
    """Label valid opinions from integer counts (exact threshold arithmetic)."""
    valid = np.asarray(valid_counts, dtype=np.int64)
    top = int(valid.max())
    out = []
    for c in valid.tolist():
        if 10 * k * c <= n:
            out.append(OpinionClass.SUPER_WEAK)
        elif 5 * c >= top:
            out.append(OpinionClass.STRONG)
        else:
            out.append(OpinionClass.WEAK)
    return out


def classify(config: Configuration, k: int | None = None) -> list[OpinionClass]:
    """One label per valid opinion, index 0 being opinion 1.

    p_max is taken over valid opinions; the super-weak cut uses ``k``
    (defaults to the configuration's k).
    """
    return classify_counts(config.valid_counts, config.n, config.k if k is None else k)


def not_super_weak(config: Configuration, k: int | None = None) -> int:
    k = config.k if k is None else k
    return int(np.count_nonzero(10 * k * config.valid_counts > config.n))


def strong_band_violations(config: Configuration, kappa: int) -> list[int]:
    """Strong opinions outside [0.18/kappa, 1.5/kappa] (expected empty before end-of-time)."""
    labels = classify(config)
    bad = []
    for i, (label, c) in enumerate(zip(labels, config.valid_counts.tolist())):
        if label is OpinionClass.STRONG and not (18 * config.n <= 100 * kappa * c <= 150 * config.n):
            bad.append(i + 1)
    return bad


def kappa_for(k: int, epoch: int) -> int:
    """floor(k * (5/6)**(epoch-1)), computed exactly."""
    if epoch < 1:
        raise ValueError("epochs are numbered from 1")
    return math.floor(Fraction(k) * Fraction(5, 6) ** (epoch - 1))


def phase_length(kappa: int, delta: float = DEFAULT_DELTA) -> int:
    return max(1, math.ceil(delta * kappa - 1e-9))


@dataclass(frozen=True)
class EpochPhaseState:
    k: int
    epoch_index: int = 1
    kappa: int = 0
    phase_index: int = 0
    round_in_phase: int = 0
    delta: float = DEFAULT_DELTA
    end_of_time: bool = False
    rounds_in_epoch: int = 0

    @property
    def phase_length(self) -> int:
        return phase_length(self.kappa, self.delta)

    @classmethod
    def start(cls, k: int, config: Configuration | None = None,
              delta: float = DEFAULT_DELTA) -> "EpochPhaseState":
        """Clock at round 0; with a configuration, skip epochs it already satisfies."""
        state = cls(k=k, kappa=kappa_for(k, 1), delta=delta)
        if config is not None:
            state = _settle(state, config)
        return state


def _end_of_time(config: Configuration, kappa: int) -> bool:
    # p_max >= 1.5 / kappa, in integers
    return kappa >= 1 and 2 * kappa * int(config.valid_counts.max()) >= 3 * config.n


def _settle(state: EpochPhaseState, config: Configuration) -> EpochPhaseState:
    alive = not_super_weak(config, state.k)
    epoch = state.epoch_index
    while True:
        nxt = kappa_for(state.k, epoch + 1)
        if nxt < 1 or alive > nxt:
            break
        epoch += 1
    if epoch != state.epoch_index:
        state = replace(state, epoch_index=epoch, kappa=kappa_for(state.k, epoch),
                        phase_index=0, round_in_phase=0, end_of_time=False,
                        rounds_in_epoch=0)
    if not state.end_of_time and _end_of_time(config, state.kappa):
        state = replace(state, end_of_time=True)
    return state


def advance_clock(state: EpochPhaseState, config: Configuration) -> EpochPhaseState:
    """Account for one completed round whose result is ``config``."""
    r = state.round_in_phase + 1
    phase = state.phase_index
    if r >= state.phase_length:
        phase, r = phase + 1, 0
    state = replace(state, round_in_phase=r, phase_index=phase,
                    rounds_in_epoch=state.rounds_in_epoch + 1)
    return _settle(state, config)


@dataclass
class GapSnapshot:
    round: int
    opinions: list[int]          # 1-based ids of the strong opinions
    pairs: np.ndarray            # pairs[a, b] = gap of opinions[a] over opinions[b]

    def reciprocity_error(self) -> float:
        """max |(1+g_ij)(1+g_ji) - 1| over pairs."""
        if not self.opinions:
            return 0.0
        prod = (1 + self.pairs) * (1 + self.pairs.T)
        return float(np.max(np.abs(prod - 1)))


def gap_snapshot(config: Configuration) -> GapSnapshot:
    labels = classify(config)
    ids = [i + 1 for i, lab in enumerate(labels)
           if lab is OpinionClass.STRONG and config.counts[i] > 0]
    p = config.fractions[[i - 1 for i in ids]]
    pairs = (p[:, None] - p[None, :]) / p[None, :] if ids else np.zeros((0, 0))
    return GapSnapshot(config.round, ids, pairs)


class _Track:
    __slots__ = ("index", "clear_fp", "light_fp", "extra", "labels", "history",
                 "recent", "tie_light")

    def __init__(self, index: int, count: int, n: int):
        self.index = index
        self.clear_fp = count * SCALE
        self.light_fp = 0
        self.extra = np.zeros(n, dtype=bool)
        self.labels = np.zeros(n, dtype=bool)
        self.history: list[float] = []
        self.recent = np.zeros(0, dtype=np.int64)
        self.tie_light = np.zeros(0, dtype=np.int64)


class ColoringLedger:
    """Clear / light / extra-light bookkeeping for tracked opinions in one phase.

    For each tracked opinion the clear mass follows the expectation
    recurrence ``q <- q (1 + q - sigma2)``, recruits hired through a light or
    extra-light node become permanently extra-light, and the light charge is
    whatever remains so that ``clear + light + extra = support`` holds
    exactly in node units.  Only positive charge is carried by labelled
    nodes; negative charge stays a scalar.
    """

    def __init__(self, n: int, opinions: Iterable[int], counts, sigma2_source: str = "configuration"):
        if sigma2_source not in ("configuration", "clear"):
            raise ValueError("sigma2_source must be 'configuration' or 'clear'")
        self.n = int(n)
        self.sigma2_source = sigma2_source
        self.round = 0
        self._after: np.ndarray | None = None
        self._tracks = {int(o): _Track(int(o) - 1, int(counts[int(o) - 1]), self.n)
                        for o in sorted(set(opinions))}

    @property
    def tracked(self) -> list[int]:
        return list(self._tracks)

    # -- per-opinion views --------------------------------------------------
    def clear(self, opinion: int) -> float:
        return self._tracks[opinion].clear_fp / (SCALE * self.n)

    def light_charge(self, opinion: int) -> float:
        return self._tracks[opinion].light_fp / (SCALE * self.n)

    def extra_light(self, opinion: int) -> np.ndarray:
        return np.flatnonzero(self._tracks[opinion].extra)

    def extra_light_count(self, opinion: int) -> int:
        return int(np.count_nonzero(self._tracks[opinion].extra))

    def light_labels(self, opinion: int) -> np.ndarray:
        return np.flatnonzero(self._tracks[opinion].labels)

    def clear_nodes(self, opinion: int) -> Fraction:
        return Fraction(self._tracks[opinion].clear_fp, SCALE)

    def light_nodes(self, opinion: int) -> Fraction:
        return Fraction(self._tracks[opinion].light_fp, SCALE)

    def light_history(self, opinion: int) -> list[float]:
        """Light charge in node units after each observed round."""
        return list(self._tracks[opinion].history)

    def identity_residual(self, opinion: int, config: Configuration) -> Fraction:
        """clear + light + extra - support, in node units (exactly 0 when consistent)."""
        t = self._tracks[opinion]
        extra = int(np.count_nonzero(t.extra & (config.nodes == t.index))) \
            if config.nodes is not None else self.extra_light_count(opinion)
        total = t.clear_fp + t.light_fp + extra * SCALE
        return Fraction(total - int(config.counts[t.index]) * SCALE, SCALE)

    def check_identity(self, config: Configuration) -> bool:
        return all(self.identity_residual(o, config) == 0 for o in self._tracks)

    # -- round update -------------------------------------------------------
    def _sigma2(self, start_counts: np.ndarray) -> float:
        p = start_counts / self.n
        if self.sigma2_source == "clear":
            p = p.copy()
            for t in self._tracks.values():
                p[t.index] = t.clear_fp / (SCALE * self.n)
        return float(np.dot(p, p))

    def observe_round(self, moves: RoundMoves, sigma2: float | None = None,
                      rng: RandomSource | int | None = None) -> "ColoringLedger":
        """Fold one agent-mode round into the ledger.

        ``sigma2`` defaults to the start-of-round value (full configuration,
        or clear masses for tracked opinions under ``sigma2_source='clear'``).
        With ``rng`` the light labels are reassigned afterwards.
        """
        if moves is None or moves.samples is None or moves.before is None:
            raise ValueError("coloring needs agent-mode moves with sample identities")
        if moves.before.size != self.n:
            raise ValueError("moves belong to a population of a different size")
        s2 = self._sigma2(moves.start_counts) if sigma2 is None else float(sigma2)
        three = moves.variant.tag is Protocol.THREE_RANDOM
        before, after = moves.before, moves.after

        for t in self._tracks.values():
            i = t.index
            # drop marks of nodes that no longer hold the opinion (adversary between rounds)
            t.extra &= before == i
            t.labels &= before == i
            marked = t.extra | t.labels

            q = t.clear_fp / (SCALE * self.n)
            t.clear_fp = max(0, round(q * (1.0 + q - s2) * self.n * SCALE))

            join = moves.new == i
            joiners = moves.node[join]
            samp = moves.samples[join]
            blue = before[samp] == i
            hit = (blue & marked[samp]).any(axis=1)
            if three:
                nblue = blue.sum(axis=1)
                recruit_extra = hit & (nblue >= 2)
                tie_light = hit & (nblue == 1)
            else:
                recruit_extra = hit
                tie_light = np.zeros(joiners.size, dtype=bool)

            leavers = moves.node[moves.old == i]
            t.extra[leavers] = False
            t.labels[leavers] = False
            t.extra[joiners[recruit_extra]] = True

            # corruption applied after the protocol step shows up only in ``after``
            t.extra &= after == i
            t.labels &= after == i

            t.tie_light = joiners[tie_light]
            t.tie_light = t.tie_light[after[t.tie_light] == i]
            t.recent = joiners[~recruit_extra & ~tie_light]
            t.recent = t.recent[after[t.recent] == i]
            support = int(np.count_nonzero(after == i))
            extra = int(np.count_nonzero(t.extra))
            t.light_fp = support * SCALE - t.clear_fp - extra * SCALE
            t.history.append(t.light_fp / SCALE)
        self.round += 1
        self._after = after
        if rng is not None:
            light_label_assign(self, rng)
        return self


def coloring_begin_phase(config: Configuration, tracked: Iterable[int],
                         sigma2_source: str = "configuration") -> ColoringLedger:
    """Fresh ledger at a phase start; every tracked opinion must be strong."""
    tracked = sorted(set(int(o) for o in tracked))
    labels = classify(config)
    for o in tracked:
        if not 1 <= o <= config.k:
            raise ValueError(f"opinion {o} is not a valid opinion id")
        if labels[o - 1] is not OpinionClass.STRONG:
            raise ValueError(f"opinion {o} is {labels[o - 1].value}, only strong opinions can be tracked")
    ledger = ColoringLedger(config.n, tracked, config.counts, sigma2_source)
    ledger._after = config.with_nodes().nodes if tracked else None
    return ledger


def light_label_assign(ledger: ColoringLedger, rng: RandomSource | int | None = None) -> dict[int, np.ndarray]:
    """Put light labels on floor(light charge) concrete nodes per opinion.

    Labels already placed are kept when possible; surplus labels are
    cancelled at random.  New labels go first to nodes that just switched
    in on a tie won by a light node, then to other fresh switchers, then to
    random plain supporters.  Negative charge carries no labels.
    """
    gen = as_source(rng).labels
    after = ledger._after
    out = {}
    for opinion, t in ledger._tracks.items():
        target = t.light_fp // SCALE if t.light_fp > 0 else 0
        have = np.flatnonzero(t.labels)
        if have.size > target:
            drop = gen.choice(have, size=have.size - target, replace=False)
            t.labels[drop] = False
        elif have.size < target:
            need = target - have.size
            for pool in (t.tie_light, t.recent):
                pool = pool[~t.labels[pool] & ~t.extra[pool]]
                take = pool[:need]
                t.labels[take] = True
                need -= take.size
                if need == 0:
                    break
            if need > 0 and after is not None:
                plain = np.flatnonzero((after == t.index) & ~t.labels & ~t.extra)
                take = gen.choice(plain, size=min(need, plain.size), replace=False)
                t.labels[take] = True
        out[opinion] = np.flatnonzero(t.labels)
    return out


def max_light_excursion(source, opinion: int | None = None) -> float:
    """max over rounds of |light charge| in node units.

    ``source`` is a ledger (all tracked opinions unless ``opinion`` is given)
    or a plain sequence of per-round charges.
    """
    if isinstance(source, ColoringLedger):
        ops = source.tracked if opinion is None else [opinion]
        hist = [h for o in ops for h in source.light_history(o)]
    else:
        hist = list(source)
    return float(max((abs(h) for h in hist), default=0.0))
