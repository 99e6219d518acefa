"""F-bounded adversary acting on opinion counts after each protocol round."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Configuration
from .rng import RandomSource, as_source


class Strategy(str, enum.Enum):
    NONE = "none"
    INVALID_INJECTOR = "invalid"
    EQUALIZER = "equalizer"
    ANTI_PLURALITY = "anti-plurality"
    RANDOM_SCRAMBLE = "random"


def budget(n: int, k: int, epsilon: float) -> int:
    """floor(epsilon * sqrt(n) / k**1.5); zero means the adversary is inert."""
    if n < 1 or k < 1:
        raise ValueError("need n >= 1 and k >= 1")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    # guard floor() against 2.9999999 style representation error
    return int(math.floor(epsilon * math.sqrt(n) / k**1.5 + 1e-9))


@dataclass(frozen=True)
class AdversaryPolicy:
    """Corruption budget and strategy.

    ``budget_override`` replaces the epsilon-derived budget when set.  The
    budget depends on (n, k), so it is resolved with :meth:`f_for`.
    """

    epsilon: float = 0.1
    strategy: Strategy = Strategy.NONE
    budget_override: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.budget_override is not None and self.budget_override < 0:
            raise ValueError("budget_override must be >= 0")

    def f_for(self, n: int, k: int) -> int:
        if self.strategy is Strategy.NONE:
            return 0
        if self.budget_override is not None:
            return int(self.budget_override)
        return budget(n, k, self.epsilon)

    @property
    def active(self) -> bool:
        return self.strategy is not Strategy.NONE


NO_ADVERSARY = AdversaryPolicy()


@dataclass
class CorruptionRecord:
    round: int
    moved: list[tuple[int, int, int]] = field(default_factory=list)  # (from, to, count), 1-based

    @property
    def total(self) -> int:
        return sum(c for _, _, c in self.moved)

    def to_dict(self) -> dict:
        return {"round": self.round, "moved": [list(m) for m in self.moved]}


def _super_weak(counts: np.ndarray, n: int, k: int) -> np.ndarray:
    return 10 * k * counts <= n


def apply(config: Configuration, policy: AdversaryPolicy,
          rng: RandomSource | int | None = None):
    """Corrupt at most ``policy.f_for(n, k)`` nodes.  Returns (config, record).

    If the configuration carries node identities, the corrupted nodes are
    drawn uniformly among holders of the source opinion.
    """
    record = CorruptionRecord(round=config.round)
    f = policy.f_for(config.n, config.k)
    if f == 0 or not policy.active:
        return config, record

    counts = config.counts.copy()
    k = config.k
    valid = counts[:k]

    def move(src: int, dst: int, amount: int):
        amount = int(min(amount, counts[src]))
        if amount <= 0 or src == dst:
            return
        counts[src] -= amount
        counts[dst] += amount
        record.moved.append((src + 1, dst + 1, amount))

    s = policy.strategy
    if s is Strategy.INVALID_INJECTOR:
        move(int(np.argmax(valid)), k, f)
    elif s is Strategy.EQUALIZER:
        if k >= 2:
            order = np.argsort(-valid, kind="stable")
            top, second = int(order[0]), int(order[1])
            # never overshoot: the two should not swap rank
            move(top, second, min(f, (int(valid[top]) - int(valid[second])) // 2))
    elif s is Strategy.ANTI_PLURALITY:
        if k >= 2:
            top = int(np.argmax(valid))
            alive = ~_super_weak(valid, config.n, k)
            alive[top] = False
            if alive.any():
                cand = np.flatnonzero(alive)
                target = int(cand[np.argmin(valid[cand])])
            else:
                others = np.delete(np.arange(k), top)
                target = int(others[np.argmax(valid[others])])
            move(top, target, f)
    elif s is Strategy.RANDOM_SCRAMBLE:
        gen = as_source(rng).adversary
        m = min(f, config.n)
        picked = gen.multivariate_hypergeometric(counts.copy(), m)
        targets = gen.integers(0, k, size=m)
        pos = 0
        for src in range(k + 1):
            for _ in range(int(picked[src])):
                move(src, int(targets[pos]), 1)
                pos += 1
        record.moved = _merge(record.moved)
    if config.nodes is None:
        return Configuration(counts, config.round), record
    nodes = config.nodes.copy()
    gen = as_source(rng).adversary
    for src, dst, amount in record.moved:
        holders = np.flatnonzero(config.nodes == src - 1)
        holders = holders[nodes[holders] == src - 1]
        nodes[gen.choice(holders, size=amount, replace=False)] = dst - 1
    return Configuration(counts, config.round, nodes), record


def _merge(moved):
    acc: dict[tuple[int, int], int] = {}
    for a, b, c in moved:
        acc[(a, b)] = acc.get((a, b), 0) + c
    return [(a, b, c) for (a, b), c in sorted(acc.items())]
