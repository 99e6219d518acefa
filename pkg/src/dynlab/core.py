"""One synchronous round of 3-majority, in agent and aggregate form, plus the
mean-field map.

Opinions are 1-based at the public surface (``1..k`` valid, ``k+1`` the
grouped invalid opinion).  Internally ``counts[i]`` and node arrays use the
0-based index ``i = opinion - 1``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import RandomSource, as_source

MAX_NODES = 2**40
SUM_TOL = 1e-9


class Protocol(str, enum.Enum):
    TWO_SAMPLE_OWN = "two-sample-own"
    THREE_RANDOM = "three-random"


@dataclass(frozen=True)
class ProtocolVariant:
    """Which sampling/majority rule a round uses.

    ``self_sampling=True`` draws peers uniformly with replacement from all n
    nodes, the sampler included; ``False`` excludes the sampler (each draw is
    uniform over the other n-1 nodes, still with replacement between draws).
    """

    tag: Protocol = Protocol.TWO_SAMPLE_OWN
    self_sampling: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tag", Protocol(self.tag))

    @property
    def samples_per_node(self) -> int:
        return 2 if self.tag is Protocol.TWO_SAMPLE_OWN else 3

    @property
    def aggregate_ok(self) -> bool:
        # the per-node switch law is exactly p_j**2 only in this mode
        return self.tag is Protocol.TWO_SAMPLE_OWN and self.self_sampling


DEFAULT_VARIANT = ProtocolVariant()


class Configuration:
    """Opinion counts of n nodes, optionally with per-node opinions.

    ``counts`` has length k+1; the last slot is the invalid opinion.  When
    ``nodes`` is given it is the 0-based opinion index of every node and must
    agree with ``counts``.
    """

    __slots__ = ("counts", "round", "nodes", "n", "k")

    def __init__(self, counts, round: int = 0, nodes=None):
        counts = np.asarray(counts)
        if counts.ndim != 1 or counts.size < 2:
            raise ValueError("counts must be a 1-d array of length k+1 >= 2")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.mod(counts, 1) == 0):
                raise ValueError("counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        n = int(counts.sum())
        if n < 1:
            raise ValueError("a configuration needs at least one node")
        if n > MAX_NODES:
            raise ValueError(f"n={n} exceeds the 2**40 cap")
        if round < 0:
            raise ValueError("round must be non-negative")
        if nodes is not None:
            nodes = np.asarray(nodes)
            if nodes.shape != (n,):
                raise ValueError("nodes must hold one opinion per node")
            if not np.array_equal(np.bincount(nodes, minlength=counts.size), counts):
                raise ValueError("nodes disagree with counts")
        counts.setflags(write=False)
        self.counts = counts
        self.round = int(round)
        self.nodes = nodes
        self.n = n
        self.k = counts.size - 1

    @classmethod
    def from_valid(cls, counts, invalid: int = 0, round: int = 0) -> "Configuration":
        """Build from the k valid counts; the invalid slot is appended."""
        return cls(np.append(np.asarray(counts, dtype=np.int64), invalid), round=round)

    @classmethod
    def uniform(cls, n: int, k: int) -> "Configuration":
        """n nodes spread as evenly as possible; the remainder goes to low ids."""
        if k < 1 or n < k:
            raise ValueError("need n >= k >= 1")
        base, rem = divmod(n, k)
        valid = np.full(k, base, dtype=np.int64)
        valid[:rem] += 1
        return cls.from_valid(valid)

    @property
    def fractions(self) -> np.ndarray:
        return self.counts / self.n

    @property
    def valid_counts(self) -> np.ndarray:
        return self.counts[:-1]

    @property
    def invalid_count(self) -> int:
        return int(self.counts[-1])

    def with_nodes(self) -> "Configuration":
        """Same configuration with node identities materialised (sorted by opinion)."""
        if self.nodes is not None:
            return self
        nodes = np.repeat(np.arange(self.k + 1, dtype=np.int32), self.counts)
        return Configuration(self.counts, self.round, nodes)

    def plurality(self) -> int:
        """1-based id of the largest valid opinion (lowest id on ties)."""
        return int(np.argmax(self.valid_counts)) + 1

    def is_consensus(self, slack: int = 0) -> bool:
        return int(self.counts.max()) >= self.n - slack

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.round == other.round and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"Configuration(n={self.n}, round={self.round}, counts={self.counts.tolist()})"


@dataclass
class RoundMoves:
    """Per-round switch log of the agent engine.

    ``samples`` holds the node ids each switcher sampled (one row per
    switcher); ``tie`` marks three-random switches decided by a random tie
    break.  ``before``/``after`` are the full node arrays around the round.
    """

    node: np.ndarray
    old: np.ndarray
    new: np.ndarray
    samples: np.ndarray
    tie: np.ndarray | None
    start_counts: np.ndarray
    before: np.ndarray = field(repr=False)
    after: np.ndarray = field(repr=False)
    variant: ProtocolVariant = DEFAULT_VARIANT

    def __len__(self):
        return int(self.node.size)


def check_fractions(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("expected a non-empty 1-d vector of fractions")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("fractions must lie in [0, 1]")
    if abs(p.sum() - 1.0) > SUM_TOL:
        raise ValueError(f"fractions sum to {p.sum()!r}, not 1")
    return p


def sigma2(p) -> float:
    """Sum of squared fractions, the outflow rate shared by every opinion."""
    p = check_fractions(p)
    return float(np.dot(p, p))


def mean_field_step(p) -> np.ndarray:
    """Expected next-round fractions: ``p_i * (1 + p_i - sigma2)``."""
    p = check_fractions(p)
    return p * (1.0 + p - np.dot(p, p))


def gap(p_i: float, p_j: float) -> float:
    """Relative lead of opinion i over j; ``1 + gap == p_i / p_j``."""
    if p_j <= 0:
        raise ValueError("gap is undefined when p_j == 0")
    return (p_i - p_j) / p_j


def _draw_samples(gen: np.random.Generator, n: int, s: int, self_sampling: bool) -> np.ndarray:
    if self_sampling:
        return gen.integers(0, n, size=(n, s))
    idx = gen.integers(0, n - 1, size=(n, s))
    # shift draws at or above the sampler's own id to skip it
    idx += idx >= np.arange(n)[:, None]
    return idx


def step_agent(config: Configuration, variant: ProtocolVariant = DEFAULT_VARIANT,
               rng: RandomSource | int | None = None, record: bool = True):
    """Run one synchronous round node by node.

    Returns ``(new_config, moves)``; ``moves`` is None when ``record`` is
    False.  All samples read the start-of-round opinions.
    """
    src = as_source(rng)
    gen = src.main
    config = config.with_nodes()
    nodes = config.nodes
    n = config.n

    s = variant.samples_per_node
    if n == 1:
        # a lone node only ever sees itself (or nobody)
        idx = np.zeros((1, s), dtype=np.int64)
    else:
        idx = _draw_samples(gen, n, s, variant.self_sampling)
    seen = nodes[idx]

    if variant.tag is Protocol.TWO_SAMPLE_OWN:
        switch = (seen[:, 0] == seen[:, 1]) & (seen[:, 0] != nodes)
        new_nodes = np.where(switch, seen[:, 0], nodes).astype(nodes.dtype)
        tie = None
    else:
        a, b, c = seen[:, 0], seen[:, 1], seen[:, 2]
        pick = gen.integers(0, 3, size=n)
        all_differ = (a != b) & (a != c) & (b != c)
        majority = np.where((a == b) | (a == c), a, np.where(b == c, b, -1))
        chosen = np.where(all_differ, seen[np.arange(n), pick], majority)
        new_nodes = chosen.astype(nodes.dtype)
        switch = new_nodes != nodes
        tie = all_differ

    new_counts = np.bincount(new_nodes, minlength=config.k + 1)
    new_config = Configuration(new_counts, config.round + 1, new_nodes)
    if not record:
        return new_config, None
    who = np.flatnonzero(switch)
    moves = RoundMoves(
        node=who,
        old=nodes[who],
        new=new_nodes[who],
        samples=idx[who],
        tie=None if tie is None else tie[who],
        start_counts=config.counts,
        before=nodes,
        after=new_nodes,
        variant=variant,
    )
    return new_config, moves


def step_aggregate(config: Configuration, variant: ProtocolVariant = DEFAULT_VARIANT,
                   rng: RandomSource | int | None = None) -> Configuration:
    """Count-level round, identically distributed to :func:`step_agent`.

    Each opinion's nodes split multinomially: to ``j != i`` with probability
    ``p_j**2``, otherwise stay.  Opinion i draws from its own stream.
    """
    if not variant.aggregate_ok:
        raise ValueError(
            "aggregate mode needs two-sample-own with self sampling; "
            f"got {variant.tag.value}, self_sampling={variant.self_sampling}")
    src = as_source(rng)
    counts = config.counts
    sq = (counts / config.n) ** 2
    new = np.zeros_like(counts)
    for i in range(counts.size):
        c = int(counts[i])
        if c == 0:
            continue
        probs = sq.copy()
        probs[i] = 0.0
        probs[i] = max(0.0, 1.0 - probs.sum())
        new += src.opinion(i).multinomial(c, probs)
    return Configuration(new, config.round + 1)


def step(config: Configuration, variant: ProtocolVariant = DEFAULT_VARIANT,
         rng: RandomSource | int | None = None, mode: str = "auto") -> Configuration:
    """Advance one round, picking the aggregate path when it is exact."""
    if mode not in ("auto", "agent", "aggregate"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "aggregate" or (mode == "auto" and variant.aggregate_ok and config.nodes is None):
        return step_aggregate(config, variant, rng)
    return step_agent(config, variant, rng, record=False)[0]


def default_max_rounds(n: int, k: int) -> int:
    """1000 * k * ceil(ln n), at least 1 and at most 10**7."""
    return int(min(10**7, max(1, 1000 * k * math.ceil(math.log(n)))))
