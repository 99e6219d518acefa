"""Brute-force and closed-form oracles that stay independent of the engine."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import gammaln

from ..core import Configuration, Protocol, ProtocolVariant, DEFAULT_VARIANT
from ..rng import RandomSource, as_source

ENUMERATE_MAX_N = 6
JOINT_MAX_OUTCOMES = 2**20


def _outcome(own: int, seen: tuple, tag: Protocol) -> dict[int, Fraction]:
    """Distribution of the new opinion given what a node saw."""
    if tag is Protocol.TWO_SAMPLE_OWN:
        a, b = seen
        return {a if a == b else own: Fraction(1)}
    a, b, c = seen
    if a == b or a == c:
        return {a: Fraction(1)}
    if b == c:
        return {b: Fraction(1)}
    third = Fraction(1, 3)
    return {a: third, b: third, c: third}


def _peers(v: int, n: int, self_sampling: bool) -> list[int]:
    if self_sampling:
        return list(range(n))
    # a lone node has no peers; it behaves as if it saw itself
    return [u for u in range(n) if u != v] or [v]


def exact_round_expectation(config: Configuration, variant: ProtocolVariant = DEFAULT_VARIANT,
                            method: str = "law") -> list[Fraction]:
    """Exact expected next-round counts (length k+1, as Fractions).

    ``method``:
      * ``"law"``        sum each opinion's switch law over opinion tuples (any n)
      * ``"enumerate"``  enumerate every sample tuple of every node (n <= 6)
      * ``"joint"``      enumerate all joint outcomes of the round (n**(s*n) <= 2**20)
    """
    n, size = config.n, config.k + 1
    s = variant.samples_per_node
    counts = config.counts.tolist()
    expected = [Fraction(0)] * size

    if method == "law":
        for own in range(size):
            if counts[own] == 0:
                continue
            if n == 1 and not variant.self_sampling:
                expected[own] += counts[own]
                continue
            pool = list(counts)
            denom = n
            if not variant.self_sampling:
                pool[own] -= 1
                denom = n - 1
            probs = [Fraction(c, denom) for c in pool]
            for seen in itertools.product(range(size), repeat=s):
                w = math.prod(probs[x] for x in seen)
                if w == 0:
                    continue
                for op, q in _outcome(own, seen, variant.tag).items():
                    expected[op] += counts[own] * w * q
        return expected

    nodes = config.with_nodes().nodes.tolist()
    if method == "enumerate":
        if n > ENUMERATE_MAX_N:
            raise ValueError(f"node-level enumeration is capped at n <= {ENUMERATE_MAX_N}")
        for v in range(n):
            peers = _peers(v, n, variant.self_sampling)
            w = Fraction(1, len(peers) ** s)
            for tup in itertools.product(peers, repeat=s):
                seen = tuple(nodes[u] for u in tup)
                for op, q in _outcome(nodes[v], seen, variant.tag).items():
                    expected[op] += w * q
        return expected

    if method == "joint":
        per_node = [list(itertools.product(_peers(v, n, variant.self_sampling), repeat=s))
                    for v in range(n)]
        total = math.prod(len(p) for p in per_node)
        if total > JOINT_MAX_OUTCOMES:
            raise ValueError(f"{total} joint outcomes exceed the cap of {JOINT_MAX_OUTCOMES}")
        w = Fraction(1, total)
        dists = [[_outcome(nodes[v], tuple(nodes[u] for u in tup), variant.tag) for tup in per_node[v]]
                 for v in range(n)]
        for combo in itertools.product(*dists):
            for dist in combo:
                for op, q in dist.items():
                    expected[op] += w * q
        return expected

    raise ValueError(f"unknown method {method!r}")


@dataclass
class GaltonWatsonEstimate:
    offspring_mean: float
    size_threshold: int
    trials: int
    tail: float            # P(total size >= threshold)
    tail_se: float
    mean_size: float
    mean_size_se: float
    expected_size: float   # 1 / (1 - mean)


def galton_watson_sizes(offspring_mean: float, trials: int, rng=None,
                        offspring: str = "poisson", binomial_n: int = 10,
                        cap: int = 10**6) -> np.ndarray:
    """Total progeny (root included) of ``trials`` independent subcritical trees."""
    if not 0 <= offspring_mean < 1:
        raise ValueError("offspring mean must lie in [0, 1) (subcritical regime)")
    if offspring not in ("poisson", "binomial"):
        raise ValueError("offspring must be 'poisson' or 'binomial'")
    gen = as_source(rng).main if not isinstance(rng, np.random.Generator) else rng
    sizes = np.ones(trials, dtype=np.int64)
    current = np.ones(trials, dtype=np.int64)
    alive = np.ones(trials, dtype=bool)
    while alive.any():
        z = current[alive]
        # a generation of z parents has Poisson(m z) / Binomial(N z, m/N) children
        if offspring == "poisson":
            kids = gen.poisson(offspring_mean * z)
        else:
            kids = gen.binomial(binomial_n * z, offspring_mean / binomial_n)
        current[alive] = kids
        sizes[alive] += kids
        alive &= (current > 0) & (sizes < cap)
    return sizes


def galton_watson_tail(offspring_mean: float, size_threshold: int, trials: int,
                       rng: RandomSource | int | None = None, **kw) -> GaltonWatsonEstimate:
    """Monte-Carlo tail of the total tree size, with the exact mean for cross-checks."""
    if size_threshold < 1:
        raise ValueError("size_threshold must be >= 1")
    sizes = galton_watson_sizes(offspring_mean, trials, rng, **kw)
    hit = sizes >= size_threshold
    tail = float(hit.mean())
    return GaltonWatsonEstimate(
        offspring_mean=offspring_mean,
        size_threshold=size_threshold,
        trials=trials,
        tail=tail,
        tail_se=math.sqrt(max(tail * (1 - tail), 0.0) / trials),
        mean_size=float(sizes.mean()),
        mean_size_se=float(sizes.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf,
        expected_size=1.0 / (1.0 - offspring_mean),
    )


def borel_tail(offspring_mean: float, size: int) -> float:
    """Exact P(total size >= size) for Poisson offspring (Borel distribution)."""
    if not 0 <= offspring_mean < 1:
        raise ValueError("offspring mean must lie in [0, 1)")
    if size <= 1:
        return 1.0
    if offspring_mean == 0:
        return 0.0
    j = np.arange(1, size)
    m = offspring_mean
    logp = -m * j + (j - 1) * np.log(m * j) - gammaln(j + 1)
    return float(max(0.0, 1.0 - np.exp(logp).sum()))


def tail_shape_check(offspring_mean: float, t: int, trials: int,
                     rng: RandomSource | int | None = None, slack_se: float = 3.0, **kw) -> dict:
    """Exponential-decay shape: P(size >= 2t) <= P(size >= t)**2 up to sampling error.

    Both tails come from the same sample of trees.  The polynomial prefactor
    of subcritical tails makes the squared bound fail for large t (for Poisson
    offspring of mean 0.3 it already fails at t=4), so keep t small.
    """
    sizes = galton_watson_sizes(offspring_mean, trials, rng, **kw)
    a = float((sizes >= t).mean())
    b = float((sizes >= 2 * t).mean())
    se_b = math.sqrt(max(b * (1 - b), 0.0) / trials)
    return {"t": t, "tail_t": a, "tail_2t": b, "tail_2t_se": se_b, "tail_t_squared": a * a,
            "passed": b <= a * a + slack_se * se_b}
