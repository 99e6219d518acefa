import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dynlab.core import (DEFAULT_VARIANT, Configuration, Protocol, ProtocolVariant, default_max_rounds,
                         gap, mean_field_step, sigma2, step, step_agent, step_aggregate)
from dynlab.rng import RandomSource

THREE = ProtocolVariant(Protocol.THREE_RANDOM)
NO_SELF = ProtocolVariant(self_sampling=False)

valid_counts = st.lists(st.integers(0, 40), min_size=1, max_size=5).filter(lambda c: sum(c) >= 1)


def test_uniform_remainder_goes_to_low_ids():
    c = Configuration.uniform(10, 3)
    assert c.valid_counts.tolist() == [4, 3, 3]
    assert c.invalid_count == 0 and c.n == 10 and c.k == 3


@pytest.mark.parametrize("counts", [[], [5], [[1, 2]], [1, -1], [0, 0], [1.5, 1]])
def test_bad_counts_rejected(counts):
    with pytest.raises(ValueError):
        Configuration(counts)


def test_counts_are_read_only():
    c = Configuration.from_valid([3, 2])
    with pytest.raises(ValueError):
        c.counts[0] = 1


def test_nodes_must_match_counts():
    with pytest.raises(ValueError):
        Configuration([2, 1, 0], nodes=np.array([0, 1, 1]))


def test_plurality_and_consensus():
    c = Configuration.from_valid([1, 7, 2])
    assert c.plurality() == 2
    assert not c.is_consensus()
    assert c.is_consensus(slack=3)
    assert Configuration.from_valid([0, 5]).is_consensus()


def test_mean_field_two_opinions():
    p = np.array([0.6, 0.4])
    s2 = 0.52
    assert sigma2(p) == pytest.approx(s2)
    assert mean_field_step(p) == pytest.approx([0.6 * 1.08, 0.4 * 0.88])


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8))
def test_mean_field_preserves_total_mass(w):
    p = np.array(w) / sum(w)
    q = mean_field_step(p)
    assert q.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(q >= 0)


def test_fractions_validated():
    with pytest.raises(ValueError):
        sigma2([0.5, 0.6])
    with pytest.raises(ValueError):
        mean_field_step([-0.1, 1.1])


def test_gap_definition():
    assert gap(0.6, 0.4) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        gap(0.5, 0.0)


@settings(max_examples=40, deadline=None)
@given(valid_counts, st.integers(0, 2**16), st.sampled_from([DEFAULT_VARIANT, THREE, NO_SELF]))
def test_agent_step_conserves_nodes(counts, seed, variant):
    c = Configuration.from_valid(counts)
    new, moves = step_agent(c, variant, RandomSource(seed))
    assert new.n == c.n and new.round == 1
    assert np.array_equal(np.bincount(new.nodes, minlength=c.k + 1), new.counts)
    assert np.all(moves.old != moves.new)


@settings(max_examples=40, deadline=None)
@given(valid_counts, st.integers(0, 2**16))
def test_aggregate_step_conserves_nodes(counts, seed):
    c = Configuration.from_valid(counts)
    new = step_aggregate(c, rng=RandomSource(seed))
    assert new.n == c.n
    assert new.invalid_count == 0


@settings(max_examples=30, deadline=None)
@given(valid_counts, st.integers(0, 2**16))
def test_consensus_is_absorbing(counts, seed):
    k = len(counts)
    c = Configuration.from_valid([sum(counts)] + [0] * (k - 1))
    for variant in (DEFAULT_VARIANT, THREE, NO_SELF):
        assert step_agent(c, variant, seed)[0].counts.tolist() == c.counts.tolist()


def test_two_sample_switches_only_on_agreement():
    c = Configuration.from_valid([30, 30, 40]).with_nodes()
    _, moves = step_agent(c, rng=RandomSource(4))
    seen = c.nodes[moves.samples]
    assert np.all(seen[:, 0] == seen[:, 1])
    assert np.all(seen[:, 0] == moves.new)


def test_three_random_ties_pick_a_sample():
    c = Configuration.from_valid([10, 10, 10]).with_nodes()
    _, moves = step_agent(c, THREE, RandomSource(2))
    seen = c.nodes[moves.samples]
    assert moves.tie.any()
    for row, new, tie in zip(seen, moves.new, moves.tie):
        assert new in row
        if not tie:
            assert np.count_nonzero(row == new) >= 2


def test_exclude_self_never_samples_self():
    c = Configuration.from_valid([5, 5]).with_nodes()
    gen_src = RandomSource(9)
    for _ in range(20):
        c, moves = step_agent(c, NO_SELF, gen_src)
        assert np.all(moves.samples != moves.node[:, None])


def test_single_node():
    c = Configuration.from_valid([1])
    assert step_agent(c, NO_SELF, 0)[0].counts.tolist() == [1, 0]
    assert step_aggregate(c, rng=0).counts.tolist() == [1, 0]


def test_aggregate_refuses_inexact_variants():
    c = Configuration.from_valid([5, 5])
    for v in (THREE, NO_SELF):
        with pytest.raises(ValueError):
            step_aggregate(c, v)
    with pytest.raises(ValueError):
        step(c, mode="sideways")


def test_same_seed_same_trajectory():
    c = Configuration.uniform(500, 3).with_nodes()
    a, b = c, c
    sa, sb = RandomSource(11, 2), RandomSource(11, 2)
    for _ in range(5):
        a, _ = step_agent(a, THREE, sa)
        b, _ = step_agent(b, THREE, sb)
    assert np.array_equal(a.nodes, b.nodes)
    other = step_agent(c, THREE, RandomSource(11, 3))[0]
    assert not np.array_equal(other.nodes, step_agent(c, THREE, RandomSource(11, 2))[0].nodes)


def test_drift_matches_mean_field():
    # M independent single rounds from one configuration, each mean within 4 SE
    c = Configuration.from_valid([500, 300, 200])
    m = 10**5
    src = RandomSource(21)
    out = np.array([step_aggregate(c, rng=src).counts[:3] for _ in range(m)]) / c.n
    expect = mean_field_step(c.fractions[:3])
    se = out.std(axis=0, ddof=1) / math.sqrt(m)
    assert np.all(np.abs(out.mean(axis=0) - expect) <= 4 * se)


def test_agent_and_aggregate_agree_in_distribution():
    c = Configuration.from_valid([600, 400])
    agent_c = c.with_nodes()
    src_a, src_b = RandomSource(5), RandomSource(6)
    m = 3000
    a = [step_agent(agent_c, rng=src_a, record=False)[0].counts[0] for _ in range(m)]
    b = [step_aggregate(c, rng=src_b).counts[0] for _ in range(m)]
    assert stats.ks_2samp(a, b).pvalue > 0.001


def test_default_round_cap():
    assert default_max_rounds(10**4, 2) == 1000 * 2 * math.ceil(math.log(10**4))
    assert default_max_rounds(1, 1) == 1
    assert default_max_rounds(2**40, 10**4) == 10**7
