import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmmres import (Alphabet, Distribution, IntervalModel, Rng, ScheduleSpec,
                    build_schedule, tv_distance)
from oracles import count_pairs, naive_expected_moment, naive_label_counts


def two_sources(ab2):
    return (Distribution(ab2, np.array([0.9, 0.1])),
            Distribution(ab2, np.array([0.1, 0.9])))


def test_fixed_length_layout(toy_model):
    assert toy_model.boundaries == [(1, 5), (6, 10)]
    assert list(toy_model.tau) == [0, 1]


def test_explicit_short_interval_rejected(ab2):
    spec = ScheduleSpec(kind="explicit", horizon=9, lengths=(5, 4), tau=(0, 1))
    with pytest.raises(ValueError):
        build_schedule(spec, two_sources(ab2), 5)


def test_m_must_exceed_two(ab2):
    spec = ScheduleSpec(kind="fixed_length", horizon=10, base_length=5)
    with pytest.raises(ValueError):
        build_schedule(spec, two_sources(ab2), 2)


def test_doubling_lengths(ab2):
    spec = ScheduleSpec(kind="doubling_nonergodic", horizon=60)
    model = build_schedule(spec, two_sources(ab2), 4)
    assert list(model.lengths) == [4, 8, 16, 32]
    assert list(model.tau) == [0, 1, 0, 1]


def test_weights_toy(toy_model):
    assert np.allclose(toy_model.weights(10), [0.5, 0.5])


def test_weights_single_source(ab2):
    mu = Distribution(ab2, np.array([0.9, 0.1]))
    spec = ScheduleSpec(kind="explicit", horizon=7, lengths=(7,), tau=(0,))
    model = build_schedule(spec, [mu], 5)
    assert np.allclose(model.weights(7), [1.0])
    assert model.n_min(7) == 7


def test_weights_doubling_hand_count(ab2):
    spec = ScheduleSpec(kind="doubling_nonergodic", horizon=60)
    model = build_schedule(spec, two_sources(ab2), 4)
    # hand count over the boundary list: intervals 4, 8, 16, 32
    kappa = model.kappa(28)
    assert np.isclose(model.weights(12)[0], np.mean(model.kappa(12) == 0))
    assert model.weights(12)[0] == pytest.approx(4 / 12)
    assert model.weights(28)[0] == pytest.approx(np.mean(kappa == 0)) == pytest.approx(20 / 28)
    assert model.n_min(12) == pytest.approx(4.0)


def test_n_min_toy(toy_model):
    assert toy_model.n_min(10) == pytest.approx(5.0)


def test_transition_counts_hand_enumeration(toy_model):
    counts = toy_model.transition_counts(9)
    assert counts.tolist() == [[4, 1], [0, 4]]
    oracle = naive_label_counts(toy_model.kappa(10), toy_model.k)
    assert np.array_equal(counts, oracle)
    assert counts.sum() == 9


def test_transition_counts_single_interval(ab2):
    mu = Distribution(ab2, np.array([0.9, 0.1]))
    spec = ScheduleSpec(kind="explicit", horizon=7, lengths=(7,), tau=(0,))
    model = build_schedule(spec, [mu], 5)
    assert model.transition_counts(6).tolist() == [[6]]


def test_transition_counts_needs_horizon(toy_model):
    with pytest.raises(ValueError):
        toy_model.transition_counts(10)


@given(st.integers(min_value=0, max_value=10 ** 6))
@settings(max_examples=40, deadline=None)
def test_offdiagonal_mass_bounded(seed):
    gen = np.random.default_rng(seed)
    ab = Alphabet.of_size(2)
    k = int(gen.integers(1, 4))
    sources = [Distribution(ab, gen.dirichlet(np.ones(2))) for _ in range(k)]
    m = int(gen.integers(3, 9))
    spec = ScheduleSpec(kind="random_length", horizon=200, length_low=m,
                        length_high=3 * m)
    model = build_schedule(spec, sources, m, Rng(seed))
    n = int(gen.integers(1, model.horizon - 1))
    counts = model.transition_counts(n)
    off = counts.sum() - np.trace(counts)
    assert off <= n / m + 1e-9
    # tiling and dwell invariants
    assert model.lengths.min() >= m
    assert model.lengths.sum() == 200
    assert model.weights(n).sum() == pytest.approx(1.0)


def test_expected_moment_single_source(ab2):
    mu = Distribution(ab2, np.array([0.9, 0.1]))
    spec = ScheduleSpec(kind="explicit", horizon=12, lengths=(12,), tau=(0,))
    model = build_schedule(spec, [mu], 5)
    im = model.expected_moment(11)
    assert np.allclose(im.moment.matrix, np.outer(mu.probs, mu.probs), atol=1e-15)
    assert im.mixed_mass == pytest.approx(0.0, abs=1e-15)


def test_expected_moment_direct_evaluation(toy_model):
    im = toy_model.expected_moment(9)
    assert im.moment.matrix[0, 0] == pytest.approx(3.37 / 9, abs=1e-12)
    assert im.moment.matrix.sum() == pytest.approx(1.0, abs=1e-12)


def test_expected_moment_matches_tensor_oracle(toy_model):
    im = toy_model.expected_moment(9)
    probs = np.stack([s.probs for s in toy_model.sources])
    oracle = naive_expected_moment(toy_model.transition_counts(9), probs, 9)
    assert np.abs(im.moment.matrix - oracle).max() <= 1e-12


def test_mixed_mass_bound(toy_model):
    im = toy_model.expected_moment(9)
    assert im.mixed_mass <= 1.0 / toy_model.m + 1e-12
    assert np.allclose(im.pure + im.mixed, im.moment.matrix)


def test_sample_point_mass_sources(ab2):
    mu = Distribution.point_mass(ab2, "a")
    spec = ScheduleSpec(kind="explicit", horizon=20, lengths=(10, 10), tau=(0, 0))
    model = build_schedule(spec, [mu], 5)
    s = model.sample(20, Rng(3))
    assert np.all(s.x == 0)


def test_sample_within_interval_frequency(ab2):
    sources = two_sources(ab2)
    spec = ScheduleSpec(kind="fixed_length", horizon=100_000, base_length=5)
    model = build_schedule(spec, sources, 5)
    s = model.sample(100_000, Rng(11))
    freq = np.mean(s.x[s.kappa == 0] == 0)
    assert abs(freq - 0.9) < 0.01


def test_sample_determinism(toy_model):
    s1 = toy_model.sample(10, Rng(42))
    s2 = toy_model.sample(10, Rng(42))
    assert np.array_equal(s1.x, s2.x)
    assert np.array_equal(s1.kappa, s2.kappa)


def test_sample_respects_horizon(toy_model):
    with pytest.raises(ValueError):
        toy_model.sample(11, Rng(0))


def test_kappa_matches_tau(toy_model):
    kap = toy_model.kappa(10)
    for (b, e), t in zip(toy_model.boundaries, toy_model.tau):
        assert np.all(kap[b - 1:e] == t)


def test_empirical_frequency_matches_pair_oracle(toy_model):
    s = toy_model.sample(10, Rng(5))
    pairs = count_pairs(s.x, 2)
    assert pairs.sum() == 9


def test_ergodicity_diagnostic_fixed_length(ab2):
    sources = two_sources(ab2)
    m = 5
    spec = ScheduleSpec(kind="fixed_length", horizon=5000, base_length=m)
    model = build_schedule(spec, sources, m)
    for n in (40, 137, 1000, 4999):
        w = model.weights(n)
        assert np.all(np.abs(w - 0.5) <= m / n + 1e-12)


def test_nonergodicity_diagnostic_doubling(ab2):
    spec = ScheduleSpec(kind="doubling_nonergodic", horizon=4 * (2 ** 10))
    model = build_schedule(spec, two_sources(ab2), 4)
    ends = np.cumsum(model.lengths)
    w1 = np.array([model.weights(int(n))[0] for n in ends])
    assert w1.max() - w1.min() >= 0.25


def test_alternating_equals_round_robin_for_two(ab2):
    s1 = build_schedule(ScheduleSpec(kind="alternating", horizon=30, base_length=5),
                        two_sources(ab2), 5)
    s2 = build_schedule(ScheduleSpec(kind="fixed_length", horizon=30, base_length=5),
                        two_sources(ab2), 5)
    assert np.array_equal(s1.tau, s2.tau)


def test_model_json_roundtrip(toy_model):
    back = IntervalModel.from_dict(toy_model.to_dict())
    assert back.boundaries == toy_model.boundaries
    assert np.array_equal(back.tau, toy_model.tau)
    assert back.m == toy_model.m


def test_labeled_sample_records(toy_model):
    s = toy_model.sample(3, Rng(1))
    recs = list(s.records())
    assert recs[0]["i"] == 0 and "symbol" in recs[0] and recs[0]["kappa"] == 0


def test_ergodicity_diagnostic_three_sources():
    ab = Alphabet.of_size(2)
    gen = np.random.default_rng(1)
    sources = [Distribution(ab, gen.dirichlet(np.ones(2))) for _ in range(3)]
    m = 4
    model = build_schedule(ScheduleSpec(kind="fixed_length", horizon=3000,
                                        base_length=m), sources, m)
    for n in (60, 500, 2999):
        w = model.weights(n)
        assert np.all(np.abs(w - 1 / 3) <= m / n + 1e-12)


def test_fixed_length_base_below_m_rejected(ab2):
    spec = ScheduleSpec(kind="fixed_length", horizon=20, base_length=4)
    with pytest.raises(ValueError):
        build_schedule(spec, two_sources(ab2), 5)
