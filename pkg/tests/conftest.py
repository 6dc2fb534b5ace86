import numpy as np
import pytest

from hmmres import Alphabet, Distribution, ScheduleSpec, build_schedule


@pytest.fixture
def ab2():
    return Alphabet(("a", "b"))


@pytest.fixture
def ab4():
    return Alphabet(("a", "b", "c", "d"))


@pytest.fixture
def toy_model(ab2):
    """Two intervals [1..5], [6..10] with 0.9/0.1-skewed sources."""
    mu1 = Distribution(ab2, np.array([0.9, 0.1]))
    mu2 = Distribution(ab2, np.array([0.1, 0.9]))
    spec = ScheduleSpec(kind="fixed_length", horizon=10, base_length=5)
    return build_schedule(spec, [mu1, mu2], 5)


@pytest.fixture
def acceptance_sources(ab4):
    """The TV-separated |X|=4 source pair used across the experiments."""
    mu1 = Distribution(ab4, np.array([0.7, 0.1, 0.1, 0.1]))
    mu2 = Distribution(ab4, np.array([0.1, 0.7, 0.1, 0.1]))
    return mu1, mu2


def random_distribution(alphabet, gen, floor=0.0):
    p = gen.dirichlet(np.ones(alphabet.size))
    if floor > 0.0:
        p = floor + (1.0 - alphabet.size * floor) * p
    return Distribution(alphabet, p)


def random_hmm(alphabet, k, gen, floor=0.0):
    from hmmres import Hmm

    def floored(row, n):
        if floor > 0.0:
            return floor + (1.0 - n * floor) * row
        return row

    p = np.stack([floored(gen.dirichlet(np.ones(k)), k) for _ in range(k)])
    e = np.stack([floored(gen.dirichlet(np.ones(alphabet.size)), alphabet.size)
                  for _ in range(k)])
    return Hmm(alphabet, p, e)
