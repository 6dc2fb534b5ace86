"""Finite-alphabet probability primitives.

Conventions used throughout the package:

* All logarithms are base 2; entropies, divergences and likelihoods are
  reported in bits.
* Total variation is the UN-HALVED L1 sum ``sum_a |mu(a) - nu(a)|`` and
  therefore ranges over [0, 2].  This differs from the common convention
  (half the L1 norm) by a factor of 2.
* ``0 * log 0 := 0``.
* Divergences that are infinite return ``math.inf`` explicitly; no
  computation is allowed to overflow into an accidental inf.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Alphabet",
    "Distribution",
    "Rng",
    "entropy",
    "kl_divergence",
    "tv_distance",
    "sample_categorical",
    "derive_seed",
]

PROB_SUM_TOL = 1e-12
NEG_ENTRY_TOL = 1e-12


@dataclass(frozen=True)
class Alphabet:
    """Ordered finite ground set of symbols.

    The ordering is fixed for the lifetime of a run: every vector and
    matrix in the package is indexed by it.
    """

    symbols: tuple

    def __post_init__(self):
        if len(self.symbols) < 2:
            raise ValueError("alphabet needs at least 2 symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be distinct")
        object.__setattr__(self, "symbols", tuple(self.symbols))

    @property
    def size(self) -> int:
        return len(self.symbols)

    def index(self, symbol) -> int:
        return self.symbols.index(symbol)

    @classmethod
    def of_size(cls, n: int) -> "Alphabet":
        return cls(tuple(f"s{i}" for i in range(n)))

    def to_dict(self):
        return {"symbols": list(self.symbols)}

    @classmethod
    def from_dict(cls, d) -> "Alphabet":
        return cls(tuple(d["symbols"]))


@dataclass(frozen=True)
class Distribution:
    """Probability vector over an :class:`Alphabet`.

    Entries must be nonnegative and sum to 1 within ``1e-12``.
    """

    alphabet: Alphabet
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (self.alphabet.size,):
            raise ValueError(
                f"probs shape {p.shape} does not match alphabet size {self.alphabet.size}"
            )
        if np.any(p < -NEG_ENTRY_TOL):
            raise ValueError(f"negative probability entry: min={p.min()}")
        p = np.where(p < 0.0, 0.0, p)
        if abs(p.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, expected 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def normalized(cls, alphabet: Alphabet, weights) -> "Distribution":
        w = np.asarray(weights, dtype=float)
        s = w.sum()
        if s <= 0:
            raise ValueError("weights must have positive sum")
        return cls(alphabet, w / s)

    @classmethod
    def uniform(cls, alphabet: Alphabet) -> "Distribution":
        return cls(alphabet, np.full(alphabet.size, 1.0 / alphabet.size))

    @classmethod
    def point_mass(cls, alphabet: Alphabet, symbol) -> "Distribution":
        p = np.zeros(alphabet.size)
        p[alphabet.index(symbol)] = 1.0
        return cls(alphabet, p)

    def __getitem__(self, symbol) -> float:
        return float(self.probs[self.alphabet.index(symbol)])

    def to_dict(self):
        return {"alphabet": list(self.alphabet.symbols), "probs": [float(x) for x in self.probs]}

    @classmethod
    def from_dict(cls, d) -> "Distribution":
        return cls(Alphabet(tuple(d["alphabet"])), np.asarray(d["probs"], dtype=float))


class Rng:
    """Seeded deterministic generator (numpy PCG64).

    Identical seed gives the identical sample stream on every platform.
    An ``Rng`` instance is single-owner: never share one across
    concurrent tasks; derive children with :meth:`spawn` instead.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, index: int) -> "Rng":
        """Child generator with seed ``self.seed XOR index``."""
        return Rng(self.seed ^ int(index))

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def derive_seed(seed: int, stage: str) -> int:
    """Stable 64-bit seed for a named pipeline stage.

    Keeps sampling streams of distinct stages (data generation, fitting,
    classification) decorrelated while remaining reproducible.
    """
    digest = hashlib.sha256(f"{int(seed)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _check_same_alphabet(mu: Distribution, nu: Distribution):
    if mu.alphabet != nu.alphabet:
        raise ValueError("distributions are on different alphabets")


def entropy(mu: Distribution) -> float:
    """Shannon entropy in bits, ``-sum_a mu(a) log2 mu(a)``."""
    p = mu.probs
    nz = p > 0.0
    return float(-np.sum(p[nz] * np.log2(p[nz])))


def kl_divergence(nu: Distribution, mu: Distribution) -> float:
    """``D(nu | mu) = sum_a nu(a) log2(nu(a)/mu(a))`` in bits.

    Returns ``math.inf`` when ``nu`` charges a point outside the support
    of ``mu``.
    """
    _check_same_alphabet(nu, mu)
    q = nu.probs
    p = mu.probs
    nz = q > 0.0
    if np.any(p[nz] == 0.0):
        return math.inf
    return float(np.sum(q[nz] * (np.log2(q[nz]) - np.log2(p[nz]))))


def tv_distance(mu, nu) -> float:
    """Un-halved L1 distance ``sum |mu - nu|``; range [0, 2].

    Accepts two :class:`Distribution` objects or two equally shaped
    arrays (e.g. pair-moment matrices, where the sum runs over X x X).
    """
    if isinstance(mu, Distribution) and isinstance(nu, Distribution):
        _check_same_alphabet(mu, nu)
        return float(np.abs(mu.probs - nu.probs).sum())
    a = np.asarray(mu, dtype=float)
    b = np.asarray(nu, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def sample_index(probs: np.ndarray, rng: Rng) -> int:
    """Index of one categorical draw via inverse CDF."""
    cdf = np.cumsum(probs)
    u = rng.generator.random()
    return int(np.searchsorted(cdf, u, side="right"))


def sample_categorical(mu: Distribution, rng: Rng):
    """One symbol drawn from ``mu``; advances ``rng`` deterministically."""
    return mu.alphabet.symbols[sample_index(mu.probs, rng)]
