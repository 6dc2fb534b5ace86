"""HMM representation, likelihoods, the reference HMM, and the unfolded chain.

Likelihood normalizations: a sequence ``x`` of length L = N+1 has N
transitions.  ``log_likelihood`` divides the total log2 probability by L
(per symbol); ``log_likelihood_per_transition`` divides by N; and
``single_path_loglik`` follows the single-path display, dividing by N.
Comparisons between the two conventions carry the (N+1)/N factor.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._kernels import forward_log2_prob
from .moments import SecondMoment
from .probability import Alphabet, Distribution, PROB_SUM_TOL

__all__ = [
    "Hmm",
    "UnfoldedChain",
    "PairMeasure",
    "log_likelihood",
    "log_likelihood_per_transition",
    "total_log2_prob",
    "brute_force_likelihood",
    "reference_hmm",
    "single_path_loglik",
    "unfold",
    "path_second_moment",
    "project_T",
    "markov_divergence",
]

BRUTE_FORCE_GUARD = 10 ** 7


@dataclass(frozen=True)
class Hmm:
    """Finite HMM: row-stochastic transition matrix plus emission rows.

    ``emissions[j]`` is the distribution of state j over the alphabet.
    """

    alphabet: Alphabet
    transition: np.ndarray
    emissions: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.transition, dtype=float)
        e = np.asarray(self.emissions, dtype=float)
        k = p.shape[0]
        if p.shape != (k, k):
            raise ValueError(f"transition must be square, got {p.shape}")
        if e.shape != (k, self.alphabet.size):
            raise ValueError(f"emissions shape {e.shape}, expected ({k}, {self.alphabet.size})")
        if np.any(p < -1e-12) or np.any(e < -1e-12):
            raise ValueError("negative parameter")
        p = np.where(p < 0.0, 0.0, p)
        e = np.where(e < 0.0, 0.0, e)
        if np.any(np.abs(p.sum(axis=1) - 1.0) > PROB_SUM_TOL):
            raise ValueError("transition rows must sum to 1")
        if np.any(np.abs(e.sum(axis=1) - 1.0) > PROB_SUM_TOL):
            raise ValueError("emission rows must sum to 1")
        p.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "emissions", e)

    @property
    def k(self) -> int:
        return self.transition.shape[0]

    @property
    def emission_distributions(self) -> tuple:
        return tuple(Distribution(self.alphabet, row) for row in self.emissions)

    def permuted(self, perm: Sequence[int]) -> "Hmm":
        """Relabel states by ``perm`` (new state i = old state perm[i])."""
        idx = np.asarray(perm, dtype=int)
        return Hmm(self.alphabet, self.transition[np.ix_(idx, idx)], self.emissions[idx])

    def to_dict(self):
        return {
            "k": self.k,
            "alphabet": list(self.alphabet.symbols),
            "transition": [[float(v) for v in row] for row in self.transition],
            "emissions": [[float(v) for v in row] for row in self.emissions],
        }

    @classmethod
    def from_dict(cls, d) -> "Hmm":
        return cls(Alphabet(tuple(d["alphabet"])), np.asarray(d["transition"], float),
                   np.asarray(d["emissions"], float))


def _as_indices(x, alphabet: Alphabet) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype.kind in "iu":
        return x.astype(np.int64)
    return np.asarray([alphabet.index(s) for s in x], dtype=np.int64)


def total_log2_prob(x, hmm: Hmm, pi: np.ndarray) -> float:
    """Unnormalized ``log2 P(x)`` under the HMM; -inf if no path survives."""
    xi = _as_indices(x, hmm.alphabet)
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (hmm.k,):
        raise ValueError(f"pi shape {pi.shape}, expected ({hmm.k},)")
    return float(forward_log2_prob(hmm.transition, hmm.emissions, pi, xi))


def log_likelihood(x, hmm: Hmm, pi: Optional[np.ndarray] = None) -> float:
    """Per-symbol normalized log-likelihood, bits: ``log2 P(x) / len(x)``.

    ``pi`` defaults to uniform over states.
    """
    if pi is None:
        pi = np.full(hmm.k, 1.0 / hmm.k)
    n = len(x)
    if n < 1:
        raise ValueError("empty sequence")
    return total_log2_prob(x, hmm, pi) / n


def log_likelihood_per_transition(x, hmm: Hmm, pi: Optional[np.ndarray] = None) -> float:
    """``log2 P(x) / (len(x) - 1)``: the per-transition normalization."""
    if pi is None:
        pi = np.full(hmm.k, 1.0 / hmm.k)
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 symbols for a transition")
    return total_log2_prob(x, hmm, pi) / (n - 1)


def brute_force_likelihood(x, hmm: Hmm, pi: np.ndarray) -> float:
    """Per-symbol log-likelihood by exact summation over all state paths.

    Reference oracle for the forward recursion; guarded to k^len <= 1e7
    enumerated paths.  The path probabilities are summed with
    ``math.fsum`` so the result does not depend on enumeration order.
    """
    xi = _as_indices(x, hmm.alphabet)
    n = xi.size
    k = hmm.k
    if k ** n > BRUTE_FORCE_GUARD:
        raise ValueError(f"{k}^{n} paths exceed the enumeration guard")
    pi = np.asarray(pi, dtype=float)
    # mixed-radix enumeration of all k^n paths, vectorized per time step
    n_paths = k ** n
    codes = np.arange(n_paths)
    paths = np.empty((n_paths, n), dtype=np.int64)
    for t in range(n - 1, -1, -1):
        paths[:, t] = codes % k
        codes //= k
    prob = pi[paths[:, 0]] * hmm.emissions[paths[:, 0], xi[0]]
    for t in range(1, n):
        prob = prob * hmm.transition[paths[:, t - 1], paths[:, t]]
        prob = prob * hmm.emissions[paths[:, t], xi[t]]
    total = math.fsum(prob.tolist())
    if total <= 0.0:
        return float("-inf")
    return math.log2(total) / n


def reference_hmm(sources: Sequence[Distribution], m: int,
                  first_state: Optional[int] = None) -> tuple[Hmm, np.ndarray]:
    """The diagonal-dominant HMM that tracks an interval model.

    Emissions are the model sources; ``p_ii = 1 - 1/m`` and
    ``p_ij = 1/((k-1) m)`` off the diagonal (``p = [[1]]`` when k = 1).
    ``pi`` is a point mass on ``first_state`` when given (the label of
    the first interval), else uniform.
    """
    sources = tuple(sources)
    k = len(sources)
    if k < 1:
        raise ValueError("need at least one source")
    if m <= 2:
        raise ValueError("m must exceed 2")
    if k == 1:
        p = np.ones((1, 1))
    else:
        off = 1.0 / ((k - 1) * m)
        p = np.full((k, k), off)
        np.fill_diagonal(p, 1.0 - 1.0 / m)
    emissions = np.stack([s.probs for s in sources])
    if first_state is None:
        pi = np.full(k, 1.0 / k)
    else:
        pi = np.zeros(k)
        pi[first_state] = 1.0
    return Hmm(sources[0].alphabet, p, emissions), pi


def single_path_loglik(x, hmm: Hmm, pi: np.ndarray, path: Sequence[int]) -> float:
    """Per-transition log contribution of one state path, bits.

    ``(1/N) [log2 pi(s_1) + sum log2 p_{s_i s_{i+1}} + sum log2 nu_{s_i}(x_i)]``
    with N = len(x) - 1.  Always a lower bound on the full forward sum
    (it is one summand of a positive sum); returns -inf when the path
    hits a zero parameter.
    """
    xi = _as_indices(x, hmm.alphabet)
    s = np.asarray(path, dtype=np.int64)
    if s.shape != xi.shape:
        raise ValueError("path length must equal sequence length")
    n = xi.size - 1
    if n < 1:
        raise ValueError("need at least 2 symbols")
    pi = np.asarray(pi, dtype=float)
    trans = hmm.transition[s[:-1], s[1:]]
    emis = hmm.emissions[s, xi]
    if pi[s[0]] <= 0.0 or np.any(trans <= 0.0) or np.any(emis <= 0.0):
        return float("-inf")
    total = math.log2(pi[s[0]]) + np.log2(trans).sum() + np.log2(emis).sum()
    return float(total) / n


@dataclass(frozen=True)
class UnfoldedChain:
    """Markov chain on state-symbol pairs reproducing the HMM's data law.

    States are ordered state-major: pair (i, a) has index ``i*|X| + a``.
    ``transition[(i,a),(j,b)] = p_ij * nu_j(b)``.
    """

    hmm: Hmm
    transition: np.ndarray

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def state_pairs(self) -> list[tuple[int, int]]:
        nx = self.hmm.alphabet.size
        return [(i, a) for i in range(self.hmm.k) for a in range(nx)]

    def initial_law(self, pi: np.ndarray) -> np.ndarray:
        """Law of the first unfolded state: ``pi(i) * nu_i(a)``."""
        return (np.asarray(pi, float)[:, None] * self.hmm.emissions).reshape(-1)


def unfold(hmm: Hmm) -> UnfoldedChain:
    """Build the unfolded chain on S x X."""
    k, nx = hmm.k, hmm.alphabet.size
    block = hmm.transition[:, :, None] * hmm.emissions[None, :, :]  # (i, j, b)
    p_prime = np.broadcast_to(block[:, None, :, :], (k, nx, k, nx)).reshape(k * nx, k * nx)
    return UnfoldedChain(hmm, np.ascontiguousarray(p_prime))


@dataclass(frozen=True)
class PairMeasure:
    """Probability matrix on S' x S' (consecutive unfolded-state pairs)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("pair measure must be square")
        if np.any(m < -1e-12):
            raise ValueError("negative entry")
        m = np.where(m < 0.0, 0.0, m)
        if abs(m.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"entries sum to {m.sum()!r}, expected 1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def left_marginal(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    @property
    def right_marginal(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    @property
    def is_stationary(self) -> bool:
        """Both marginals agree within 1e-10."""
        return bool(np.abs(self.left_marginal - self.right_marginal).max() <= 1e-10)


def path_second_moment(path: Sequence[int], n_states: int) -> PairMeasure:
    """Pair frequencies of a walk through S', normalized over its N pairs."""
    s = np.asarray(path, dtype=np.int64)
    if s.size < 2:
        raise ValueError("need a path of length >= 2")
    flat = s[:-1] * n_states + s[1:]
    counts = np.bincount(flat, minlength=n_states * n_states)
    return PairMeasure(counts.reshape(n_states, n_states) / float(s.size - 1))


def project_T(mp: PairMeasure, hmm: Hmm) -> SecondMoment:
    """Project a pair measure on S' x S' down to symbol pairs.

    ``T(M')(a,b) = sum_ij M'((i,a),(j,b))``; applied to the pair moment
    of a walk this gives exactly the empirical moment of the walk's data
    component.
    """
    k, nx = hmm.k, hmm.alphabet.size
    m4 = mp.matrix.reshape(k, nx, k, nx)
    return SecondMoment(hmm.alphabet, m4.sum(axis=(0, 2)))


def project_T_matrix(matrix: np.ndarray, k: int, nx: int) -> np.ndarray:
    """Raw T on an arbitrary S'xS' matrix (no stochasticity checks)."""
    return np.asarray(matrix, float).reshape(k, nx, k, nx).sum(axis=(0, 2))


def markov_divergence(mp: PairMeasure, chain: UnfoldedChain) -> float:
    """``D(M | p') = sum M(u,v) log2( M(u,v) / (Mbar(u) p'_uv) )`` in bits.

    Equals the KL divergence from M to ``z(u,v) = Mbar(u) p'_uv``;
    returns inf when M charges a zero of p'.
    """
    m = mp.matrix
    z = mp.left_marginal[:, None] * chain.transition
    pos = m > 0.0
    if np.any(z[pos] == 0.0):
        return math.inf
    return float(np.sum(m[pos] * (np.log2(m[pos]) - np.log2(z[pos]))))


def enumerate_sequences(n_symbols: int, length: int):
    """All symbol-index sequences of the given length (test/oracle helper)."""
    return itertools.product(range(n_symbols), repeat=length)
