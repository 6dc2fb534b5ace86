"""Second moments on symbol pairs, proper systems, and generalized moments.

A second moment is a probability matrix on X x X describing consecutive
pair frequencies.  Viewed as an operator, its image is spanned by the
row vectors ``M(a, .)``; column-space statements below refer to that
operator image.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .probability import Alphabet, Distribution, PROB_SUM_TOL, tv_distance

if TYPE_CHECKING:  # pragma: no cover
    from .hmm import Hmm

__all__ = [
    "SecondMoment",
    "ProperSystem",
    "empirical_moment",
    "marginalize_left",
    "marginalize_right",
    "generalized_moment",
    "generalized_moment_matrix",
    "canonical_phi",
    "d_phi",
    "column_space_residual",
]

PROPER_TOL = 1e-10


@dataclass(frozen=True)
class SecondMoment:
    """Probability matrix on X x X, indexed (first symbol, second symbol)."""

    alphabet: Alphabet
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        n = self.alphabet.size
        if m.shape != (n, n):
            raise ValueError(f"matrix shape {m.shape}, expected {(n, n)}")
        if np.any(m < -1e-12):
            raise ValueError(f"negative moment entry: min={m.min()}")
        m = np.where(m < 0.0, 0.0, m)
        if abs(m.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"moment entries sum to {m.sum()!r}, expected 1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def unchecked(cls, alphabet: Alphabet, matrix) -> "SecondMoment":
        """Skip validation.

        Internal escape hatch for generalized moments built from improper
        systems (used only inside the resilience LP); not part of the
        public construction path.
        """
        obj = object.__new__(cls)
        m = np.asarray(matrix, dtype=float).copy()
        m.setflags(write=False)
        object.__setattr__(obj, "alphabet", alphabet)
        object.__setattr__(obj, "matrix", m)
        return obj

    def tv_to(self, other: "SecondMoment") -> float:
        if self.alphabet != other.alphabet:
            raise ValueError("alphabet mismatch")
        return tv_distance(self.matrix, other.matrix)

    def to_dict(self):
        return {
            "alphabet": list(self.alphabet.symbols),
            "rows": [[float(x) for x in row] for row in self.matrix],
        }

    @classmethod
    def from_dict(cls, d) -> "SecondMoment":
        return cls(Alphabet(tuple(d["alphabet"])), np.asarray(d["rows"], dtype=float))


@dataclass(frozen=True)
class ProperSystem:
    """Family ``{phi_a}`` of nonnegative k-vectors with total mass 1.

    ``phi[a, j]`` is the j-th coordinate of ``phi_a``; the grand sum over
    all entries is 1 within 1e-10.
    """

    alphabet: Alphabet
    phi: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.phi, dtype=float)
        if p.ndim != 2 or p.shape[0] != self.alphabet.size:
            raise ValueError(f"phi shape {p.shape}, expected ({self.alphabet.size}, k)")
        if np.any(p < -PROPER_TOL):
            raise ValueError(f"improper system: negative entry {p.min()}")
        p = np.where(p < 0.0, 0.0, p)
        if abs(p.sum() - 1.0) > PROPER_TOL:
            raise ValueError(f"phi total mass {p.sum()!r}, expected 1")
        p.setflags(write=False)
        object.__setattr__(self, "phi", p)

    @property
    def k(self) -> int:
        return self.phi.shape[1]


def empirical_moment(x: np.ndarray, alphabet: Alphabet) -> SecondMoment:
    """Pair-frequency matrix of a symbol-index sequence of length N+1.

    ``M(a,b) = (1/N) |{i : x_i = a and x_{i+1} = b}|`` over the N
    consecutive pairs.
    """
    x = np.asarray(x, dtype=np.int64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need a sequence of length >= 2")
    n = alphabet.size
    flat = x[:-1] * n + x[1:]
    counts = np.bincount(flat, minlength=n * n).reshape(n, n)
    return SecondMoment(alphabet, counts / float(x.size - 1))


def marginalize_left(m: SecondMoment) -> Distribution:
    """First-symbol marginal ``sum_b M(a, b)``."""
    return Distribution.normalized(m.alphabet, m.matrix.sum(axis=1))


def marginalize_right(m: SecondMoment) -> Distribution:
    """Second-symbol marginal ``sum_b M(b, a)``."""
    return Distribution.normalized(m.alphabet, m.matrix.sum(axis=0))


def generalized_moment_matrix(phi: np.ndarray, transition: np.ndarray,
                              emissions: np.ndarray) -> np.ndarray:
    """Raw bilinear form ``M(a,b) = phi_a^T p chi_b`` with ``chi_b = emissions[:, b]``.

    No stochasticity is assumed; this is the computational core shared by
    the checked path and the LP.
    """
    phi = np.asarray(phi, dtype=float)
    return phi @ np.asarray(transition, dtype=float) @ np.asarray(emissions, dtype=float)


def generalized_moment(phi, hmm: "Hmm") -> SecondMoment:
    """Generalized second moment of an HMM over the system ``phi``.

    ``chi_b`` collects the HMM's emission probabilities of ``b`` across
    states.  A proper ``phi`` and a row-stochastic transition matrix give
    a stochastic result.
    """
    if isinstance(phi, ProperSystem):
        if phi.alphabet != hmm.alphabet:
            raise ValueError("alphabet mismatch between phi and HMM")
        mat = phi.phi
    else:
        mat = np.asarray(phi, dtype=float)
    if mat.shape != (hmm.alphabet.size, hmm.k):
        raise ValueError(f"phi shape {mat.shape}, expected ({hmm.alphabet.size}, {hmm.k})")
    out = generalized_moment_matrix(mat, hmm.transition, hmm.emissions)
    return SecondMoment(hmm.alphabet, out)


def canonical_phi(model, n: int) -> tuple[ProperSystem, np.ndarray]:
    """Canonical proper system of an interval model at horizon ``n``.

    Returns ``(phi, U)`` where ``U[r, l] = c_rl / n`` are the normalized
    transition counts and ``phi_a = (u_1 mu_1(a), ..., u_k mu_k(a))``
    with ``u_r`` the row sums of ``U``.  Its marginal ``d_phi`` equals
    the left marginal of the expected moment.
    """
    counts = model.transition_counts(n)
    u_matrix = counts / float(n)
    u = u_matrix.sum(axis=1)
    sources = np.stack([s.probs for s in model.sources])  # (k, |X|)
    phi = (sources * u[:, None]).T  # (|X|, k)
    return ProperSystem(model.alphabet, phi), u_matrix


def d_phi(phi: ProperSystem) -> Distribution:
    """Symbol marginal ``d_phi(a) = sum_j phi_a(j)`` of a proper system."""
    return Distribution.normalized(phi.alphabet, phi.phi.sum(axis=1))


def column_space_residual(m: SecondMoment, basis: Sequence[Distribution]) -> float:
    """Distance of the moment's operator image from ``span(basis)``.

    The image of a pair moment, viewed as an operator, is spanned by the
    vectors ``M(a, .)``; the residual is the max over ``a`` of the L2
    norm of ``M(a, .)`` after projecting out ``span(basis)``.  Rank
    deficiency in the basis is tolerated: projection is onto the span
    actually achieved.
    """
    if not basis:
        raise ValueError("basis must be nonempty")
    b = np.stack([d.probs for d in basis], axis=1)  # (|X|, n_basis)
    # Orthonormal basis of span(b), dropping numerically null directions.
    u, s, _ = np.linalg.svd(b, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-13)) if s.size else 0
    q = u[:, :rank]
    rows = m.matrix  # row a is the image vector for input delta_a
    resid = rows - (rows @ q) @ q.T
    return float(np.sqrt((resid ** 2).sum(axis=1)).max())
