"""Interval models: schedules, sampling, and exact combinatorial quantities.

An interval model tiles 1..horizon with consecutive intervals, each at
least ``m`` long and each assigned one of ``k`` source distributions.
Samples are independent across indices.  Indices are 0-based internally;
the 1-based interval boundaries of the usual notation are exposed via
:attr:`IntervalModel.boundaries`.

Pair/moment quantities computed "at N" consume a length-(N+1) prefix:
the N consecutive pairs (i, i+1) for i < N.  Sampling for moment code
therefore always requests length N+1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .moments import SecondMoment
from .probability import Alphabet, Distribution, Rng

__all__ = [
    "IntervalModel",
    "IntervalMoment",
    "LabeledSample",
    "ScheduleSpec",
    "build_schedule",
]

SCHEDULE_KINDS = ("fixed_length", "random_length", "alternating", "doubling_nonergodic", "explicit")


@dataclass(frozen=True)
class ScheduleSpec:
    """Recipe for an interval schedule.

    kind-specific params:
      fixed_length          base_length (>= m), sources assigned round-robin
      alternating           base_length (>= m), sources 0 and 1 alternate
      random_length         lengths uniform on [length_low, length_high],
                            next source drawn uniformly among the others
      doubling_nonergodic   lengths m, 2m, 4m, ... alternating between
                            sources 0 and 1 (weights oscillate forever)
      explicit              lengths + tau given verbatim
    """

    kind: str
    horizon: int
    base_length: Optional[int] = None
    length_low: Optional[int] = None
    length_high: Optional[int] = None
    lengths: Optional[tuple] = None
    tau: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")

    def to_dict(self):
        d = {"kind": self.kind, "horizon": self.horizon}
        for name in ("base_length", "length_low", "length_high"):
            if getattr(self, name) is not None:
                d[name] = getattr(self, name)
        if self.lengths is not None:
            d["lengths"] = list(self.lengths)
        if self.tau is not None:
            d["tau"] = list(self.tau)
        return d

    @classmethod
    def from_dict(cls, d) -> "ScheduleSpec":
        kw = dict(d)
        if "lengths" in kw:
            kw["lengths"] = tuple(kw["lengths"])
        if "tau" in kw:
            kw["tau"] = tuple(kw["tau"])
        return cls(**kw)


@dataclass(frozen=True)
class IntervalModel:
    """Interval schedule with per-interval source assignment.

    ``lengths[l]`` is the length of the l-th interval, ``tau[l]`` the
    0-based index of its source.  Every length is >= m and m > 2.
    """

    alphabet: Alphabet
    sources: tuple
    lengths: np.ndarray
    tau: np.ndarray
    m: int

    def __post_init__(self):
        if self.m <= 2:
            raise ValueError("dwell bound m must exceed 2")
        if not self.sources:
            raise ValueError("need at least one source")
        for s in self.sources:
            if s.alphabet != self.alphabet:
                raise ValueError("all sources must share the model alphabet")
        lengths = np.asarray(self.lengths, dtype=np.int64)
        tau = np.asarray(self.tau, dtype=np.int64)
        if lengths.ndim != 1 or lengths.size == 0 or tau.shape != lengths.shape:
            raise ValueError("lengths and tau must be equal-length nonempty vectors")
        if np.any(lengths < self.m):
            raise ValueError(f"interval shorter than m={self.m}: {lengths.min()}")
        if np.any(tau < 0) or np.any(tau >= len(self.sources)):
            raise ValueError("tau values out of range")
        lengths.setflags(write=False)
        tau.setflags(write=False)
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "tau", tau)

    @property
    def k(self) -> int:
        return len(self.sources)

    @property
    def horizon(self) -> int:
        return int(self.lengths.sum())

    @property
    def boundaries(self) -> list[tuple[int, int]]:
        """1-based inclusive interval endpoints [(b_1, e_1), ...]."""
        ends = np.cumsum(self.lengths)
        starts = np.concatenate([[1], ends[:-1] + 1])
        return [(int(b), int(e)) for b, e in zip(starts, ends)]

    def kappa(self, n: int) -> np.ndarray:
        """Per-index source labels for indices 0..n-1."""
        if n < 1 or n > self.horizon:
            raise ValueError(f"n={n} outside 1..horizon={self.horizon}")
        return np.repeat(self.tau, self.lengths)[:n]

    def change_points(self, n: int) -> np.ndarray:
        """0-based indices where the source differs from the previous index."""
        kap = self.kappa(n)
        return np.nonzero(np.diff(kap))[0] + 1

    def weights(self, n: int) -> np.ndarray:
        """Source proportions ``w_j = |K_j(n)| / n``."""
        kap = self.kappa(n)
        return np.bincount(kap, minlength=self.k) / float(n)

    def n_min(self, n: int) -> float:
        """``min_j w_j * n``: samples seen from the rarest source."""
        return float(self.weights(n).min() * n)

    def transition_counts(self, n: int) -> np.ndarray:
        """Label pair counts ``c[r, l] = |{i < n+1 : kappa_i=r, kappa_{i+1}=l}|``.

        Requires horizon >= n+1; counts sum to n and the off-diagonal
        mass is at most n/m.
        """
        if self.horizon < n + 1:
            raise ValueError(f"need horizon >= {n + 1}, have {self.horizon}")
        kap = self.kappa(n + 1)
        flat = kap[:-1] * self.k + kap[1:]
        return np.bincount(flat, minlength=self.k * self.k).reshape(self.k, self.k)

    def expected_moment(self, n: int) -> "IntervalMoment":
        """Expected pair moment ``M_X = (1/n) sum c_rl mu_r (x) mu_l``.

        Split into the within-interval (pure) part weighted by the
        diagonal counts and the cross-interval (mixed) remainder, whose
        L1 mass is at most 1/m.
        """
        counts = self.transition_counts(n)
        probs = np.stack([s.probs for s in self.sources])  # (k, |X|)
        total = probs.T @ (counts / float(n)) @ probs
        pure = probs.T @ (np.diag(np.diag(counts)) / float(n)) @ probs
        return IntervalMoment(SecondMoment(self.alphabet, total), pure, total - pure)

    def sample(self, length: int, rng: Rng) -> "LabeledSample":
        """Draw ``x_i ~ mu_{kappa(i)}`` independently for i < length."""
        if length > self.horizon:
            raise ValueError(f"length {length} exceeds horizon {self.horizon}")
        kap = self.kappa(length)
        cdfs = np.cumsum(np.stack([s.probs for s in self.sources]), axis=1)
        u = rng.generator.random(length)
        x = np.empty(length, dtype=np.int64)
        for j in range(self.k):
            mask = kap == j
            if mask.any():
                x[mask] = np.searchsorted(cdfs[j], u[mask], side="right")
        return LabeledSample(x=x, kappa=kap, model=self, seed=rng.seed)

    def to_dict(self):
        return {
            "alphabet": list(self.alphabet.symbols),
            "sources": [[float(p) for p in s.probs] for s in self.sources],
            "m": int(self.m),
            "lengths": [int(v) for v in self.lengths],
            "tau": [int(v) for v in self.tau],
        }

    @classmethod
    def from_dict(cls, d) -> "IntervalModel":
        alphabet = Alphabet(tuple(d["alphabet"]))
        sources = tuple(Distribution(alphabet, np.asarray(p, float)) for p in d["sources"])
        return cls(alphabet, sources, np.asarray(d["lengths"]), np.asarray(d["tau"]), int(d["m"]))


@dataclass(frozen=True)
class IntervalMoment:
    """Expected moment with its pure/mixed decomposition."""

    moment: SecondMoment
    pure: np.ndarray
    mixed: np.ndarray

    @property
    def mixed_mass(self) -> float:
        return float(np.abs(self.mixed).sum())


@dataclass(frozen=True)
class LabeledSample:
    """Observed symbol indices with their ground-truth source labels."""

    x: np.ndarray
    kappa: np.ndarray
    model: IntervalModel
    seed: int

    def __post_init__(self):
        if self.x.shape != self.kappa.shape:
            raise ValueError("x and kappa must align")

    def __len__(self):
        return int(self.x.size)

    def records(self):
        symbols = self.model.alphabet.symbols
        for i, (xi, ki) in enumerate(zip(self.x, self.kappa)):
            yield {"i": i, "symbol": symbols[int(xi)], "kappa": int(ki)}


def _schedule_lengths_tau(spec: ScheduleSpec, k: int, m: int, rng: Optional[Rng]):
    horizon = spec.horizon
    if spec.kind == "explicit":
        if spec.lengths is None or spec.tau is None:
            raise ValueError("explicit schedule needs lengths and tau")
        return list(spec.lengths), list(spec.tau)

    if spec.kind in ("fixed_length", "alternating"):
        base = spec.base_length if spec.base_length is not None else m
        if base < m:
            raise ValueError(f"base length {base} below m={m}")
        n_src = 2 if spec.kind == "alternating" else k
        if spec.kind == "alternating" and k < 2:
            raise ValueError("alternating schedule needs k >= 2")
        lengths, tau = [], []
        covered = 0
        idx = 0
        while covered < horizon:
            lengths.append(base)
            tau.append(idx % n_src)
            covered += base
            idx += 1
    elif spec.kind == "random_length":
        if rng is None:
            raise ValueError("random_length schedule needs an rng")
        low = spec.length_low if spec.length_low is not None else m
        high = spec.length_high if spec.length_high is not None else 2 * m
        if low < m:
            raise ValueError(f"length_low {low} below m={m}")
        if high < low:
            raise ValueError("length_high below length_low")
        lengths, tau = [], []
        covered = 0
        prev = -1
        while covered < horizon:
            ln = int(rng.generator.integers(low, high + 1))
            if k == 1:
                src = 0
            elif prev < 0:
                src = int(rng.generator.integers(0, k))
            else:
                # uniform over the k-1 sources other than the previous one
                src = int(rng.generator.integers(0, k - 1))
                if src >= prev:
                    src += 1
            lengths.append(ln)
            tau.append(src)
            covered += ln
            prev = src
    elif spec.kind == "doubling_nonergodic":
        if k < 2:
            raise ValueError("doubling_nonergodic schedule needs k >= 2")
        lengths, tau = [], []
        covered = 0
        t = 0
        while covered < horizon:
            lengths.append(m * (2 ** t))
            tau.append(t % 2)
            covered += lengths[-1]
            t += 1
    else:  # pragma: no cover
        raise AssertionError(spec.kind)

    # Trim the tail so the schedule tiles the horizon exactly.  If the
    # trimmed final interval would drop below m it is merged into its
    # predecessor instead.
    overshoot = sum(lengths) - horizon
    if overshoot > 0:
        if lengths[-1] - overshoot >= m:
            lengths[-1] -= overshoot
        elif len(lengths) >= 2:
            lengths.pop()
            tau.pop()
            lengths[-1] = horizon - sum(lengths[:-1])
        else:
            raise ValueError(f"horizon {horizon} shorter than one interval of length >= m")
    return lengths, tau


def build_schedule(spec: ScheduleSpec, sources: Sequence[Distribution], m: int,
                   rng: Optional[Rng] = None) -> IntervalModel:
    """Materialize a schedule spec into an :class:`IntervalModel`."""
    sources = tuple(sources)
    if not sources:
        raise ValueError("need at least one source")
    lengths, tau = _schedule_lengths_tau(spec, len(sources), m, rng)
    return IntervalModel(sources[0].alphabet, sources, np.asarray(lengths),
                         np.asarray(tau), m)
