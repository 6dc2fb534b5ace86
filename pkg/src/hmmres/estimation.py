"""Maximum-likelihood HMM estimation over the delta-floored class.

EM (Baum-Welch) with a projection step that clips transition and
emission entries to the floor ``delta`` and renormalizes the surplus
mass above the floor, plus multi-restart search and the ``d*`` metric
on positive-parameter HMMs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._kernels import forward_backward_counts
from .hmm import Hmm, log_likelihood, _as_indices
from .probability import Alphabet, Rng

__all__ = [
    "HDeltaSpec",
    "FitResult",
    "is_in_h_delta",
    "em_step",
    "fit",
    "dstar_distance",
    "match_states",
]


@dataclass(frozen=True)
class HDeltaSpec:
    """Floored HMM class: all transition and emission entries >= delta."""

    delta: float
    k: int
    alphabet: Alphabet

    def __post_init__(self):
        if not 0.0 < self.delta:
            raise ValueError("delta must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.delta * self.k > 1.0 + 1e-12:
            raise ValueError(f"delta={self.delta} infeasible for k={self.k} transition rows")
        if self.delta * self.alphabet.size > 1.0 + 1e-12:
            raise ValueError(f"delta={self.delta} infeasible for {self.alphabet.size} symbols")


def is_in_h_delta(hmm: Hmm, delta: float, tol: float = 1e-12) -> bool:
    """True iff every transition and emission entry is >= delta."""
    return bool(hmm.transition.min() >= delta - tol and hmm.emissions.min() >= delta - tol)


def _project_row(row: np.ndarray, delta: float) -> tuple[np.ndarray, int]:
    """Clip a probability row to the delta floor and renormalize.

    Mass above the floor is rescaled so the row sums to 1 with every
    entry kept >= delta.  Returns the projected row and the number of
    entries the clip actually raised.
    """
    n = row.size
    if delta <= 0.0:
        return row, 0
    clipped = np.maximum(row, delta)
    n_clipped = int(np.sum(row < delta))
    s = clipped.sum()
    free = s - n * delta
    if free <= 1e-15:
        return np.full(n, delta + (1.0 - n * delta) / n), n_clipped
    out = delta + (clipped - delta) * (1.0 - n * delta) / free
    return out, n_clipped


def _m_step(trans_counts, emis_counts, gamma0, delta, old_hmm: Hmm):
    k = old_hmm.k
    p = np.empty_like(old_hmm.transition)
    e = np.empty_like(old_hmm.emissions)
    clip_events = 0
    for i in range(k):
        row_sum = trans_counts[i].sum()
        row = trans_counts[i] / row_sum if row_sum > 0 else old_hmm.transition[i]
        p[i], c1 = _project_row(row, delta)
        clip_events += c1
        erow_sum = emis_counts[i].sum()
        erow = emis_counts[i] / erow_sum if erow_sum > 0 else old_hmm.emissions[i]
        e[i], c2 = _project_row(erow, delta)
        clip_events += c2
    g = gamma0.sum()
    pi = gamma0 / g if g > 0 else np.full(k, 1.0 / k)
    return Hmm(old_hmm.alphabet, p, e), pi, clip_events


def em_step(hmm: Hmm, pi: np.ndarray, x, delta: float) -> tuple[Hmm, np.ndarray]:
    """One Baum-Welch E/M step followed by the delta projection."""
    new_hmm, new_pi, _, _ = _em_step_full(hmm, pi, x, delta)
    return new_hmm, new_pi


def _em_step_full(hmm: Hmm, pi: np.ndarray, x, delta: float):
    xi = _as_indices(x, hmm.alphabet)
    ll, tc, ec, g0 = forward_backward_counts(hmm.transition, hmm.emissions,
                                             np.asarray(pi, float), xi)
    if not math.isfinite(ll) or np.any(np.isnan(tc)) or np.any(np.isnan(ec)):
        raise ArithmeticError(
            f"EM E-step failed: loglik={ll}, check for zero-probability data "
            f"(min emission {hmm.emissions.min()}, min transition {hmm.transition.min()})"
        )
    new_hmm, new_pi, clip_events = _m_step(tc, ec, g0, delta, hmm)
    return new_hmm, new_pi, ll / xi.size, clip_events


@dataclass(frozen=True)
class FitResult:
    """Best-of-restarts EM outcome.

    ``loglik`` is bits per symbol of the returned parameters, recomputed
    by a fresh forward pass.
    """

    hmm: Hmm
    pi: np.ndarray
    loglik: float
    restarts_used: int
    iterations: tuple
    converged: tuple
    seed: int
    best_restart: int
    clip_events: int
    monotonicity_violations: int
    restart_logliks: tuple = ()

    def to_dict(self, trace: bool = False):
        d = {
            "hmm": self.hmm.to_dict(),
            "pi": [float(v) for v in self.pi],
            "loglik": float(self.loglik),
            "restarts_used": self.restarts_used,
            "seed": self.seed,
            "best_restart": self.best_restart,
            "clip_events": self.clip_events,
            "monotonicity_violations": self.monotonicity_violations,
        }
        if trace:
            d["iterations"] = list(self.iterations)
            d["converged"] = list(self.converged)
            d["restart_logliks"] = [float(v) for v in self.restart_logliks]
        return d


def _random_init(spec: HDeltaSpec, rng: Rng) -> tuple[Hmm, np.ndarray]:
    """Diagonal-dominant transitions plus Dirichlet emissions, floored."""
    k, nx = spec.k, spec.alphabet.size
    gen = rng.generator
    emissions = np.empty((k, nx))
    for i in range(k):
        emissions[i], _ = _project_row(gen.dirichlet(np.ones(nx)), spec.delta)
    p = np.empty((k, k))
    for i in range(k):
        stay = 0.7 + 0.25 * gen.random()
        if k == 1:
            p[i, 0] = 1.0
            continue
        off = gen.dirichlet(np.ones(k - 1)) * (1.0 - stay)
        row = np.insert(off, i, stay)
        p[i], _ = _project_row(row, spec.delta)
    return Hmm(spec.alphabet, p, emissions), np.full(k, 1.0 / k)


def _run_em(x, hmm: Hmm, pi: np.ndarray, delta: float, max_iter: int, tol: float):
    """EM loop from one start; returns the best parameters seen.

    Each E-step evaluates the loglik (bits/symbol) of the parameters
    entering it, so the best evaluated parameters are tracked directly.
    Iterations where the loglik decreased although the producing M-step
    applied no clip are counted as monotonicity breaches (reported, not
    raised).
    """
    pi = np.asarray(pi, float)
    best_hmm, best_pi, best_ll = hmm, pi, -math.inf
    prev_ll = None
    prev_clips = 0
    clip_total = 0
    mono_violations = 0
    iters = 0
    converged = False
    for _ in range(max_iter):
        new_hmm, new_pi, ll, clips = _em_step_full(hmm, pi, x, delta)
        iters += 1
        if ll > best_ll:
            best_ll, best_hmm, best_pi = ll, hmm, pi
        if prev_ll is not None:
            if ll < prev_ll - 1e-10 and prev_clips == 0:
                mono_violations += 1
            if abs(ll - prev_ll) < tol:
                hmm, pi = new_hmm, new_pi
                clip_total += clips
                converged = True
                break
        hmm, pi = new_hmm, new_pi
        prev_ll = ll
        prev_clips = clips
        clip_total += clips
    final_ll = log_likelihood(x, hmm, pi)
    if final_ll > best_ll:
        best_hmm, best_pi = hmm, pi
    return best_hmm, best_pi, iters, converged, clip_total, mono_violations


def fit(x, spec: HDeltaSpec, restarts: int = 10, max_iter: int = 500,
        tol: float = 1e-7, rng: Optional[Rng] = None,
        initial: Optional[Sequence[tuple]] = None) -> FitResult:
    """Best-of-restarts EM estimate in the delta-floored class.

    Each restart draws its own generator with seed ``rng.seed XOR index``
    so restarts are order-independent.  ``initial`` optionally pins the
    first starts to explicit ``(Hmm, pi)`` pairs.  Ties between restarts
    break toward the lowest restart index.
    """
    if len(x) < 2:
        raise ValueError("need at least 2 observations")
    if rng is None:
        rng = Rng(0)
    if restarts < 1:
        raise ValueError("need at least one restart")
    xi = _as_indices(x, spec.alphabet)

    best = None
    iters_all, conv_all, lls_all = [], [], []
    clip_total = 0
    mono_total = 0
    for r in range(restarts):
        if initial is not None and r < len(initial):
            h0, pi0 = initial[r]
            if not is_in_h_delta(h0, spec.delta):
                raise ValueError(f"initial point {r} is outside H_delta")
        else:
            h0, pi0 = _random_init(spec, rng.spawn(r))
        h, pi, iters, converged, clips, mono = _run_em(xi, h0, pi0, spec.delta,
                                                       max_iter, tol)
        ll = log_likelihood(xi, h, pi)
        iters_all.append(iters)
        conv_all.append(converged)
        lls_all.append(ll)
        clip_total += clips
        mono_total += mono
        if best is None or ll > best[0]:
            best = (ll, r, h, pi)

    ll, r_best, h_best, pi_best = best
    return FitResult(
        hmm=h_best, pi=pi_best, loglik=ll, restarts_used=restarts,
        iterations=tuple(iters_all), converged=tuple(conv_all), seed=rng.seed,
        best_restart=r_best, clip_events=clip_total,
        monotonicity_violations=mono_total, restart_logliks=tuple(lls_all),
    )


def parameter_log_ratio(v1: np.ndarray, v2: np.ndarray) -> float:
    """``max_t |log2(v1_t / v2_t)|`` over raw positive parameter vectors."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if v1.shape != v2.shape:
        raise ValueError("parameter vectors must align")
    if np.any(v1 <= 0.0) or np.any(v2 <= 0.0):
        raise ValueError("d* requires strictly positive parameters")
    return float(np.abs(np.log2(v1) - np.log2(v2)).max())


def dstar_distance(h1: Hmm, h2: Hmm) -> float:
    """Sup log2-ratio metric over the k^2 + k|X| HMM parameters."""
    if h1.k != h2.k or h1.alphabet != h2.alphabet:
        raise ValueError("HMMs must share state count and alphabet")
    v1 = np.concatenate([h1.transition.ravel(), h1.emissions.ravel()])
    v2 = np.concatenate([h2.transition.ravel(), h2.emissions.ravel()])
    return parameter_log_ratio(v1, v2)


def match_states(fitted: Hmm, reference_emissions: Sequence[np.ndarray]) -> np.ndarray:
    """Min-cost matching of fitted states to reference emissions by L1 distance.

    Returns ``perm`` with fitted state ``perm[j]`` assigned to reference
    row j (resolves the permutation ambiguity for evaluation).
    """
    from scipy.optimize import linear_sum_assignment

    ref = np.stack([np.asarray(r, float) for r in reference_emissions])
    cost = np.abs(ref[:, None, :] - fitted.emissions[None, :, :]).sum(axis=2)
    _, cols = linear_sum_assignment(cost)
    return cols
