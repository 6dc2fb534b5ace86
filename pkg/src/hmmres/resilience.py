"""The resilience quantity D(H) and the empirical bound verifications.

``D(H)`` is the total-variation distance (un-halved L1) from a reference
pair moment to the closest generalized moment of the HMM, taken over
proper systems whose symbol marginal stays within 3/m of the reference
left marginal, minus the slack 3/m.  It is computed exactly as a small
dense linear program.

The check functions draw seeded samples, evaluate both sides of the
corresponding inequality with independently recomputed constants, and
return per-seed rows plus aggregates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .estimation import HDeltaSpec, fit
from .hmm import Hmm, log_likelihood, reference_hmm, total_log2_prob
from .intervals import IntervalModel
from .moments import ProperSystem, SecondMoment, empirical_moment
from .probability import Rng, derive_seed, entropy

__all__ = [
    "DhResult",
    "CheckReport",
    "dh",
    "resilience_bound",
    "reference_likelihood_check",
    "moment_concentration_check",
    "aep_check",
    "sanov_check",
    "resilience_experiment",
    "nonergodic_sweep",
]

SANOV_SEQ_GUARD = 10 ** 7


@dataclass(frozen=True)
class DhResult:
    """Outcome of the D(H) linear program.

    ``raw`` may be negative (moments match better than the slack); the
    headline value is ``clamped = max(raw, 0)``.
    """

    raw: float
    clamped: float
    argmin_phi: ProperSystem
    lp_status: str
    objective_gap: float

    def to_dict(self):
        return {
            "raw": float(self.raw),
            "clamped": float(self.clamped),
            "lp_status": self.lp_status,
            "objective_gap": float(self.objective_gap),
            "argmin_phi": [[float(v) for v in row] for row in self.argmin_phi.phi],
        }


def dh(m_ref: SecondMoment, hmm: Hmm, m: int, tol: float = 1e-8) -> DhResult:
    """Solve ``inf_{phi in P} ||M_ref - M_{phi,H}||_TV - 3/m`` exactly.

    Variables are the phi entries plus epigraph variables for the
    objective absolute values and for the marginal-ball constraint
    ``sum_a |d_phi(a) - Mbar_ref(a)| <= 3/m``; the grand sum of phi is
    pinned to 1.  Solved with the HiGHS dense solver; the canonical-type
    system with ``d_phi = Mbar_ref`` is always feasible.
    """
    if m_ref.alphabet != hmm.alphabet:
        raise ValueError("alphabet mismatch between moment and HMM")
    if m <= 2:
        raise ValueError("m must exceed 2")
    nx, k = hmm.alphabet.size, hmm.k
    n_phi = nx * k
    n_t = nx * nx
    n_g = nx
    n_var = n_phi + n_t + n_g
    q = hmm.transition @ hmm.emissions  # (k, |X|): q[i, b]
    mbar = m_ref.matrix.sum(axis=1)

    cost = np.zeros(n_var)
    cost[n_phi:n_phi + n_t] = 1.0

    rows_ub = []
    b_ub = []
    # |M_ref(a,b) - sum_i phi[a,i] q[i,b]| <= t_ab
    for a in range(nx):
        for b in range(nx):
            t_idx = n_phi + a * nx + b
            row = np.zeros(n_var)
            row[a * k:(a + 1) * k] = q[:, b]
            row[t_idx] = -1.0
            rows_ub.append(row.copy())
            b_ub.append(m_ref.matrix[a, b])
            row[a * k:(a + 1) * k] = -q[:, b]
            rows_ub.append(row)
            b_ub.append(-m_ref.matrix[a, b])
    # |d_phi(a) - mbar(a)| <= g_a
    for a in range(nx):
        g_idx = n_phi + n_t + a
        row = np.zeros(n_var)
        row[a * k:(a + 1) * k] = 1.0
        row[g_idx] = -1.0
        rows_ub.append(row.copy())
        b_ub.append(mbar[a])
        row[a * k:(a + 1) * k] = -1.0
        rows_ub.append(row)
        b_ub.append(-mbar[a])
    # sum_a g_a <= 3/m
    row = np.zeros(n_var)
    row[n_phi + n_t:] = 1.0
    rows_ub.append(row)
    b_ub.append(3.0 / m)

    a_eq = np.zeros((1, n_var))
    a_eq[0, :n_phi] = 1.0

    res = linprog(cost, A_ub=np.stack(rows_ub), b_ub=np.asarray(b_ub),
                  A_eq=a_eq, b_eq=np.ones(1), bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": min(tol, 1e-8),
                           "dual_feasibility_tolerance": min(tol, 1e-8)})
    if not res.success:
        raise RuntimeError(f"D(H) LP failed: status={res.status} {res.message}")

    phi = res.x[:n_phi].reshape(nx, k)
    phi = np.where(phi < 0.0, 0.0, phi)
    phi = phi / phi.sum()
    raw = float(res.fun) - 3.0 / m
    return DhResult(raw=raw, clamped=max(raw, 0.0),
                    argmin_phi=ProperSystem(hmm.alphabet, phi),
                    lp_status=f"optimal({res.status})", objective_gap=tol)


def resilience_bound(k: int, m: int) -> float:
    """``sqrt(log2(3 k m) / m)``: the resilience guarantee for the MLE."""
    if k < 1 or m <= 2:
        raise ValueError("need k >= 1 and m > 2")
    return math.sqrt(math.log2(3 * k * m) / m)


@dataclass
class CheckReport:
    """Per-seed rows plus aggregates for one verification experiment."""

    kind: str
    params: dict
    rows: list
    extras: dict = field(default_factory=dict)

    @property
    def pass_rate(self) -> float:
        flags = [r.get("passed", r.get("satisfied")) for r in self.rows
                 if not r.get("excluded", 0)]
        flags = [f for f in flags if f is not None]
        if not flags:
            return float("nan")
        return sum(bool(f) for f in flags) / len(flags)

    def summary(self) -> dict:
        out = {"kind": self.kind, "params": self.params, "n_rows": len(self.rows),
               "pass_rate": self.pass_rate}
        out.update(self.extras)
        return out


def _entropy_rate(model: IntervalModel, n: int) -> float:
    """``sum_j w_j(n) H(mu_j)`` in bits."""
    w = model.weights(n)
    return float(sum(wj * entropy(s) for wj, s in zip(w, model.sources)))


def concentration_aggregates(rows: Sequence[dict], m: int,
                             eps_grid: Sequence[float]) -> dict:
    """Row-level aggregates of a concentration report (merge-safe)."""
    dists = np.array([r["tv_distance"] for r in rows])
    out = {"max_distance": float(dists.max())}
    for eps in eps_grid:
        out[f"frac_within_eps_{eps:g}"] = float(np.mean(dists <= eps + 2.0 / m))
    return out


def resilience_aggregates(rows: Sequence[dict]) -> dict:
    return {"n_excluded": int(sum(r["excluded"] for r in rows))}


DEFAULT_EPS_GRID = (0.01, 0.02, 0.05, 0.1)

# headline per-seed metric summarized by quantiles in each report
METRIC_COLUMNS = {
    "reference_likelihood": "margin",
    "concentration": "tv_distance",
    "aep": "deviation",
    "resilience": "d_model",
    "nonergodic_sweep": "d_model",
    "classify": "boundary_excluded_accuracy",
}


def metric_quantiles(kind: str, rows: Sequence[dict]) -> dict:
    column = METRIC_COLUMNS.get(kind)
    if column is None or not rows or column not in rows[0]:
        return {}
    values = np.array([r[column] for r in rows], dtype=float)
    qs = np.quantile(values, [0.05, 0.25, 0.5, 0.75, 0.95])
    return {"quantiles": {"metric": column,
                          "q05": float(qs[0]), "q25": float(qs[1]),
                          "q50": float(qs[2]), "q75": float(qs[3]),
                          "q95": float(qs[4])}}


def reference_likelihood_check(model: IntervalModel, n: int, seeds: Sequence[int],
                 eps_tol: float = 0.05) -> CheckReport:
    """Reference-HMM likelihood lower bound, per seed.

    Passes when ``L(x, H_ref, delta-pi) >= -log2(2km)/m - sum w_j H(mu_j)
    - eps_tol`` with the forward likelihood normalized per symbol.
    """
    k, m = model.k, model.m
    hmm, pi = reference_hmm(model.sources, m, first_state=int(model.tau[0]))
    threshold = -math.log2(2 * k * m) / m - _entropy_rate(model, n) - eps_tol
    rows = []
    for seed in sorted(seeds):
        x = model.sample(n, Rng(derive_seed(seed, "data"))).x
        ll = log_likelihood(x, hmm, pi)
        rows.append({"seed": seed, "loglik": ll, "threshold": threshold,
                     "margin": ll - threshold, "passed": int(ll >= threshold)})
    return CheckReport(
        kind="reference_likelihood",
        params={"n": n, "k": k, "m": m, "eps_tol": eps_tol},
        rows=rows,
        extras={"threshold": threshold, "entropy_rate": _entropy_rate(model, n),
                "log_convention": "base 2 throughout; the threshold constant "
                                  "log2(2km)/m is sensitive to this choice",
                **metric_quantiles("reference_likelihood", rows)},
    )


def moment_concentration_check(model: IntervalModel, n: int, seeds: Sequence[int],
                               eps_grid: Optional[Sequence[float]] = None) -> CheckReport:
    """Empirical-vs-expected moment TV distance against the 3/m radius.

    Also tabulates, for a grid of eps values, the fraction of seeds with
    distance within ``eps + 2/m``.
    """
    m = model.m
    radius = 3.0 / m
    m_x = model.expected_moment(n).moment
    if eps_grid is None:
        eps_grid = [*DEFAULT_EPS_GRID, 1.0 / m]
    rows = []
    for seed in sorted(seeds):
        x = model.sample(n + 1, Rng(derive_seed(seed, "data"))).x
        dist = empirical_moment(x, model.alphabet).tv_to(m_x)
        rows.append({"seed": seed, "tv_distance": dist,
                     "passed": int(dist <= radius)})
    return CheckReport(
        kind="concentration",
        params={"n": n, "k": model.k, "m": m, "radius": radius,
                "eps_grid": list(eps_grid)},
        rows=rows,
        extras={"radius": radius, **concentration_aggregates(rows, m, eps_grid),
                **metric_quantiles("concentration", rows)},
    )


def aep_check(model: IntervalModel, n: int, seeds: Sequence[int],
              eps_tol: float = 0.05) -> CheckReport:
    """Per-symbol surprisal of the true law against the entropy rate."""
    rate = _entropy_rate(model, n)
    probs = np.stack([s.probs for s in model.sources])
    rows = []
    for seed in sorted(seeds):
        sample = model.sample(n, Rng(derive_seed(seed, "data")))
        p_true = probs[sample.kappa, sample.x]
        surprisal = float(-np.log2(p_true).sum() / n)
        dev = surprisal - rate
        rows.append({"seed": seed, "surprisal": surprisal, "deviation": dev,
                     "passed": int(abs(dev) <= eps_tol)})
    return CheckReport(
        kind="aep",
        params={"n": n, "k": model.k, "m": model.m, "eps_tol": eps_tol},
        rows=rows,
        extras={"entropy_rate": rate, **metric_quantiles("aep", rows)},
    )


def sanov_check(hmm: Hmm, model: IntervalModel, n_small: int,
                pi: Optional[np.ndarray] = None) -> CheckReport:
    """Finite-N tabulation of the type-theory likelihood bound.

    Exactly sums ``P_H(x)`` over all sequences whose empirical moment
    lies within 3/m of the model moment and compares with
    ``2^(-n_small * D^2)``.  The bound is asymptotic (an unquantified
    eps_N term), so violations are recorded, never raised.
    """
    nx = model.alphabet.size
    length = n_small + 1
    if hmm.k ** length > SANOV_SEQ_GUARD or nx ** length > SANOV_SEQ_GUARD:
        raise ValueError("enumeration guard exceeded")
    if pi is None:
        pi = np.full(hmm.k, 1.0 / hmm.k)
    m_x = model.expected_moment(n_small).moment
    radius = 3.0 / model.m
    d = dh(m_x, hmm, model.m)
    bound = 2.0 ** (-n_small * d.clamped ** 2)

    # Exact P_H(O) over all |X|^(n+1) sequences: forward per sequence.
    p_o = 0.0
    n_in_o = 0
    seq = np.zeros(length, dtype=np.int64)
    total = nx ** length
    for code in range(total):
        c = code
        for t in range(length - 1, -1, -1):
            seq[t] = c % nx
            c //= nx
        if empirical_moment(seq, model.alphabet).tv_to(m_x) <= radius:
            n_in_o += 1
            lp = total_log2_prob(seq, hmm, pi)
            if lp > -math.inf:
                p_o += 2.0 ** lp
    satisfied = p_o <= bound + 1e-12
    rows = [{
        "n_small": n_small, "p_typical_set": p_o, "bound": bound,
        "d_clamped": d.clamped, "d_raw": d.raw, "set_size": n_in_o,
        "satisfied": int(satisfied),
    }]
    return CheckReport(
        kind="sanov",
        params={"n_small": n_small, "k": model.k, "m": model.m, "radius": radius},
        rows=rows,
        extras={"note": "sanity check; asymptotic bound, violations logged not failed"},
    )


def resilience_experiment(model: IntervalModel, n: int, spec: HDeltaSpec,
                        seeds: Sequence[int], restarts: int = 10,
                        max_iter: int = 500, tol: float = 1e-7) -> CheckReport:
    """Fit the delta-floored MLE per seed and compare D(H) to the bound.

    ``d_model`` is computed against the model moment, ``d_empirical``
    against the observed moment; both are first-class outputs.  Seeds
    where the reference HMM out-scores the fit are flagged as optimizer
    failures and excluded from the pass rate.
    """
    k, m = model.k, model.m
    bound = resilience_bound(k, m)
    ref_hmm, ref_pi = reference_hmm(model.sources, m, first_state=int(model.tau[0]))
    m_x = model.expected_moment(n).moment
    rows = []
    for seed in sorted(seeds):
        sample = model.sample(n + 1, Rng(derive_seed(seed, "data")))
        result = fit(sample.x, spec, restarts=restarts, max_iter=max_iter,
                     tol=tol, rng=Rng(derive_seed(seed, "fit")))
        ll_ref = log_likelihood(sample.x, ref_hmm, ref_pi)
        d_model = dh(m_x, result.hmm, m)
        d_emp = dh(empirical_moment(sample.x, model.alphabet), result.hmm, m)
        excluded = result.loglik < ll_ref - 1e-12
        rows.append({
            "seed": seed,
            "loglik_fit": result.loglik,
            "loglik_reference": ll_ref,
            "d_model_raw": d_model.raw,
            "d_model": d_model.clamped,
            "d_empirical": d_emp.clamped,
            "bound": bound,
            "excluded": int(excluded),
            "satisfied": int(d_model.clamped <= bound + 1e-12),
        })
    return CheckReport(
        kind="resilience",
        params={"n": n, "k": k, "m": m, "delta": spec.delta,
                "restarts": restarts, "max_iter": max_iter, "tol": tol},
        rows=rows,
        extras={"bound": bound, **resilience_aggregates(rows),
                **metric_quantiles("resilience", rows)},
    )


def nonergodic_sweep(model: IntervalModel, n_grid: Sequence[int], spec: HDeltaSpec,
                    seeds: Sequence[int], restarts: int = 10, max_iter: int = 500,
                    tol: float = 1e-7, burn_in: Optional[int] = None) -> CheckReport:
    """Doubling-N sweep of D(H) on a (typically non-ergodic) schedule.

    Per seed and per N on the grid, fits the MLE and tracks the running
    max of ``d_model``; the limsup claim is checked past ``burn_in``
    (default: first grid point strictly above the second).
    """
    k, m = model.k, model.m
    bound = resilience_bound(k, m)
    n_grid = sorted(n_grid)
    if burn_in is None:
        burn_in = n_grid[min(2, len(n_grid) - 1)]
    rows = []
    for seed in sorted(seeds):
        running = 0.0
        for n in n_grid:
            sample = model.sample(n + 1, Rng(derive_seed(seed, f"data{n}")))
            result = fit(sample.x, spec, restarts=restarts, max_iter=max_iter,
                         tol=tol, rng=Rng(derive_seed(seed, f"fit{n}")))
            d_model = dh(model.expected_moment(n).moment, result.hmm, m)
            running = max(running, d_model.clamped) if n > burn_in else running
            rows.append({
                "seed": seed, "n": n,
                "d_model": d_model.clamped, "d_model_raw": d_model.raw,
                "running_max": running, "bound": bound,
                "past_burn_in": int(n > burn_in),
                "satisfied": int(n <= burn_in or running <= bound + 1e-12),
            })
    return CheckReport(
        kind="nonergodic_sweep",
        params={"n_grid": list(n_grid), "k": k, "m": m, "delta": spec.delta,
                "restarts": restarts, "burn_in": burn_in},
        rows=rows,
        extras={"bound": bound, **metric_quantiles("nonergodic_sweep", rows)},
    )
