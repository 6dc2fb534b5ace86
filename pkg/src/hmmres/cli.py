"""Experiment runner and command-line interface.

Config is a single JSON file; CLI flags override fields.  Every
experiment writes ``<outdir>/<kind>/<config-hash>/{manifest.json,
report.csv, summary.json}``; rerunning an identical config reproduces
byte-identical report bodies (the timestamp lives only in the manifest).
Seed-level work is embarrassingly parallel under ``--jobs`` with a
deterministic, seed-sorted merge.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .estimation import HDeltaSpec, fit, match_states
from .hmm import Hmm, reference_hmm
from .intervals import IntervalModel, ScheduleSpec, build_schedule
from .moments import SecondMoment, empirical_moment
from .probability import Alphabet, Distribution, Rng, derive_seed, tv_distance
from .resilience import (CheckReport, aep_check, nonergodic_sweep, dh,
                         reference_likelihood_check, metric_quantiles,
                         moment_concentration_check, sanov_check,
                         resilience_experiment)
from .segmentation import choose_window, segmentation_accuracy, sliding_window_classify

EXPERIMENT_KINDS = ("reference_likelihood", "concentration", "aep", "sanov", "resilience",
                    "nonergodic_sweep", "classify", "full")

DEFAULT_GATES = {
    "reference_likelihood": 0.95,
    "concentration": 0.95,
    "aep": 0.95,
    "resilience": 0.90,
    "nonergodic_sweep": 1.0,
}


@dataclass
class ExperimentConfig:
    kind: str
    model: dict
    n: int = 20000
    delta: float = 0.02
    restarts: int = 10
    max_iter: int = 500
    tol: float = 1e-7
    seeds: list = field(default_factory=lambda: list(range(100)))
    eps_tol: float = 0.05
    n_small: int = 8
    sanov_hmm: str = "uniform"
    window_confidence: float = 0.95
    classify_sources: str = "true"
    n_grid: list = field(default_factory=lambda: [2 ** e for e in range(10, 17)])
    min_pass_rate: float | None = None
    min_accuracy: float = 0.99
    outdir: str = "out"
    jobs: int = 1
    trace: bool = False

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if isinstance(self.seeds, int):
            self.seeds = list(range(self.seeds))
        self.seeds = [int(s) for s in self.seeds]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def core_dict(self) -> dict:
        """Fields that determine results (outdir/jobs/trace excluded)."""
        d = {
            "kind": self.kind, "model": self.model, "n": self.n,
            "delta": self.delta, "restarts": self.restarts,
            "max_iter": self.max_iter, "tol": self.tol, "seeds": self.seeds,
            "eps_tol": self.eps_tol, "n_small": self.n_small,
            "sanov_hmm": self.sanov_hmm,
            "window_confidence": self.window_confidence,
            "classify_sources": self.classify_sources, "n_grid": self.n_grid,
            "min_pass_rate": self.min_pass_rate, "min_accuracy": self.min_accuracy,
        }
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.core_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_model(config: ExperimentConfig) -> IntervalModel:
    md = config.model
    alphabet = Alphabet(tuple(md["alphabet"]))
    sources = tuple(Distribution(alphabet, np.asarray(p, float)) for p in md["sources"])
    m = int(md["m"])
    sched = dict(md["schedule"])
    if "horizon" not in sched and "horizon" in md:
        sched["horizon"] = md["horizon"]
    spec = ScheduleSpec.from_dict(sched)
    rng = Rng(int(md.get("seed", 0)))
    return build_schedule(spec, sources, m, rng)


def validate(config: ExperimentConfig) -> list[str]:
    """All invariant violations, as human-readable diagnostics."""
    diags = []
    try:
        model = build_model(config)
    except (ValueError, KeyError) as exc:
        return [f"model: {exc}"]
    m = model.m
    if m <= 2:
        diags.append(f"m={m} violates the standing assumption m > 2")
    if config.delta > 1.0 / m + 1e-12:
        diags.append(f"delta={config.delta} exceeds 1/m={1.0 / m:.6g}")
    min_entry = min(float(s.probs.min()) for s in model.sources)
    if config.delta > min_entry + 1e-12:
        diags.append(
            f"delta={config.delta} exceeds the smallest source entry {min_entry:.6g}"
        )
    if len(set(config.seeds)) != len(config.seeds):
        diags.append("seeds are not distinct")
    needed = (max(config.n_grid) if config.kind == "nonergodic_sweep" else config.n) + 1
    if model.horizon < needed:
        diags.append(f"model horizon {model.horizon} below required {needed}")
    return diags


def fmt_value(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def write_report_csv(path: Path, rows: list[dict]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)  # RFC 4180: CRLF line endings
        header = list(rows[0].keys()) if rows else []
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_value(row.get(h, "")) for h in header])


def _sanov_hmm(config: ExperimentConfig, model: IntervalModel) -> Hmm:
    choice = config.sanov_hmm
    if choice == "reference":
        return reference_hmm(model.sources, model.m)[0]
    if choice == "uniform":
        ref, _ = reference_hmm(model.sources, model.m)
        uniform = np.full_like(ref.emissions, 1.0 / model.alphabet.size)
        return Hmm(model.alphabet, ref.transition, uniform)
    with open(choice) as f:
        return Hmm.from_dict(json.load(f))


def _classify_report(config: ExperimentConfig, model: IntervalModel,
                     seeds: list[int]) -> CheckReport:
    sources = list(model.sources)
    window = choose_window(sources, config.window_confidence)
    trace_dir = None
    if config.trace:
        trace_dir = (Path(config.outdir) / "classify" / config.config_hash()
                     / "segments")
        trace_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in sorted(seeds):
        sample = model.sample(config.n, Rng(derive_seed(seed, "data")))
        if config.classify_sources == "fitted":
            spec = HDeltaSpec(config.delta, model.k, model.alphabet)
            result = fit(sample.x, spec, restarts=config.restarts,
                         max_iter=config.max_iter, tol=config.tol,
                         rng=Rng(derive_seed(seed, "fit")))
            perm = match_states(result.hmm, [s.probs for s in sources])
            use = [Distribution(model.alphabet, result.hmm.emissions[perm[j]])
                   for j in range(model.k)]
        else:
            use = sources
        seg = sliding_window_classify(sample.x, use, window)
        metrics = segmentation_accuracy(seg, sample.kappa)
        if trace_dir is not None:
            with open(trace_dir / f"seed{seed}.jsonl", "w") as f:
                for rec in seg.records():
                    f.write(json.dumps(rec) + "\n")
        rows.append({
            "seed": seed, "window": window,
            "accuracy": metrics.accuracy,
            "boundary_excluded_accuracy": metrics.boundary_excluded_accuracy,
            "n_boundary_excluded": metrics.n_boundary_excluded,
            "passed": int(metrics.boundary_excluded_accuracy >= config.min_accuracy),
        })
    return CheckReport(
        kind="classify",
        params={"n": config.n, "window": window,
                "confidence": config.window_confidence,
                "sources_mode": config.classify_sources},
        rows=rows,
        extras={**classify_aggregates(rows), "window": window,
                **metric_quantiles("classify", rows)},
    )


def classify_aggregates(rows):
    mean_be = float(np.mean([r["boundary_excluded_accuracy"] for r in rows]))
    return {"mean_boundary_excluded_accuracy": mean_be}


def _report_for_seeds(config: ExperimentConfig, seeds: list[int]) -> CheckReport:
    model = build_model(config)
    kind = config.kind
    if kind == "reference_likelihood":
        return reference_likelihood_check(model, config.n, seeds, eps_tol=config.eps_tol)
    if kind == "concentration":
        return moment_concentration_check(model, config.n, seeds)
    if kind == "aep":
        return aep_check(model, config.n, seeds, eps_tol=config.eps_tol)
    if kind == "resilience":
        spec = HDeltaSpec(config.delta, model.k, model.alphabet)
        return resilience_experiment(model, config.n, spec, seeds,
                                   restarts=config.restarts,
                                   max_iter=config.max_iter, tol=config.tol)
    if kind == "nonergodic_sweep":
        spec = HDeltaSpec(config.delta, model.k, model.alphabet)
        return nonergodic_sweep(model, config.n_grid, spec, seeds,
                               restarts=config.restarts,
                               max_iter=config.max_iter, tol=config.tol)
    if kind == "sanov":
        return sanov_check(_sanov_hmm(config, model), model, config.n_small)
    if kind == "classify":
        return _classify_report(config, model, seeds)
    raise ValueError(f"kind {kind!r} has no seed runner")


def _seed_worker(args):
    config_dict, seed = args
    config = ExperimentConfig.from_dict(config_dict)
    return _report_for_seeds(config, [seed])


def run_report(config: ExperimentConfig) -> CheckReport:
    """Execute the configured experiment, possibly seed-parallel.

    Row-level aggregates in the extras are recomputed after the merge so
    serial and parallel runs emit identical summaries.
    """
    if config.kind == "sanov" or config.jobs <= 1 or len(config.seeds) <= 1:
        return _report_for_seeds(config, config.seeds)
    args = [(config.core_dict(), s) for s in sorted(config.seeds)]
    with ProcessPoolExecutor(max_workers=config.jobs) as ex:
        parts = list(ex.map(_seed_worker, args))
    merged = parts[0]
    rows = [row for part in parts for row in part.rows]
    rows.sort(key=lambda r: (r.get("seed", 0), r.get("n", 0)))
    extras = dict(merged.extras)
    if config.kind == "concentration":
        from .resilience import concentration_aggregates

        extras.update(concentration_aggregates(rows, merged.params["m"],
                                               merged.params["eps_grid"]))
    elif config.kind == "resilience":
        from .resilience import resilience_aggregates

        extras.update(resilience_aggregates(rows))
    elif config.kind == "classify":
        extras.update(classify_aggregates(rows))
    extras.update(metric_quantiles(config.kind, rows))
    return CheckReport(kind=merged.kind, params=merged.params, rows=rows,
                       extras=extras)


def hard_pass(config: ExperimentConfig, report: CheckReport) -> bool:
    """Whether the run's hard gate holds; sanity kinds always pass."""
    if config.kind == "sanov":
        return True
    if config.kind == "classify":
        return report.extras["mean_boundary_excluded_accuracy"] >= config.min_accuracy
    gate = config.min_pass_rate
    if gate is None:
        gate = DEFAULT_GATES.get(config.kind, 0.95)
    return report.pass_rate >= gate - 1e-12


@dataclass
class RunManifest:
    config_hash: str
    version: str
    timestamp: str
    kind: str
    seeds: list
    seed_derivation: str
    outputs: list
    hard_pass: bool

    def to_dict(self):
        return {
            "config_hash": self.config_hash, "version": self.version,
            "timestamp": self.timestamp, "kind": self.kind,
            "seeds": self.seeds, "seed_derivation": self.seed_derivation,
            "outputs": self.outputs, "hard_pass": self.hard_pass,
        }


def run(config: ExperimentConfig) -> tuple[RunManifest, int]:
    """Run one experiment (or all, for kind=full) and persist reports.

    Returns the manifest and the process exit code: 0 iff every hard
    assertion passed; soft/sanity checks never fail a run.
    """
    diags = validate(config)
    if diags:
        raise ValueError("invalid config: " + "; ".join(diags))

    kinds = [config.kind]
    if config.kind == "full":
        kinds = ["reference_likelihood", "concentration", "aep", "sanov", "resilience", "classify"]

    all_outputs = []
    ok = True
    top_hash = config.config_hash()
    for kind in kinds:
        sub = ExperimentConfig.from_dict({**config.core_dict(), "kind": kind})
        sub.outdir, sub.jobs, sub.trace = config.outdir, config.jobs, config.trace
        report = run_report(sub)
        passed = hard_pass(sub, report)
        ok = ok and passed
        outdir = Path(config.outdir) / kind / sub.config_hash()
        outdir.mkdir(parents=True, exist_ok=True)
        write_report_csv(outdir / "report.csv", report.rows)
        summary = report.summary()
        summary["config_hash"] = sub.config_hash()
        summary["hard_pass"] = passed
        with open(outdir / "summary.json", "w") as f:
            json.dump(summary, f, sort_keys=True, indent=2)
            f.write("\n")
        manifest = RunManifest(
            config_hash=sub.config_hash(), version=__version__,
            timestamp=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            kind=kind, seeds=sub.seeds,
            seed_derivation="low 64 bits of sha256('<seed>:<stage>')",
            outputs=[str(outdir / "report.csv"), str(outdir / "summary.json")],
            hard_pass=passed,
        )
        with open(outdir / "manifest.json", "w") as f:
            json.dump(manifest.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")
        all_outputs.extend(manifest.outputs)
        print(f"[{kind}] pass={passed} rows={len(report.rows)} -> {outdir}")

    top = RunManifest(
        config_hash=top_hash, version=__version__,
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        kind=config.kind, seeds=config.seeds,
        seed_derivation="low 64 bits of sha256('<seed>:<stage>')",
        outputs=all_outputs, hard_pass=ok,
    )
    return top, 0 if ok else 1


# ---------------------------------------------------------------------------
# file-level subcommands


def _load_config(args) -> ExperimentConfig:
    with open(args.config) as f:
        raw = json.load(f)
    config = ExperimentConfig.from_dict(raw)
    # outdir precedence: --outdir flag > explicit config value > env default
    if getattr(args, "outdir", None):
        config.outdir = args.outdir
    elif "outdir" not in raw and os.environ.get("HMMRES_OUTDIR"):
        config.outdir = os.environ["HMMRES_OUTDIR"]
    if getattr(args, "seed_list", None):
        config.seeds = [int(s) for s in args.seed_list.split(",")]
    if getattr(args, "jobs", None):
        config.jobs = args.jobs
    if getattr(args, "trace", False):
        config.trace = True
    if getattr(args, "kind", None):
        config.kind = args.kind
    return config


def cmd_generate(args) -> int:
    config = _load_config(args)
    model = build_model(config)
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "model.json", "w") as f:
        json.dump(model.to_dict(), f, sort_keys=True, indent=2)
    seed = config.seeds[0] if config.seeds else 0
    sample = model.sample(config.n + 1, Rng(derive_seed(seed, "data")))
    with open(outdir / "sample.jsonl", "w") as f:
        for rec in sample.records():
            f.write(json.dumps(rec) + "\n")
    print(f"wrote {outdir / 'model.json'} and {outdir / 'sample.jsonl'} "
          f"({len(sample)} records)")
    return 0


def _read_sample(path, alphabet: Alphabet):
    xs, kappas = [], []
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            xs.append(alphabet.index(rec["symbol"]))
            kappas.append(rec.get("kappa", -1))
    return np.asarray(xs, dtype=np.int64), np.asarray(kappas, dtype=np.int64)


def cmd_fit(args) -> int:
    config = _load_config(args)
    model = build_model(config)
    if args.sample:
        x, _ = _read_sample(args.sample, model.alphabet)
    else:
        seed = config.seeds[0] if config.seeds else 0
        x = model.sample(config.n + 1, Rng(derive_seed(seed, "data"))).x
    spec = HDeltaSpec(config.delta, model.k, model.alphabet)
    seed = config.seeds[0] if config.seeds else 0
    result = fit(x, spec, restarts=config.restarts, max_iter=config.max_iter,
                 tol=config.tol, rng=Rng(derive_seed(seed, "fit")))
    out = Path(args.out or (Path(config.outdir) / "fit.json"))
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        json.dump(result.to_dict(trace=config.trace), f, sort_keys=True, indent=2)
    print(f"fit loglik={result.loglik:.6f} bits/symbol -> {out}")
    return 0


def cmd_moments(args) -> int:
    config = _load_config(args)
    model = build_model(config)
    if args.sample:
        x, _ = _read_sample(args.sample, model.alphabet)
    else:
        seed = config.seeds[0] if config.seeds else 0
        x = model.sample(config.n + 1, Rng(derive_seed(seed, "data"))).x
    emp = empirical_moment(x, model.alphabet)
    exp = model.expected_moment(len(x) - 1)
    payload = {
        "empirical": emp.to_dict(),
        "expected": exp.moment.to_dict(),
        "tv_empirical_vs_expected": tv_distance(emp.matrix, exp.moment.matrix),
        "mixed_mass": exp.mixed_mass,
    }
    out = Path(args.out or (Path(config.outdir) / "moments.json"))
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
    print(f"tv(empirical, expected)={payload['tv_empirical_vs_expected']:.6f} -> {out}")
    return 0


def cmd_dh(args) -> int:
    with open(args.moment) as f:
        m_ref = SecondMoment.from_dict(json.load(f))
    with open(args.hmm) as f:
        hmm = Hmm.from_dict(json.load(f))
    result = dh(m_ref, hmm, args.m)
    payload = result.to_dict()
    if args.out:
        with open(args.out, "w") as f:
            json.dump(payload, f, sort_keys=True, indent=2)
    print(json.dumps({k: payload[k] for k in ("raw", "clamped", "lp_status")}))
    return 0


def cmd_validate(args) -> int:
    config = _load_config(args)
    diags = validate(config)
    for d in diags:
        print(f"diagnostic: {d}")
    print("config ok" if not diags else f"{len(diags)} diagnostic(s)")
    return 0 if not diags else 1


def cmd_run(args) -> int:
    config = _load_config(args)
    _, code = run(config)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hmmres",
        description="Interval-model experiments: HMM likelihood and moment bounds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_out=False):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--outdir", help="output directory (default $HMMRES_OUTDIR or config)")
        p.add_argument("--seed-list", dest="seed_list", help="comma-separated seed override")
        p.add_argument("--jobs", type=int, help="seed-level parallelism")
        p.add_argument("--trace", action="store_true", help="include per-restart traces")
        if with_out:
            p.add_argument("--out", help="output file path")

    p = sub.add_parser("generate", help="materialize a model and one sample")
    add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit the delta-floored MLE to a sample")
    add_common(p, with_out=True)
    p.add_argument("--sample", help="sample JSONL (generated when omitted)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("moments", help="empirical and expected pair moments")
    add_common(p, with_out=True)
    p.add_argument("--sample", help="sample JSONL (generated when omitted)")
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("dh", help="compute D(H) for a moment/HMM pair")
    p.add_argument("--moment", required=True)
    p.add_argument("--hmm", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dh)

    p = sub.add_parser("validate", help="list config diagnostics")
    add_common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("verify", help="run a verification experiment")
    p.add_argument("kind", choices=[k for k in EXPERIMENT_KINDS if k != "classify"])
    add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("classify", help="sliding-window classification experiment")
    add_common(p)
    p.set_defaults(func=cmd_run, kind="classify")

    p = sub.add_parser("sweep", help="non-ergodic doubling-N sweep")
    add_common(p)
    p.set_defaults(func=cmd_run, kind="nonergodic_sweep")

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
