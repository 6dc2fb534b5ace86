import json
import os
from pathlib import Path

import numpy as np
import pytest

from hmmres.cli import (ExperimentConfig, build_model, hard_pass, main, run,
                        run_report, validate)


def base_config(tmp_path, **overrides):
    cfg = {
        "kind": "reference_likelihood",
        "model": {
            "alphabet": ["a", "b", "c", "d"],
            "sources": [[0.7, 0.1, 0.1, 0.1], [0.1, 0.7, 0.1, 0.1]],
            "m": 20,
            "schedule": {"kind": "fixed_length", "base_length": 20,
                         "horizon": 2021},
            "seed": 0,
        },
        "n": 2000,
        "delta": 0.02,
        "restarts": 3,
        "seeds": 4,
        "outdir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    return ExperimentConfig.from_dict(cfg)


def write_config(tmp_path, config):
    path = tmp_path / "config.json"
    d = config.core_dict()
    d["outdir"] = config.outdir
    with open(path, "w") as f:
        json.dump(d, f)
    return str(path)


def test_config_seeds_count_expansion(tmp_path):
    config = base_config(tmp_path, seeds=5)
    assert config.seeds == [0, 1, 2, 3, 4]


def test_config_rejects_unknown_fields(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"kind": "reference_likelihood", "model": {}, "bogus": 1})


def test_config_rejects_unknown_kind(tmp_path):
    with pytest.raises(ValueError):
        base_config(tmp_path, kind="nonsense")


def test_validate_clean_config(tmp_path):
    assert validate(base_config(tmp_path)) == []


def test_validate_delta_above_inverse_m(tmp_path):
    config = base_config(tmp_path, delta=0.06)  # 1/m = 0.05
    diags = validate(config)
    assert any("1/m" in d for d in diags)


def test_validate_delta_above_min_source_entry(tmp_path):
    config = base_config(tmp_path, delta=0.04)
    config.model["sources"] = [[0.91, 0.03, 0.03, 0.03], [0.1, 0.7, 0.1, 0.1]]
    diags = validate(config)
    assert any("source entry" in d for d in diags)


def test_validate_m_too_small(tmp_path):
    config = base_config(tmp_path)
    config.model["m"] = 2
    assert validate(config)  # model construction already fails


def test_validate_duplicate_seeds(tmp_path):
    config = base_config(tmp_path, seeds=[1, 1, 2])
    assert any("distinct" in d for d in diags_of(config))


def diags_of(config):
    return validate(config)


def test_validate_short_horizon(tmp_path):
    config = base_config(tmp_path, n=5000)
    assert any("horizon" in d for d in validate(config))


def test_config_hash_excludes_outdir(tmp_path):
    c1 = base_config(tmp_path)
    c2 = base_config(tmp_path)
    c2.outdir = str(tmp_path / "elsewhere")
    assert c1.config_hash() == c2.config_hash()
    c3 = base_config(tmp_path, n=1999)
    assert c1.config_hash() != c3.config_hash()


def test_build_model_matches_spec(tmp_path):
    model = build_model(base_config(tmp_path))
    assert model.k == 2
    assert model.m == 20
    assert model.horizon == 2021


def test_run_reference_likelihood_layout_and_gate(tmp_path):
    config = base_config(tmp_path)
    manifest, code = run(config)
    assert code == 0
    outdir = Path(config.outdir) / "reference_likelihood" / config.config_hash()
    assert (outdir / "report.csv").exists()
    assert (outdir / "summary.json").exists()
    assert (outdir / "manifest.json").exists()
    report = (outdir / "report.csv").read_bytes().decode()
    lines = report.strip().split("\r\n")
    assert lines[0].startswith("seed,")
    assert len(lines) == 1 + 4  # header + one row per seed, CRLF per RFC 4180
    summary = json.loads((outdir / "summary.json").read_text())
    assert summary["pass_rate"] == 1.0
    assert summary["hard_pass"] is True
    assert summary["config_hash"] == config.config_hash()


def test_run_determinism_byte_identical(tmp_path):
    """Criterion: rerunning an identical config reproduces report bodies."""
    config = base_config(tmp_path)
    run(config)
    outdir = Path(config.outdir) / "reference_likelihood" / config.config_hash()
    first_csv = (outdir / "report.csv").read_bytes()
    first_summary = (outdir / "summary.json").read_bytes()
    run(base_config(tmp_path))
    assert (outdir / "report.csv").read_bytes() == first_csv
    assert (outdir / "summary.json").read_bytes() == first_summary


def test_run_jobs_parallel_matches_serial(tmp_path):
    """Parallel runs reproduce serial bytes, including aggregate extras."""
    for kind in ("reference_likelihood", "concentration"):
        serial = base_config(tmp_path, kind=kind)
        run(serial)
        outdir = Path(serial.outdir) / kind / serial.config_hash()
        serial_csv = (outdir / "report.csv").read_bytes()
        serial_summary = (outdir / "summary.json").read_bytes()
        parallel = base_config(tmp_path, kind=kind)
        parallel.jobs = 2
        run(parallel)
        assert (outdir / "report.csv").read_bytes() == serial_csv
        assert (outdir / "summary.json").read_bytes() == serial_summary


def test_run_concentration_and_aep(tmp_path):
    for kind in ("concentration", "aep"):
        config = base_config(tmp_path, kind=kind)
        manifest, code = run(config)
        assert code == 0


def test_run_classify(tmp_path):
    config = base_config(tmp_path, kind="classify", n=2000, seeds=3)
    manifest, code = run(config)
    assert code == 0
    outdir = Path(config.outdir) / "classify" / config.config_hash()
    summary = json.loads((outdir / "summary.json").read_text())
    assert summary["mean_boundary_excluded_accuracy"] >= 0.99


def test_run_sanov_never_fails(tmp_path):
    config = base_config(tmp_path, kind="sanov", n_small=6)
    manifest, code = run(config)
    assert code == 0


def test_run_invalid_config_raises(tmp_path):
    config = base_config(tmp_path, delta=0.5)
    with pytest.raises(ValueError):
        run(config)


def test_report_csv_float_format(tmp_path):
    config = base_config(tmp_path, seeds=1)
    run(config)
    outdir = Path(config.outdir) / "reference_likelihood" / config.config_hash()
    row = (outdir / "report.csv").read_bytes().decode().strip().split("\r\n")[1]
    loglik_field = row.split(",")[1]
    assert len(loglik_field.replace("-", "").replace(".", "").lstrip("0")) <= 12


def test_cli_main_verify(tmp_path, capsys):
    config = base_config(tmp_path)
    path = write_config(tmp_path, config)
    code = main(["verify", "reference_likelihood", "--config", path])
    assert code == 0


def test_cli_main_validate_exit_codes(tmp_path):
    config = base_config(tmp_path)
    path = write_config(tmp_path, config)
    assert main(["validate", "--config", path]) == 0
    bad = base_config(tmp_path, delta=0.06)
    bad_path = tmp_path / "bad.json"
    d = bad.core_dict()
    d["outdir"] = bad.outdir
    bad_path.write_text(json.dumps(d))
    assert main(["validate", "--config", str(bad_path)]) == 1


def test_cli_generate_fit_moments_dh_pipeline(tmp_path):
    config = base_config(tmp_path, n=800, seeds=[5])
    config.model["schedule"]["horizon"] = 1021
    path = write_config(tmp_path, config)
    assert main(["generate", "--config", path]) == 0
    outdir = Path(config.outdir)
    sample_path = outdir / "sample.jsonl"
    assert sample_path.exists()
    first = json.loads(sample_path.read_text().splitlines()[0])
    assert set(first) == {"i", "symbol", "kappa"}

    assert main(["fit", "--config", path, "--sample", str(sample_path),
                 "--out", str(outdir / "fit.json")]) == 0
    fit_payload = json.loads((outdir / "fit.json").read_text())
    assert "hmm" in fit_payload and fit_payload["loglik"] < 0

    assert main(["moments", "--config", path, "--sample", str(sample_path),
                 "--out", str(outdir / "moments.json")]) == 0
    moments = json.loads((outdir / "moments.json").read_text())
    (outdir / "hmm.json").write_text(json.dumps(fit_payload["hmm"]))
    (outdir / "m.json").write_text(json.dumps(moments["expected"]))
    assert main(["dh", "--moment", str(outdir / "m.json"),
                 "--hmm", str(outdir / "hmm.json"), "--m", "20",
                 "--out", str(outdir / "dh.json")]) == 0
    d = json.loads((outdir / "dh.json").read_text())
    assert d["clamped"] >= 0.0


def test_cli_seed_list_override(tmp_path):
    config = base_config(tmp_path)
    path = write_config(tmp_path, config)
    assert main(["verify", "reference_likelihood", "--config", path, "--seed-list", "7,8"]) == 0
    override = base_config(tmp_path, seeds=[7, 8])
    outdir = Path(config.outdir) / "reference_likelihood" / override.config_hash()
    lines = (outdir / "report.csv").read_bytes().decode().strip().split("\r\n")
    assert len(lines) == 3


def test_cli_outdir_env_var(tmp_path, monkeypatch):
    config = base_config(tmp_path)
    d = config.core_dict()  # no outdir key at all
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d))
    env_out = tmp_path / "env_out"
    monkeypatch.setenv("HMMRES_OUTDIR", str(env_out))
    assert main(["verify", "reference_likelihood", "--config", str(path)]) == 0
    assert (env_out / "reference_likelihood").exists()


def test_hard_pass_gates(tmp_path):
    config = base_config(tmp_path)
    report = run_report(config)
    assert hard_pass(config, report)
    config.min_pass_rate = 1.01  # unreachable gate
    assert not hard_pass(config, report)


def test_run_full_composite(tmp_path):
    config = base_config(tmp_path, kind="full", n=1200, seeds=2, n_small=6,
                         restarts=2)
    config.model["schedule"]["horizon"] = 1321
    manifest, code = run(config)
    assert code == 0
    for kind in ("reference_likelihood", "concentration", "aep", "sanov", "resilience",
                 "classify"):
        assert (Path(config.outdir) / kind).exists()
    assert manifest.hard_pass


def test_console_script_help():
    import subprocess
    out = subprocess.run(["hmmres", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "verify" in out.stdout


def test_classify_trace_emits_segment_jsonl(tmp_path):
    config = base_config(tmp_path, kind="classify", n=600, seeds=[4])
    config.model["schedule"]["horizon"] = 1021
    config.trace = True
    manifest, code = run(config)
    assert code == 0
    seg_path = (Path(config.outdir) / "classify" / config.config_hash()
                / "segments" / "seed4.jsonl")
    lines = seg_path.read_text().splitlines()
    assert len(lines) == 600
    first = json.loads(lines[0])
    assert set(first) == {"i", "label", "scores"}
    assert json.loads(lines[-1]).get("scores") is None  # trailing padded index


def test_cli_sweep_alias(tmp_path):
    config = base_config(tmp_path, kind="nonergodic_sweep", seeds=[0],
                         restarts=2, n_grid=[128, 256, 512])
    config.model["schedule"] = {"kind": "doubling_nonergodic", "horizon": 700}
    path = write_config(tmp_path, config)
    assert main(["sweep", "--config", path]) == 0
    outdir = Path(config.outdir) / "nonergodic_sweep" / config.config_hash()
    assert (outdir / "report.csv").exists()


def test_summary_contains_quantiles(tmp_path):
    config = base_config(tmp_path)
    run(config)
    outdir = Path(config.outdir) / "reference_likelihood" / config.config_hash()
    summary = json.loads((outdir / "summary.json").read_text())
    q = summary["quantiles"]
    assert q["metric"] == "margin"
    assert q["q05"] <= q["q50"] <= q["q95"]
