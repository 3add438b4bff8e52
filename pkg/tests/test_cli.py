import json
from pathlib import Path

import numpy as np
import pytest

from rsolab import __version__
from rsolab.audit import SUITES, audit_suite, replay, run_case
from rsolab.cli import main
from rsolab.config import ConfigError, ExperimentConfig
from rsolab.experiments import MANIFEST, run

UNIFORM_1D = {"dimension": 1, "disorder": {"distribution": {"kind": "uniform", "a": 0.0, "b": 1.0}}}

CONFIGS = {
    "ids": {"experiment": "ids", "seed": 3, "trials": 4, "scales": [8, 16], "model": UNIFORM_1D,
            "grid": {"start": 0.1, "stop": 4.9, "num": 7}},
    "wegner": {"experiment": "wegner", "seed": 3, "trials": 20, "scales": [16, 32], "model": UNIFORM_1D,
               "params": {"energy": 2.0, "eps": [0.05, 0.1, 0.2]}},
    "percolation": {"experiment": "percolation", "seed": 3, "trials": 3, "scales": [6, 8],
                    "grid": {"values": [0.5, 0.99, 1.01, 2.5]}, "params": {"p": 0.7, "threshold": 0.002}},
    "ssf": {"experiment": "ssf", "seed": 3, "trials": 6, "params": {"n_max": 12}},
    "averaging": {"experiment": "averaging", "seed": 3, "trials": 3, "params": {"kind": "projection", "n": 6}},
    "spencer": {"experiment": "spencer", "seed": 3, "params": {"rhos": [10, 14], "width": 3}},
    "toeplitz": {"experiment": "toeplitz", "seed": 3, "params": {"alpha": [[[0], 1.0], [[1], -0.5]],
                                                                 "sizes": [4, 16]}},
    "audit-suite": {"experiment": "audit-suite", "seed": 3, "params": {"budget": 30, "suites": ["interlacing"]}},
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


@pytest.mark.parametrize("kind", sorted(CONFIGS))
def test_every_experiment_runs(tmp_path, kind, capsys):
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, CONFIGS[kind]), "--out", str(out), "--workers", "2"]) == 0
    summary = json.loads(capsys.readouterr().out)
    man = json.loads((out / MANIFEST).read_text())
    assert man["fingerprint"] == summary["fingerprint"] == ExperimentConfig.from_dict(CONFIGS[kind]).fingerprint()
    assert man["version"] == __version__
    assert set(man["checksums"]) == {p.name for p in out.iterdir()} - {MANIFEST}
    for side in out.glob("*.json"):
        if side.name not in (MANIFEST, "config.json"):
            assert json.loads(side.read_text())["config_fingerprint"] == man["fingerprint"]


def test_sample_rows(tmp_path):
    cfg = ExperimentConfig.from_dict(CONFIGS["ids"])
    run(cfg, tmp_path, workers=1)
    for l in cfg.scales:
        rows = (tmp_path / f"ids_l{l}_samples.csv").read_text().splitlines()
        assert rows[0] == "trial,energy,value"
        assert len(rows) - 1 == cfg.trials * cfg.grid().size
        agg = (tmp_path / f"ids_l{l}.csv").read_text().splitlines()
        assert len(agg) - 1 == cfg.grid().size


@pytest.mark.parametrize("kind", ["ids", "ssf", "percolation"])
def test_determinism_across_workers(tmp_path, kind):
    cfg = ExperimentConfig.from_dict(CONFIGS[kind])
    sums = [run(cfg, tmp_path / f"w{w}", workers=w).checksums for w in (1, 2, 8)]
    assert sums[0] == sums[1] == sums[2]
    for name in sums[0]:
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w8" / name).read_bytes()


def test_fingerprint_ignores_output():
    a = ExperimentConfig.from_dict(CONFIGS["ssf"])
    b = ExperimentConfig.from_dict({**CONFIGS["ssf"], "output": "elsewhere"})
    c = ExperimentConfig.from_dict({**CONFIGS["ssf"], "seed": 4})
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = {**CONFIGS["ids"], "bogus": 1, "model": {**UNIFORM_1D, "colour": "red"}}
    assert main(["run", write(tmp_path, cfg)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "schema" and set(err["keys"]) == {"bogus", "colour"}


def test_nested_unknown_key_in_distribution():
    cfg = {**CONFIGS["ids"], "model": {"disorder": {"distribution": {"kind": "uniform", "a": 0, "b": 1, "c": 2}}}}
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(cfg)
    assert exc.value.keys == ("c",)


def test_config_errors(tmp_path, capsys):
    assert main(["run", write(tmp_path, {"experiment": "ids"})]) == 2
    assert "required property" in json.loads(capsys.readouterr().err)["message"]
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert main(["run", write(tmp_path, [1, 2])]) == 2


def test_numeric_error_exit_3(tmp_path, capsys):
    cfg = {"experiment": "toeplitz", "seed": 0, "params": {"alpha": [[[0], 1.0], [[1], -1.0]], "sizes": [4]}}
    assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "numeric" and err["type"] == "SymbolVanishes"
    assert err["module"] == "toeplitz" and err["op"] == "symbol_analysis"


def test_version(capsys):
    assert main(["version"]) == 0
    assert capsys.readouterr().out.strip() == __version__ == "0.1.0"


def test_audit_zero_budget(capsys):
    assert main(["audit", "--budget", "0"]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1] == "skipped"


def test_audit_fault_injection_and_replay(tmp_path, capsys):
    rc = main(["audit", "--budget", "20", "--suite", "interlacing", "--inject-fault", "interlacing",
               "--out", str(tmp_path / "a.json")])
    out = capsys.readouterr().out
    assert rc == 1 and out.strip().splitlines()[-1] == "fail"
    case = next(line.split("replay: ", 1)[1] for line in out.splitlines() if "replay: " in line)
    assert main(["audit", "--replay", case, "--inject-fault", "interlacing"]) == 1
    assert json.loads(capsys.readouterr().out)["status"] == "fail"
    assert main(["audit", "--replay", case]) == 0
    rep = json.loads((tmp_path / "a.json").read_text())
    assert rep["status"] == "fail" and rep["suites"]["interlacing"]["violations"] > 0


def test_audit_pass_small():
    rep = audit_suite(seed=11, budget=60, max_trials=3)
    assert rep.status == "pass", rep.to_dict()
    assert all(rep.suites[s].trials == 3 for s in SUITES)


def test_audit_budget_clock():
    ticks = iter(range(1000))
    rep = audit_suite(seed=0, budget=4, suites=["ssf"], clock=lambda: next(ticks))
    assert rep.suites["ssf"].trials == 3


def test_run_case_reproducible():
    n1, f1 = run_case("ssf", 5, 7, fault=True)
    n2, f2 = run_case("ssf", 5, 7, fault=True)
    assert n1 == n2 and [f.__dict__ for f in f1] == [f.__dict__ for f in f2]
    assert replay({"suite": "ssf", "seed": 5, "trial": 7}) == []


def test_unknown_suite():
    with pytest.raises(ValueError):
        audit_suite(0, 1, suites=["nope"])


def test_grid_forms():
    g = ExperimentConfig.from_dict(CONFIGS["ids"]).grid()
    np.testing.assert_allclose(g, np.linspace(0.1, 4.9, 7))
    g = ExperimentConfig.from_dict(CONFIGS["percolation"]).grid()
    np.testing.assert_array_equal(g, [0.5, 0.99, 1.01, 2.5])


GOLDEN = sorted(p for p in (Path(__file__).parent / "golden").iterdir() if p.is_dir())


@pytest.mark.parametrize("case", GOLDEN, ids=[p.name for p in GOLDEN])
def test_golden_corpus(tmp_path, case):
    cfg = ExperimentConfig.load(case / "config.json")
    run(cfg, tmp_path, workers=4)
    produced = {p.name for p in tmp_path.iterdir()} - {MANIFEST}
    assert produced == {p.name for p in case.iterdir()}
    for name in sorted(produced):
        assert (tmp_path / name).read_bytes() == (case / name).read_bytes(), name


def test_minimal_ids_rerun_identical(tmp_path):
    cfg = ExperimentConfig.from_dict({**CONFIGS["ids"], "seed": 1})
    a = run(cfg, tmp_path / "a")
    b = run(cfg, tmp_path / "b")
    assert a.checksums == b.checksums
    assert any(name.startswith("ids_l") and name.endswith(".csv") for name in a.checksums)


def test_wegner_fit_json_fields(tmp_path):
    run(ExperimentConfig.from_dict(CONFIGS["wegner"]), tmp_path)
    fit = json.loads((tmp_path / "wegner.json").read_text())
    assert {"a", "b", "C_W_hat", "C_ref", "config_fingerprint"} <= set(fit)


def test_default_audit_passes(capsys):
    assert main(["audit"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-1] == "pass" and len(lines) == len(SUITES) + 1
