"""Scenario schema validation, CLI behavior, and report determinism."""

import json

import pytest

from periodiclab import cli
from periodiclab import scenarios as sc
from periodiclab.errors import ConfigError

TINY = {
    "schema": 1,
    "id": "tiny",
    "description": "reduced custom scenario for plumbing tests",
    "seed": 7,
    "field": {"kind": "custom-polynomial", "dim": 1, "period": 1.0, "q_const": 0.5,
              "drift_terms": [{"power": 1, "const": -1.0}]},
    "plan": {"r_max": 5.0, "n_times": 16, "n_axis": 11, "n_shells": 4, "n_shell_dirs": 2},
    "sim": {"particles": 1500, "dt": 0.01, "horizon_periods": 8,
            "antithetic": True, "n_outer": 32, "n_inner": 128},
    "experiments": [
        {"name": "hypothesis-check", "moment_phases": 4},
        {"name": "decay", "engine": "montecarlo", "ps": [2], "horizons": [1, 2, 3],
         "contraction_gaps": [1], "contraction_ps": [2]},
        {"name": "poincare", "n_phases": 4},
    ],
}


class TestValidation:
    def test_unknown_top_key(self):
        doc = dict(TINY, extra=1)
        with pytest.raises(ConfigError) as err:
            sc.validate_scenario(doc)
        assert "$.extra" in str(err.value)

    def test_unknown_field_key_path(self):
        doc = json.loads(json.dumps(TINY))
        doc["field"]["a_sinn"] = [[0.5]]
        with pytest.raises(ConfigError) as err:
            sc.validate_scenario(doc)
        assert "$.field.a_sinn" in str(err.value)

    def test_schema_version_enforced(self):
        doc = dict(TINY, schema=2)
        with pytest.raises(ConfigError) as err:
            sc.validate_scenario(doc)
        assert "$.schema" in str(err.value)

    def test_logsob_needs_flat_diffusion(self):
        doc = json.loads(json.dumps(sc.load_scenario("gen2d")))
        doc["experiments"].append({"name": "logsob", "ps": [2]})
        with pytest.raises(ConfigError) as err:
            sc.validate_scenario(doc)
        assert "independent of x" in str(err.value)

    def test_exact_engine_needs_linear_drift(self):
        doc = json.loads(json.dumps(sc.load_scenario("grad1d")))
        doc["experiments"][1]["engine"] = "ou-exact"
        with pytest.raises(ConfigError):
            sc.validate_scenario(doc)

    def test_montecarlo_gradients_need_flat_diffusion(self):
        doc = json.loads(json.dumps(sc.load_scenario("gen2d")))
        doc["experiments"].append({"name": "gradient-decay", "engine": "montecarlo"})
        with pytest.raises(ConfigError):
            sc.validate_scenario(doc)

    def test_unknown_experiment(self):
        doc = json.loads(json.dumps(TINY))
        doc["experiments"] = [{"name": "frobnicate"}]
        with pytest.raises(ConfigError):
            sc.validate_scenario(doc)

    def test_builtins_validate(self):
        for sid in sc.builtin_ids():
            sc.load_scenario(sid)

    def test_unknown_reference(self):
        with pytest.raises(ConfigError):
            sc.load_scenario("not-a-scenario")


class TestCli:
    def test_list_includes_builtins(self, capsys):
        assert cli.main(["list"]) == 0
        out = capsys.readouterr().out
        for sid in ("ou1d", "grad1d", "gen2d"):
            assert sid in out

    def test_describe_prints_field(self, capsys):
        assert cli.main(["describe", "ou1d"]) == 0
        out = capsys.readouterr().out
        assert "a_sin" in out and "kind" in out

    def test_describe_unknown_fails(self, capsys):
        assert cli.main(["describe", "nope"]) == 2
        assert "configuration error" in capsys.readouterr().err


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinyrun")
    path = root / "tiny.json"
    path.write_text(json.dumps(TINY))
    out = root / "out"
    summary = sc.run_scenario(sc.load_scenario(path), out)
    return out, summary


class TestRun:

    def test_reports_written(self, tiny_run):
        out, summary = tiny_run
        for name in ("hypothesis-check", "decay", "poincare"):
            assert (out / f"{name}.json").exists()
            assert (out / f"{name}.csv").exists()
        assert (out / "summary.json").exists()

    def test_summary_cites_rules(self, tiny_run):
        _, summary = tiny_run
        assert summary["pass"] is True
        assert all("rule" in c and "experiment" in c for c in summary["checks"])
        rules = {c["rule"] for c in summary["checks"]}
        assert {"hyp-ellipticity", "moment-bound", "contraction", "invariance"} <= rules

    def test_csv_headers_present(self, tiny_run):
        out, _ = tiny_run
        body = (out / "decay.csv").read_text()
        assert body.splitlines()[0] == "tau,value,stderr,p,phi,engine,kind"
        assert body.endswith("\n")

    def test_determinism_bytes(self, tiny_run, tmp_path):
        out, _ = tiny_run
        doc = json.loads(json.dumps(TINY))
        again = tmp_path / "again"
        sc.run_scenario(doc, again)
        for name in ("hypothesis-check", "decay", "poincare"):
            assert (again / f"{name}.csv").read_bytes() == (out / f"{name}.csv").read_bytes()
        assert (again / "summary.json").read_bytes() == (out / "summary.json").read_bytes()

    def test_jobs_parallel_same_bytes(self, tiny_run, tmp_path):
        out, _ = tiny_run
        doc = json.loads(json.dumps(TINY))
        par = tmp_path / "par"
        sc.run_scenario(doc, par, jobs=3)
        for name in ("hypothesis-check", "decay", "poincare"):
            assert (par / f"{name}.csv").read_bytes() == (out / f"{name}.csv").read_bytes()

    def test_cli_run_exit_status_and_env(self, tmp_path, capsys, monkeypatch):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(TINY))
        monkeypatch.setenv("LAB_DATA_DIR", str(tmp_path / "envroot"))
        assert cli.main(["run", str(path)]) == 0
        assert (tmp_path / "envroot" / "tiny" / "summary.json").exists()
        out = capsys.readouterr().out
        assert "checks passed" in out

    def test_seed_override_changes_numbers(self, tiny_run, tmp_path):
        out, _ = tiny_run
        doc = json.loads(json.dumps(TINY))
        other = tmp_path / "seeded"
        sc.run_scenario(doc, other, overrides={"seed": 99})
        assert (other / "decay.csv").read_bytes() != (out / "decay.csv").read_bytes()
