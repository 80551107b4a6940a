import json
import math
from pathlib import Path

import pytest

from stopsum.cli import main, write_bundle
from stopsum.errors import ValidationError
from stopsum.scenarios import (
    bundled_scenarios,
    parse_scenario_text,
    parse_tau_spec,
    run_scenario,
)

MINIMAL = """
[scenario]
name = minimal_check
[distribution]
spec = lattice step=1 offset=1 mass=[0.5,0,0.5]
[tau]
spec = deterministic n=2
[x_grid]
kind = linear
start = 1
stop = 5
count = 3
"""


class TestCatalog:
    def test_count_and_prefixes(self):
        catalog = bundled_scenarios()
        assert len(catalog) >= 12
        names = list(catalog)
        for prefix in ("theorem1_", "th_asymp_", "thm2_", "co1_", "stopping_",
                       "pathological_"):
            assert any(n.startswith(prefix) for n in names), prefix

    def test_descriptions_nonempty(self):
        for sc in bundled_scenarios().values():
            assert sc.description.strip()

    def test_every_scenario_validates(self):
        for sc in bundled_scenarios().values():
            assert sc.task
            assert sc.x_grid().size >= 1


class TestScenarioParsing:
    def test_minimal_scenario_runs(self):
        sc = parse_scenario_text(MINIMAL)
        rows, summary = run_scenario(sc)
        by_x = {r["x"]: r["exact"] for r in rows}
        assert by_x[3.0] == pytest.approx(0.75)
        assert summary["config"]["mc"]["seed"] == "20260810"  # default resolved

    def test_defaults_are_embedded(self):
        sc = parse_scenario_text(MINIMAL)
        assert sc.config["numerics"]["series_rel_budget"] == "1e-3"
        assert sc.config["x_grid"]["kind"] == "linear"

    def test_malformed_distribution_names_field(self):
        bad = MINIMAL.replace("lattice step=1 offset=1 mass=[0.5,0,0.5]",
                              "pareto alpha=-2 xm=1")
        with pytest.raises(ValidationError, match="alpha"):
            parse_scenario_text(bad)

    def test_unknown_task_rejected(self):
        bad = MINIMAL.replace("[distribution]",
                              "task = nonsense\n[distribution]")
        with pytest.raises(ValidationError, match="task"):
            parse_scenario_text(bad)

    def test_tau_specs(self):
        assert parse_tau_spec("geometric p=0.5").mean() == pytest.approx(2.0)
        assert parse_tau_spec("deterministic n=3").mean() == 3.0
        assert parse_tau_spec("power alpha=2.0").tail(10) == pytest.approx(0.01)
        with pytest.raises(ValidationError):
            parse_tau_spec("poisson lam=2")


class TestBundles:
    def test_write_and_reread(self, tmp_path):
        rows = [{"x": 1.0, "value": 0.5}, {"x": 2.0, "value": 1e-15}]
        summary = {"name": "t", "tiny": 2.5e-14, "nested": {"v": float("inf")}}
        out = write_bundle(tmp_path, "t", rows, summary)
        text = (out / "results.csv").read_text()
        assert text.splitlines()[0] == "x,value"
        data = json.loads((out / "summary.json").read_text())
        assert isinstance(data["tiny"], str)  # tiny probabilities as strings
        assert data["nested"]["v"] == "inf"

    def test_rerun_bit_identical(self, tmp_path):
        sc = parse_scenario_text(MINIMAL)
        rows1, summary1 = run_scenario(sc)
        rows2, summary2 = run_scenario(parse_scenario_text(MINIMAL))
        a = write_bundle(tmp_path, "a", rows1, summary1)
        b = write_bundle(tmp_path, "b", rows2, summary2)
        assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
        assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()


class TestCli:
    def test_list_exit_zero(self, capsys):
        assert main(["list"]) == 0
        out = capsys.readouterr().out
        assert "theorem1_geometric_pareto" in out

    def test_run_minimal_scenario_file(self, tmp_path, capsys):
        path = tmp_path / "m.ini"
        path.write_text(MINIMAL)
        assert main(["run", str(path), "--out-dir", str(tmp_path)]) == 0
        bundle = tmp_path / "minimal_check"
        assert (bundle / "results.csv").exists()
        summary = json.loads((bundle / "summary.json").read_text())
        assert summary["config"]["scenario"]["name"] == "minimal_check"
        assert "version" in summary

    def test_unknown_scenario_is_validation_error(self):
        assert main(["run", "no_such_scenario"]) == 2

    def test_bad_spec_is_validation_error(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text(MINIMAL.replace("step=1 offset=1 mass=[0.5,0,0.5]",
                                        "step=1 offset=0 mass=[0.9]"))
        assert main(["run", str(path)]) == 2

    def test_classify_runs(self, capsys):
        assert main(["classify", "--dist", "pareto alpha=2.5 xm=1",
                     "--x-start", "20", "--x-stop", "2000", "--x-count", "8"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert "classes" in report and "long_tailed" in report["classes"]

    def test_convtail_with_cache(self, tmp_path, capsys):
        args = ["convtail", "--dist", "lattice step=1 offset=1 mass=[0.5,0,0.5]",
                "--x-max", "12", "--n", "2", "--x", "3", "--cache-dir",
                str(tmp_path)]
        assert main(args) == 0
        first = capsys.readouterr().out
        assert main(args) == 0  # second run hits the cache
        second = capsys.readouterr().out
        assert first == second
        assert math.isclose(
            math.exp(float(first.splitlines()[1].split(",")[1])), 0.75)

    def test_pathological_cli(self, tmp_path):
        assert main(["pathological", "--k", "3", "--verify", "jk",
                     "--out-dir", str(tmp_path)]) == 0
        rows = (Path(tmp_path) / "pathological_k3_jk" / "results.csv").read_text()
        assert rows.splitlines()[0] == "k,log_value,log_bound,containment,passes"

    def test_branching_cli(self, capsys):
        assert main(["branching", "--alpha", "2.5", "--mean", "1.0",
                     "--generations", "2", "--x", "20"]) == 0

    def test_simulate_respects_seed_override(self, tmp_path):
        assert main(["simulate", "calibration_lattice_tau2", "--samples", "5000",
                     "--seed", "1", "--out-dir", str(tmp_path)]) == 0
        s1 = (tmp_path / "calibration_lattice_tau2" / "results.csv").read_bytes()
        assert main(["simulate", "calibration_lattice_tau2", "--samples", "5000",
                     "--seed", "2", "--out-dir", str(tmp_path)]) == 0
        s2 = (tmp_path / "calibration_lattice_tau2" / "results.csv").read_bytes()
        assert s1 != s2


def test_three_section_minimal_scenario_runs():
    sc = parse_scenario_text(
        "[scenario]\nname = bare\n"
        "[distribution]\nspec = shift base=(pareto alpha=2 xm=1) by=-3\n"
        "[tau]\nspec = geometric p=0.5\n")
    rows, summary = run_scenario(sc)
    assert len(rows) == 8  # default log grid
    assert 0.7 < rows[-1]["ratio"] < 1.1


def test_stopped_task_with_mc_attachment():
    sc = parse_scenario_text(MINIMAL.replace("[distribution]",
                                             "method = both\n[distribution]"))
    sc.config["mc"]["samples"] = "20000"
    rows, summary = run_scenario(sc)
    by_x = {r["x"]: r for r in rows}
    assert abs(by_x[3.0]["mc_estimate"] - 0.75) < 0.02
    assert abs(by_x[3.0]["z"]) < 4
    assert summary["mc"]["valid"] is True
    assert summary["mc"]["tau_mean_estimate"] == 2.0
