import json

import pytest
from click.testing import CliRunner

from pidetect import experiments
from pidetect.cli import main
from pidetect.io import read_csv_table


@pytest.fixture
def runner(monkeypatch):
    monkeypatch.delenv("PIDETECT_OUT", raising=False)
    return CliRunner()


def test_list_scenarios_flag(runner):
    res = runner.invoke(main, ["--list-scenarios"])
    assert res.exit_code == 0
    assert res.output.split() == experiments.list_scenarios()
    res = runner.invoke(main, ["list-scenarios"])
    assert [ln.split("\t")[0] for ln in res.output.splitlines()] == experiments.list_scenarios()


@pytest.mark.slow
@pytest.mark.parametrize("name", experiments.list_scenarios())
def test_every_listed_scenario_runs_with_defaults(runner, tmp_path, name):
    res = runner.invoke(main, ["run", name, "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    out = tmp_path / name
    for spec in experiments.get_scenario(name).outputs:
        rows = read_csv_table(out / f"{spec.name}.csv")
        assert rows and tuple(rows[0]) == spec.columns
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["seed"] == 0xCAFE and prov["scenario"] == name


def test_run_uses_env_out_dir(runner, tmp_path, monkeypatch):
    monkeypatch.setenv("PIDETECT_OUT", str(tmp_path))
    res = runner.invoke(main, ["run", "bias_vs_decay", "--format", "json"])
    assert res.exit_code == 0, res.output
    assert json.loads((tmp_path / "bias_vs_decay" / "markers.json").read_text())[0]["decay_time"] == 60e-6


def test_run_from_config(runner, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"[run]\nscenario = power_scan\nseed = 7\nout = {tmp_path}\n"
                   "[grid]\noffset_db = -1, 0, 1\n[settings]\nn_shots = 50\n")
    res = runner.invoke(main, ["run", "--config", str(cfg)])
    assert res.exit_code == 0, res.output
    rows = read_csv_table(tmp_path / "power_scan" / "amplitudes.csv")
    assert {r["offset_db"] for r in rows} == {"-1.0", "0.0", "1.0"}
    assert json.loads((tmp_path / "power_scan" / "provenance.json").read_text())["seed"] == 7


def test_predict(runner):
    res = runner.invoke(main, ["predict", "-p", "decay_time=60us", "--format", "json"])
    assert res.exit_code == 0, res.output
    rows = {r["scheme"]: r for r in json.loads(res.output)}
    assert rows["threshold"]["bias"] == pytest.approx(0.1315, abs=1e-3)
    assert rows["pi"]["bias"] == pytest.approx(-0.0519, abs=1e-3)
    res = runner.invoke(main, ["predict", "-p", "detect_time=20us"])
    assert res.exit_code == 0, res.output


def test_simulate_is_reproducible(runner):
    args = ["simulate", "--shots", "2000", "--seed", "0x10"]
    a, b = runner.invoke(main, args), runner.invoke(main, args)
    assert a.exit_code == 0 and a.output == b.output
    assert a.output.splitlines()[0].startswith("scheme,err_bright")


def test_fit_calibration(runner, tmp_path):
    cal = tmp_path / "cal.csv"
    cal.write_text("k,bright_count,dark_count\n0,20,90\n1,30,10\n2,50,0\n")
    obs = tmp_path / "obs.csv"
    obs.write_text("k,count\n0,55\n1,20\n2,25\n")
    res = runner.invoke(main, ["fit-calibration", str(cal), "--observed", str(obs)])
    assert res.exit_code == 0, res.output
    row = res.output.splitlines()[1].split(",")
    assert float(row[2]) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("args, code", [
    (["predict", "-p", "threshold=-1"], 2),
    (["predict", "-p", "nonsense"], 2),
    (["run", "no_such_scenario"], 2),
    (["run"], 2),
    (["simulate", "--seed", "banana"], 2),
    (["predict", "--config", "/nonexistent/cfg"], 2),
    (["fit-calibration", "/nonexistent/cal.csv"], 4),
    (["simulate", "--shots", "10", "--power-offset", "40"], 3),
])
def test_exit_codes(runner, args, code):
    res = runner.invoke(main, args)
    assert res.exit_code == code, res.output
    assert "error:" in res.output


def test_bad_calibration_exit_code(runner, tmp_path):
    cal = tmp_path / "cal.csv"
    cal.write_text("k,bright_count,dark_count\n0,20,5\n1,-1,10\n")
    assert runner.invoke(main, ["fit-calibration", str(cal)]).exit_code == 3


def test_unwritable_out_dir(runner, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    res = runner.invoke(main, ["run", "bias_vs_decay", "--out", str(blocker / "sub")])
    assert res.exit_code == 4
