import json

import numpy as np
import pytest

from lorentz_kinetics import acceptance, cli
from lorentz_kinetics.acceptance import CheckResult
from lorentz_kinetics.cli import OUT_DIR_ENV, ConfigError, ExperimentConfig, main, parse_config
from lorentz_kinetics.grids import build_phase_grid, write_field_binary

SMALL_EVOLVE = ["evolve", "--grid", "4,16,8", "--smax", "10", "--T", "6", "--dt", "0.1", "--times", "1,2,5,5.3,5.6,6"]


def test_empty_config_gives_defaults():
    assert parse_config("# nothing here\n\n") == ExperimentConfig()


def test_config_values_and_comments():
    cfg = parse_config("n_theta = 16  # finer\nT = 2.5\ninit = equilibrium\nk-list = 1,0;0,1\n")
    assert (cfg.n_theta, cfg.T, cfg.init, cfg.k_list) == (16, 2.5, "equilibrium", "1,0;0,1")


@pytest.mark.parametrize(
    "text, line",
    [
        ("n_theta = 8\nno equals sign\n", 2),
        ("n_theta = 8\n\nbogus = 1\n", 3),
        ("dt = 0.1\ndt = 0.2\n", 2),
        ("n_s = many\n", 1),
    ],
)
def test_config_errors_name_the_line(text, line):
    with pytest.raises(ConfigError, match=f"line {line}:"):
        parse_config(text)


def test_validation_rejects_bad_settings():
    for bad in (dict(command="nope"), dict(init="square"), dict(init="custom-file"), dict(dt=0.0),
                dict(level="huge")):
        with pytest.raises(ConfigError):
            ExperimentConfig(**bad).validate()


def test_out_dir_defaults_to_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "from_env"))
    assert ExperimentConfig().out_dir == str(tmp_path / "from_env")
    monkeypatch.delenv(OUT_DIR_ENV)
    assert ExperimentConfig().out_dir == "runs"


def test_evolve_writes_reproducible_outputs(tmp_path, capsys):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(SMALL_EVOLVE + ["--out", str(first)]) == 0
    assert main(SMALL_EVOLVE + ["--out", str(second)]) == 0
    a = (first / "series.csv").read_bytes()
    assert a == (second / "series.csv").read_bytes()
    header, *rows = a.decode().splitlines()
    assert header == "t,l1,l2,linf"
    assert len(rows) == 6
    manifest = json.loads((first / "manifest.json").read_text())
    assert manifest["config"]["n_theta"] == 4 and manifest["config"]["s_max"] == 10.0
    assert set(manifest["outputs"]) == {"series.csv", "report.json", "manifest.json"}
    assert manifest["checks"] == []
    assert "l1_exponent" in manifest["constants"]
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["passed"] is True


def test_config_file_and_flags_combine(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("n_theta = 4\nn_s = 16\nn_h = 8\ns_max = 10\nT = 6\ntimes = 1,2,4,5,6\ninit = equilibrium\n")
    out = tmp_path / "out"
    assert main(["evolve", "--config", str(conf), "--out", str(out), "--norms", "1"]) == 0
    header, *rows = (out / "series.csv").read_text().splitlines()
    assert header == "t,l1"
    assert max(float(r.split(",")[1]) for r in rows) < 0.05


def test_custom_file_datum(tmp_path):
    grid = build_phase_grid(4, 16, 10.0, 8)
    from lorentz_kinetics.evolution import cosine_datum

    dump = tmp_path / "mu0.bin"
    write_field_binary(cosine_datum(grid).field.values, dump)
    args = SMALL_EVOLVE + ["--init", "custom-file", "--init-file", str(dump)]
    assert main(args + ["--out", str(tmp_path / "file")]) == 0
    assert main(SMALL_EVOLVE + ["--out", str(tmp_path / "closure")]) == 0
    a = np.loadtxt(tmp_path / "file" / "series.csv", delimiter=",", skiprows=1)
    b = np.loadtxt(tmp_path / "closure" / "series.csv", delimiter=",", skiprows=1)
    assert np.max(np.abs(a - b)) < 0.02


def test_config_error_exit_code(tmp_path, capsys):
    conf = tmp_path / "bad.conf"
    conf.write_text("n_theta = 4\nwhat = 1\n")
    assert main(["evolve", "--config", str(conf)]) == 2
    assert "line 2" in capsys.readouterr().err


def _fake_check(criterion, passed=True):
    def check(**kwargs):
        return CheckResult(criterion, f"fake {criterion}", passed, {"value": np.float64(criterion)}, "< 1")

    return check


def test_check_lists_every_criterion(monkeypatch, tmp_path):
    monkeypatch.setattr(acceptance, "CHECKS", {n: _fake_check(n) for n in range(1, 15)})
    assert main(["check", "--level", "smoke", "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    status = {c["criterion"]: c["status"] for c in manifest["checks"]}
    assert sorted(status) == list(range(1, 15))
    assert all(status[n] == "PASS" for n in acceptance.SMOKE_CHECKS)
    assert all(status[n] == "SKIP" for n in range(7, 15))
    assert manifest["constants"]["check3_value"] == 3.0


def test_failed_check_gives_nonzero_exit(monkeypatch, tmp_path):
    fakes = {n: _fake_check(n) for n in range(1, 15)}
    fakes[2] = _fake_check(2, passed=False)
    monkeypatch.setattr(acceptance, "CHECKS", fakes)
    assert main(["check", "--out", str(tmp_path)]) == 1
    lines = [r.line() for r in cli.acceptance_suite("smoke")]
    assert lines[1].startswith("FAIL [ 2]")
