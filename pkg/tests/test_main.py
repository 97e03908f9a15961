import json

import pytest

from dataset import generate_synthetic, write_csv
from main import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, build_parser, config_from_args, main, parse_sizes


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    write_csv(generate_synthetic(160, 8, {0, 1}, noise_rate=0.05, seed=2), tmp_path / "data.csv")
    return tmp_path


FAST = ["--data", "data.csv", "--fitness", "centroid", "--pop-size", "4", "--max-iter", "3"]


def _error_line(capsys) -> dict:
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    return json.loads(lines[-1])


def test_parse_sizes():
    assert parse_sizes("100,150, 215") == [100, 150, 215]


def test_flags_override_config_file(workdir):
    (workdir / "exp.json").write_text(json.dumps({"colony": {"limit": 7, "population_size": 9}}))
    args = build_parser().parse_args(["--config", "exp.json", "--pop-size", "5", "--svm-c", "0.01"])
    config = config_from_args(args)
    assert config.colony.limit == 7
    assert config.colony.population_size == 5
    assert config.protocol.svm_params.regularization_strength == 0.01


def test_single_run_succeeds(workdir, capsys):
    assert main(FAST + ["--out", "out"]) == EXIT_OK
    for name in ("results.json", "sweep.csv", "report.csv"):
        assert (workdir / "out" / name).exists()
    assert "held-out accuracy" in capsys.readouterr().out
    assert any((workdir / "logs").iterdir())


def test_sweep_run_succeeds(workdir):
    assert main(FAST + ["--sweep", "2,3", "--out", "out", "--workers", "2"]) == EXIT_OK
    document = json.loads((workdir / "out" / "results.json").read_text())
    assert document["mode"] == "sweep"
    assert document["chosen_size"] in (2, 3)


def test_invalid_sweep_size_is_a_config_error(workdir, capsys):
    assert main(FAST + ["--sweep", "3,300"]) == EXIT_CONFIG
    error = _error_line(capsys)
    assert error["error"] == "ConfigValidationError"
    assert "300" in error["message"]


def test_bad_label_is_a_config_error(workdir, capsys):
    (workdir / "bad.csv").write_text("a,class\n1,1\n0,7\n")
    assert main(["--data", "bad.csv"]) == EXIT_CONFIG
    assert _error_line(capsys)["error"] == "DatasetError"


def test_missing_data_file_fails(workdir, capsys):
    assert main(["--data", "absent.csv"]) == EXIT_FAILURE
    assert _error_line(capsys)["error"] == "FileNotFoundError"
