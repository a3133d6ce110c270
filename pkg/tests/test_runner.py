from pathlib import Path

import pandas as pd
from pytest import mark

from ktrates.errors import UsageError
from ktrates.lab import operators, runner
from ktrates.lab.config_utils import parse_config
from ktrates.lab.operators import sample_ns
from ktrates.lab.rates import BoundReport
from ktrates.main import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def read_rows(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[-1].split(",")[0] == "OK"
    assert set(lines[-1].split(",")[1:]) <= {""}
    return pd.read_csv(path).iloc[:-1]


def run_text(text, out):
    return runner.run(parse_config(text, overrides={"output_dir": str(out)}))


def test_identity_bounds_are_not_applicable(tmp_path):
    assert main(["bounds", "--config", str(CONFIGS / "identity_bounds.conf"), "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "bounds.csv")
    assert len(rows) == 5
    assert (rows["applicable"].astype(int) == 0).all()
    assert (rows["holds"].astype(int) == 1).all()
    assert (tmp_path / "config.yaml").exists()


CURVES = """
command = curves
[operator]
name = toeplitz_quarter
[ranges]
n_max = 256
theta_points = 40
"""


def test_curves_are_deterministic(tmp_path):
    assert run_text(CURVES, tmp_path / "a") == 0
    assert run_text(CURVES, tmp_path / "b") == 0
    for name in ("decay.csv", "resolvent.csv", "decay.gp", "resolvent.gp"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    text = (tmp_path / "a" / "decay.csv").read_text(encoding="utf-8")
    assert text.startswith("n,value,exact\n")
    assert text.endswith("OK,,\n")
    assert "0,1.5000000000000000e+00,1" in text
    rows = read_rows(tmp_path / "a" / "decay.csv")
    assert len(rows) == sample_ns(256).size


def test_oracle_on_toeplitz(tmp_path):
    assert main(["oracle", "--config", str(CONFIGS / "toeplitz_oracle.conf"), "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "oracle.csv")
    assert len(rows) == 15
    assert set(rows["quantity"]) == {"deficiency", "power", "resolvent"}
    assert rows["delta"].astype(float).max() <= 1e-8


def test_fit_on_stolz(tmp_path):
    text = "command = fit\n[operator]\nname = stolz_diagonal\nalpha = 2\n[ranges]\nn_max = 4096\nfit_lo = 64\n"
    assert run_text(text, tmp_path) == 0
    rows = read_rows(tmp_path / "fit.csv")
    assert list(rows["model"]) == ["power", "power_log"]
    assert 0.35 <= float(rows["exponent"].iloc[0]) <= 0.65
    assert int(rows["n_lo"].iloc[0]) == 64 and int(rows["n_hi"].iloc[0]) == 4096


def test_counterexample_outputs(tmp_path):
    text = ("command = counterexample\n[counterexample]\nalpha = 3\nn0 = 10, 20\nells = 20\n"
            "oracle_ells = 10\nangles = 48\nuniform = 16\nradii = 24\n")
    code = run_text(text, tmp_path)
    assert code in (runner.EXIT_OK, runner.EXIT_VIOLATION)
    for name in ("lemma.csv", "transforms.csv", "witness.csv", "checks.csv", "config.yaml"):
        assert (tmp_path / name).exists()
    checks = read_rows(tmp_path / "checks.csv").set_index("name")
    assert int(checks.at["lemma_constants", "holds"]) == 1
    assert int(checks.at["transform_oracle", "holds"]) == 1
    witness = read_rows(tmp_path / "witness.csv")
    assert list(witness["safety"].astype(int)) == [0, 1, 0, 1]
    assert (witness["scaled"].astype(float) > 0).all()


def test_exit_codes(tmp_path, monkeypatch):
    monkeypatch.setitem(runner.COMMANDS, "curves", lambda config, out: [BoundReport("broken", False)])
    assert run_text(CURVES, tmp_path / "violated") == runner.EXIT_VIOLATION
    assert (tmp_path / "violated" / "config.yaml").exists()

    monkeypatch.setitem(runner.COMMANDS, "curves",
                        lambda config, out: [BoundReport.not_applicable("skipped", "nothing to do")])
    assert run_text(CURVES, tmp_path / "skipped") == runner.EXIT_OK

    def refuse(config, out):
        raise UsageError("bad request")

    monkeypatch.setitem(runner.COMMANDS, "curves", refuse)
    assert run_text(CURVES, tmp_path / "refused") == runner.EXIT_USAGE


@mark.parametrize("argv", (
    ["dance", "--config", "x.conf"],
    ["curves"],
    ["curves", "--config", "does/not/exist.conf"],
    ["curves", "--config", "x.conf", "--seed", "seven"],
))
def test_main_usage_errors(argv):
    assert main(argv) == 1


def test_main_rejects_invalid_config(tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text("command = curves\n[checks]\nc = 1.5\n", encoding="utf-8")
    assert main(["curves", "--config", str(path), "--out", str(tmp_path / "out")]) == 1
    assert not (tmp_path / "out").exists()


def test_main_help_exits_cleanly():
    assert main(["--help"]) == 0


def test_q_power_check_reports_certification(tmp_path, monkeypatch):
    monkeypatch.setattr(operators, "DIAGONAL_SCAN_CAP", 1 << 15)
    text = ("command = bounds\nalpha = 1\n[operator]\nname = ritt_diagonal\n"
            "[ranges]\nn_max = 256\ntheta_points = 40\n[checks]\ninclude = q_power\n")
    assert run_text(text, tmp_path) == runner.EXIT_OK
    row = read_rows(tmp_path / "bounds.csv").iloc[0]
    assert row["name"] == "q_power[alpha=1]"
    assert int(row["holds"]) == 1
    assert "certified=0.0000000000000000e+00" in row["constants"]
    assert row["notes"] == "tail not certified, sup is a lower bound"
