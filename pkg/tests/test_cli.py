import json
import subprocess
import sys

import pytest

from qcsurgery import cli

SMALL = {"resolution": [65, 49], "cap": 3,
         "solver": {"resolution": [64, 64]},
         "planner": {"stages": 1, "resolution": [64, 64]},
         "check": {"samples": 500, "membership": 2000},
         "hyper": {"n_max": 2}}


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


def run(tmp_path, *args):
    return cli.main(list(args) + ["--out", str(tmp_path)])


@pytest.mark.parametrize("cmd,files", [
    ("build", ["tiling.json"]),
    ("mu", ["mu.bin", "mu_stats.json"]),
    ("solve", ["psi.bin", "solve.json"]),
    ("render", ["basin.ppm", "components.csv"]),
    ("hyper", ["hyper.csv"]),
    ("plan", ["plan.json"]),
    ("report", ["report.json"]),
])
def test_commands_write_outputs(tmp_path, small_config, cmd, files):
    assert run(tmp_path, cmd, "--config", small_config) == 0
    for f in files:
        assert (tmp_path / f).stat().st_size > 0


def test_check_command(tmp_path, small_config):
    assert run(tmp_path, "check", "--config", small_config) == 0
    text = (tmp_path / "check.txt").read_text()
    assert "FAIL" not in text and text.count("PASS") > 20


def test_flags_override_config(tmp_path, small_config):
    assert run(tmp_path, "build", "--config", small_config, "--diameters", "2,2,6") == 0
    doc = json.loads((tmp_path / "tiling.json").read_text())
    assert doc["diameters"] == [2, 2, 6]


def test_report_config_block_is_accepted(tmp_path, small_config):
    assert run(tmp_path, "plan", "--config", small_config) == 0
    again = tmp_path / "again"
    assert cli.main(["plan", "--config", str(tmp_path / "plan.json"), "--out", str(again)]) == 0
    assert (again / "plan.json").read_bytes() == (tmp_path / "plan.json").read_bytes()


@pytest.mark.parametrize("args", [
    ["build", "--diameters", "2,3"],
    ["build", "--window", "1,0,0,1"],
    ["render", "--resolution", "4"],
    ["build", "--cap", "0"],
    ["render", "--window=-60,4,-8,8"],
])
def test_bad_input_exits_2(tmp_path, args):
    assert run(tmp_path, *args) == 2


def test_unknown_config_key(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"solver": {"grid": 3}}))
    assert run(tmp_path, "build", "--config", str(p)) == 2


def test_argparse_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "qcsurgery", "build", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "4 diamonds" in r.stdout
