import json
import subprocess
import sys

import numpy as np
import pytest

from gridmfg.cli import main
from gridmfg.market import read_runlog


@pytest.fixture(scope="module")
def smoke_case(tmp_path_factory):
    path = tmp_path_factory.mktemp("case") / "one"
    assert main(["gen-case", "--buses", "1", "--gens", "oil:1", "--seed", "0", "--out", str(path)]) == 0
    return path


def test_gen_case_is_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["gen-case", "--buses", "4", "--seed", "3", "--out", str(tmp_path / d)]) == 0
    for name in ("network.json", "generators.csv", "profiles.csv", "scenario.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_dispatch_command(smoke_case, tmp_path, capsys):
    (tmp_path / "bids.csv").write_text("bus,D_mt\n0,10\n")
    out = tmp_path / "r.json"
    assert main(["dispatch", "--case", str(smoke_case), "--bids", str(tmp_path / "bids.csv"), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["status"] == "optimal" and doc["p"] == pytest.approx([10.0])
    assert "hub price" in capsys.readouterr().out


def test_dispatch_infeasible_exits_1(smoke_case, tmp_path):
    (tmp_path / "bids.csv").write_text("bus,D_mt\n0,1e6\n")
    out = tmp_path / "r.json"
    assert main(["dispatch", "--case", str(smoke_case), "--bids", str(tmp_path / "bids.csv"), "--out", str(out)]) == 1
    assert json.loads(out.read_text())["status"] == "infeasible"


def test_simulate_report_and_baseline(smoke_case, tmp_path):
    run = tmp_path / "learn"
    assert main(["simulate", "--case", str(smoke_case), "--days", "1", "--seeds", "1", "--t-train", "100",
                 "--out", str(run)]) == 0
    assert (run / "report.json").is_file() and (run / "seed0" / "runlog.csv").is_file()
    before = (run / "report.json").read_text()
    assert main(["report", "--runs", str(run), "--window", "5"]) == 0
    assert (run / "report.json").read_text() == before

    base = tmp_path / "base"
    assert main(["simulate", "--case", str(smoke_case), "--days", "1", "--seeds", "2", "--no-storage",
                 "--out", str(base)]) == 0
    cols = read_runlog(base / "seed1" / "runlog.csv")
    assert np.all(cols["action_mean"] == 0.0)
    assert json.loads((base / "report.json").read_text())["seeds"] == [0, 1]


def test_plot_commands(smoke_case, tmp_path):
    for label, extra in (("learn", []), ("base", ["--no-storage"])):
        assert main(["simulate", "--case", str(smoke_case), "--days", "1", "--seeds", "2", "--t-train", "50",
                     "--out", str(tmp_path / label)] + extra) == 0
    logs = [str(tmp_path / lab / f"seed{s}" / "runlog.csv") for lab in ("learn", "base") for s in (0, 1)]
    svg = tmp_path / "imv.svg"
    assert main(["plot", "--runlog", *logs, "--kind", "imv", "--days", "1", "--out", str(svg)]) == 0
    text = svg.read_text()
    assert text.count('id="bar:imv:') == 4
    assert main(["plot", "--runlog", logs[0], logs[2], "--kind", "hub", "--days", "1",
                 "--out", str(tmp_path / "hub.svg")]) == 0


def test_plot_empty_runlog_exits_1(tmp_path):
    (tmp_path / "runlog.csv").write_text("")
    assert main(["plot", "--runlog", str(tmp_path / "runlog.csv"), "--kind", "hub", "--out",
                 str(tmp_path / "x.svg")]) == 1


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--bogus"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--case", "x", "--out", "y", "--seeds", "0"])
    assert e.value.code == 2


def test_missing_case_exits_1(tmp_path):
    assert main(["simulate", "--case", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "gridmfg", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gen-case" in r.stdout
