import csv
import json
import math

import numpy as np
import pytest

from gammabounds.cli import main
from gammabounds.report import PLOT_COLUMNS, REPORT_COLUMNS, read_report_csv

from conftest import synthetic


def write_data(path, n=200, seed=0):
    d = synthetic(n=n, d=2, seed=seed)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "z", "x1", "x2"])
        for y, z, x in zip(d.outcomes, d.treatments, d.covariates):
            w.writerow([repr(float(y)), int(z), repr(float(x[0])), repr(float(x[1]))])
    return path


@pytest.fixture
def data_csv(tmp_path):
    return str(write_data(tmp_path / "obs.csv"))


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze_csv_round_trip(capsys, data_csv):
    code, out, _ = run(capsys, "analyze", "--input", data_csv, "--outcome", "y", "--treatment", "z",
                       "--gamma", "2")
    assert code == 0
    assert out.splitlines()[0] == ",".join(REPORT_COLUMNS)
    rec = read_report_csv(out)[0]
    assert rec["gamma"] == 2.0
    assert rec["ci_low"] <= rec["tau_lower"] <= rec["tau_upper"] <= rec["ci_high"]


def test_exp_flag_and_json(capsys, data_csv):
    code, out, _ = run(capsys, "analyze", "--input", data_csv, "--outcome", "y", "--treatment", "z",
                       "--exp", "1", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    assert doc["rows"][0]["gamma"] == pytest.approx(math.e)
    assert {"seed", "config_hash"} <= set(doc["provenance"])


def test_analyze_deterministic_bytes(capsys, data_csv):
    args = ["analyze", "--input", data_csv, "--outcome", "y", "--treatment", "z", "--gamma", "3",
            "--seed", "5"]
    a = run(capsys, *args)[1]
    b = run(capsys, *args, "--threads", "2")[1]
    assert a == b


def test_pretty_table(capsys, data_csv):
    code, out, _ = run(capsys, "analyze", "--input", data_csv, "--outcome", "y", "--treatment", "z",
                       "--gamma", "1", "--format", "pretty")
    assert code == 0
    head = out.splitlines()[0]
    for col in ("Gamma", "Lower", "Upper", "Lower 95% CI", "Upper 95% CI", "Length of CI"):
        assert col in head
    assert "1.0000" in out


def test_sweep_writes_plot_data(capsys, data_csv, tmp_path):
    out = tmp_path / "sweep.csv"
    code, _, _ = run(capsys, "sweep", "--input", data_csv, "--outcome", "y", "--treatment", "z",
                     "--gammas", "1,2,4", "--out", str(out))
    assert code == 0
    rows = read_report_csv(out.read_text())
    assert [r["gamma"] for r in rows] == [1.0, 2.0, 4.0]
    plot = list(csv.DictReader(open(f"{out}.plot.csv")))
    assert tuple(plot[0]) == PLOT_COLUMNS and len(plot) == 12
    assert {p["series"] for p in plot} == {"bound_low", "bound_high", "ci_low", "ci_high"}


def test_sweep_plot_figure(capsys, data_csv, tmp_path):
    fig = tmp_path / "fig.png"
    code, _, _ = run(capsys, "sweep", "--input", data_csv, "--outcome", "y", "--treatment", "z",
                     "--exp", "0,1", "--plot", str(fig))
    assert code == 0 and fig.stat().st_size > 0


def test_config_file_defaults_and_override(capsys, data_csv, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"input = {data_csv}\noutcome = y\ntreatment = z\ngamma = 2\nseed = 3\n")
    a = run(capsys, "analyze", "--config", str(cfg))[1]
    b = run(capsys, "analyze", "--input", data_csv, "--outcome", "y", "--treatment", "z",
            "--gamma", "2", "--seed", "3")[1]
    assert a == b
    c = run(capsys, "analyze", "--config", str(cfg), "--gamma", "1")[1]
    assert read_report_csv(c)[0]["gamma"] == 1.0
    assert run(capsys, "analyze", "--config", str(tmp_path / "missing.cfg"))[0] == 2


def test_exit_codes(capsys, data_csv, tmp_path):
    base = ["--outcome", "y", "--treatment", "z"]
    assert run(capsys, "analyze", "--input", str(tmp_path / "nope.csv"), *base, "--gamma", "2")[0] == 2
    assert run(capsys, "analyze", "--input", data_csv, *base, "--gamma", "0.5")[0] == 2
    assert run(capsys, "analyze", "--input", data_csv, "--outcome", "q", "--treatment", "z",
               "--gamma", "2")[0] == 2
    assert run(capsys, "analyze", "--input", data_csv, *base)[0] == 2  # no gamma
    assert run(capsys, "design", "--gaussian", "1", "0")[0] == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("y,z,x\n1,2,0\n")
    code, _, err = run(capsys, "analyze", "--input", str(bad), *base, "--gamma", "2")
    assert code == 2 and "treatment" in err


def test_fold_failure_exit_one(capsys, tmp_path):
    p = tmp_path / "tiny.csv"
    p.write_text("y,z,x\n" + "".join(f"{i},{int(i == 0)},{i / 10}\n" for i in range(12)))
    code, _, err = run(capsys, "analyze", "--input", str(p), "--outcome", "y", "--treatment", "z",
                       "--gamma", "2", "--folds", "2")
    assert code == 1 and "fold" in err


def test_simulate_small(capsys):
    args = ["simulate", "--n", "200", "--reps", "2", "--seed", "1"]
    code, out, _ = run(capsys, *args)
    assert code == 0
    rec = next(csv.DictReader(out.splitlines()))
    assert int(rec["replications"]) == 2 and 0 <= float(rec["coverage"]) <= 1
    assert run(capsys, *args)[1] == out


def test_simulate_single_rep_notes_sd(capsys):
    code, out, err = run(capsys, "simulate", "--n", "200", "--reps", "1")
    assert code == 0 and "single replication" in err
    rec = next(csv.DictReader(out.splitlines()))
    assert rec["sd_lower"] == ""


def test_design_gaussian_and_infinite(capsys, tmp_path):
    code, out, _ = run(capsys, "design", "--gaussian", "1", "1")
    assert code == 0
    assert float(out.splitlines()[1].split(",")[1]) == pytest.approx(13.002572786857618, rel=1e-12)
    s = tmp_path / "s.csv"
    s.write_text("y1,y0\n1,0\n1,0\n1,\n")
    code, out, _ = run(capsys, "design", "--samples", str(s), "--format", "json")
    assert code == 0 and json.loads(out)["gamma_design"] == "inf"
