import csv
import shutil
import subprocess
import sys

import pytest

from edgenids.cli import main
from edgenids.costmodel import default_profiles, estimate_latency, load_profile
from edgenids.models import sweep_specs


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_no_subcommand(capsys):
    assert main([]) == 1
    assert "usage:" in capsys.readouterr().err


def test_missing_required_option_prints_subcommand_help(capsys):
    assert main(["sweep", "--family", "ff"]) == 1
    err = capsys.readouterr().err
    assert "edgenids sweep" in err and "--out" in err


def test_sweep_happy_path(work):
    code = main(["sweep", "--family", "ff", "--data", "synth", "--out", "runs/ff",
                 "--rows", "1500", "--epochs", "1"])
    assert code == 0
    assert (work / "runs/ff/results.csv").is_file()
    assert len(list((work / "runs/ff").glob("*.svg"))) == 4


def test_sweep_cost_only_with_global_flags_after(work):
    assert main(["sweep", "--family", "cnn_deep", "--no-train", "--out", "deep",
                 "--seed", "3", "--profile", "accel-default"]) == 0
    with open(work / "deep/results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10 and rows[0]["seed"] == "3"
    assert "cpu-default_latency_ms" not in rows[0]


def test_gradcheck(capsys):
    assert main(["gradcheck", "--configs", "3"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4


def test_gradcheck_fails_at_impossible_tolerance():
    assert main(["gradcheck", "--configs", "2", "--tol", "0"]) == 2


def test_runtime_error_exit_code(work, capsys):
    assert main(["infer", "--model", "missing.enid", "--row", "0.1"]) == 2
    assert "MissingFile" in capsys.readouterr().err


def test_pipeline(work, capsys, data_dir):
    assert main(["synth", "--rows", "1200", "--out", "flows.npz"]) == 0
    assert main(["synth", "--rows", "50", "--out", "flows.csv"]) == 0
    assert main(["--seed", "1", "train", "--model", "ff(2)", "--data", "flows.npz", "--out", "ff2.enid",
                 "--epochs", "2", "--history", "h.csv"]) == 0
    assert main(["quantize", "--model", "ff2.enid", "--data", "flows.npz", "--out", "ff2q.enid",
                 "--report", "cal.csv"]) == 0
    assert main(["infer", "--model", "ff2q.enid", "--input", "flows.csv", "--out", "pred.csv"]) == 0
    assert len((work / "pred.csv").read_text().splitlines()) == 51
    capsys.readouterr()
    assert main(["infer", "--model", "ff2q.enid", "--row", ",".join(["0.5"] * 39)]) == 0
    assert capsys.readouterr().out.startswith("label,p_benign,p_malicious")
    assert main(["measure", "--model", "ff2q.enid", "--reps", "20"]) == 0
    assert main(["ingest", "--csv", str(data_dir / "flows_10.csv"), "--out", "enc"]) == 0
    assert {p.name for p in (work / "enc").iterdir()} == {"schema.txt", "train.npz", "val.npz", "test.npz"}


def test_report_from_results(work):
    assert main(["sweep", "--family", "ff", "--no-train", "--out", "a"]) == 0
    assert main(["report", "--results", "a/results.csv", "--out", "b"]) == 0
    assert (work / "b/efficiency_ratio_vs_size.svg").is_file()


def test_config_file(work):
    (work / "run.cfg").write_text("epochs = 1\nrows = 1200\nprofiles = cpu-default\n")
    assert main(["--config", "run.cfg", "sweep", "--family", "ff", "--out", "c"]) == 0
    header = (work / "c/results.csv").read_text().splitlines()[0]
    assert "cpu-default_latency_ms" in header and "accel-default" not in header
    (work / "bad.cfg").write_text("colour = blue\n")
    assert main(["--config", "bad.cfg", "sweep", "--family", "ff", "--out", "d"]) == 2


def test_calibrate(work, capsys):
    truth = default_profiles()[0]
    with open(work / "obs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "latency_s"])
        for tag in sweep_specs("ff"):
            w.writerow([str(tag), repr(estimate_latency(tag, truth).latency)])
    assert main(["calibrate", "--observations", "obs.csv", "--free", "fixed_overhead",
                 "--out", "fit.profile", "--name", "fit"]) == 0
    fitted = load_profile(work / "fit.profile")
    assert fitted.name == "fit"
    assert fitted.fixed_overhead == pytest.approx(truth.fixed_overhead, rel=1e-9)


@pytest.mark.skipif(shutil.which("edgenids") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["edgenids", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "edgenids" in proc.stdout


def test_module_entry():
    proc = subprocess.run([sys.executable, "-m", "edgenids.cli", "nope"], capture_output=True, text=True)
    assert proc.returncode == 1
