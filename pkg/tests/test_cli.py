import csv
import json

import numpy as np
import pytest

from deconfounder import cli
from deconfounder.cli import main, parse_candidates, parse_contrast
from deconfounder.errors import SpecError


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--kind", "two-cause", "--n", "300", "--reps", "2", "--seed", "1",
                 "--out", str(out)]) == 0
    return out


def test_parse_candidates_comma_and_semicolon():
    specs = parse_candidates("linear,quadratic")
    assert [s.variant for s in specs] == ["linear", "quadratic"]
    specs = parse_candidates("pf:k=10,shape=0.3")
    assert len(specs) == 1 and specs[0].k == 10
    specs = parse_candidates("ppca:k=2; pf:k=3")
    assert [s.k for s in specs] == [2, 3]


def test_parse_contrast():
    a, ap = parse_contrast("a=1,0.5,aprime=0,0")
    np.testing.assert_array_equal(a, [1.0, 0.5])
    np.testing.assert_array_equal(ap, [0.0, 0.0])
    with pytest.raises(SpecError):
        parse_contrast("1,0 vs 0,0")


def test_simulate_writes_pairs_and_distinct_reps(sim):
    files = sorted(p.name for p in sim.iterdir())
    assert "two-cause-rep000.csv" in files and "two-cause-rep001.truth.json" in files
    assert sum(f.endswith(".csv") for f in files) == 2
    assert sum(f.endswith(".truth.json") for f in files) == 2
    assert (sim / "two-cause-rep000.csv").read_text() != (sim / "two-cause-rep001.csv").read_text()
    assert (sim / "simulate.config").exists()


def test_config_snapshot_reproduces_run(sim, tmp_path):
    again = tmp_path / "again"
    code = main(["simulate", "--config", str(sim / "simulate.config"), "--out", str(again)])
    assert code == 0
    for name in ("two-cause-rep000.csv", "two-cause-rep001.truth.json"):
        assert (again / name).read_bytes() == (sim / name).read_bytes()


def test_fit_outputs(sim, tmp_path):
    code = main(["fit", "--data", str(sim / "two-cause-rep000.csv"), "--model", "ppca:k=1",
                 "--out", str(tmp_path)])
    assert code == 0
    with open(tmp_path / "z.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["z0"] and len(rows) == 301
    assert json.loads((tmp_path / "fit.json").read_text())


def test_check_report_and_fail_exit(sim, tmp_path):
    data = str(sim / "two-cause-rep000.csv")
    args = ["check", "--data", data, "--model", "linear:k=1", "--holdout", "0.5", "--replicates", "20",
            "--z-samples", "20"]
    code = main(args + ["--threshold", "0.99", "--out", str(tmp_path / "strict")])
    assert code == 1
    report = json.loads((tmp_path / "strict" / "check.json").read_text())
    assert 0.0 <= report["score"] <= 1.0
    code = main(args + ["--threshold", "0.001", "--out", str(tmp_path / "lax")])
    assert code == 0
    assert (tmp_path / "lax" / "check_scores.csv").exists()


def test_deconfound_contrast_and_table(sim, tmp_path, capsys):
    code = main(["deconfound", "--data", str(sim / "two-cause-rep000.csv"), "--candidates", "linear",
                 "--holdout", "0.5", "--replicates", "20", "--z-samples", "20", "--threshold", "0.001",
                 "--penalty", "1",
                 "--contrast", "a=1,0,aprime=0,0", "--truth", str(sim / "two-cause-rep000.truth.json"),
                 "--out", str(tmp_path)])
    assert code == 0
    line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("contrast0:")]
    assert len(line) == 1
    est = json.loads((tmp_path / "estimate.json").read_text())
    assert float(line[0].split(":")[1]) == pytest.approx(est["effects"]["contrast0"], rel=1e-5)
    table = json.loads((tmp_path / "table.json").read_text())
    labels = [r["label"] for r in table["rows"]]
    assert labels[:2] == ["No control", "Oracle (confounder)"]


def test_contrast_length_mismatch_is_usage_error(sim, tmp_path):
    code = main(["deconfound", "--data", str(sim / "two-cause-rep000.csv"), "--contrast", "a=1,aprime=0",
                 "--out", str(tmp_path)])
    assert code == 2


def test_usage_errors(sim, tmp_path):
    assert main(["experiment", "--suite", "nope", "--out", str(tmp_path)]) == 2
    assert main(["fit", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.config"
    bad.write_text("not_a_key = 1\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--no-such-flag"])
    assert exc.value.code == 2


def test_numerical_failure_exit(sim, tmp_path, monkeypatch):
    def boom(cfg):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setitem(cli.COMMANDS, "fit", boom)
    assert main(["fit", "--data", str(sim / "two-cause-rep000.csv"), "--out", str(tmp_path)]) == 3


def test_experiment_masking_ratio_csv(tmp_path):
    code = main(["experiment", "--suite", "masking", "--seeds", "1", "--n", "100", "--m", "30", "--k", "2",
                 "--out", str(tmp_path)])
    assert code == 0
    with open(tmp_path / "masking_ratio.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["percent"] for r in rows] == ["0", "25", "50", "75"]
    summary = json.loads((tmp_path / "masking_summary.json").read_text())
    assert -1.0 <= summary["spearman"] <= 1.0
