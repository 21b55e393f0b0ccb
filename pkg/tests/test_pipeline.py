import json

import numpy as np
import pytest

from topicsurprise.pipeline import main


def read_table(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    header = lines[1].split("\t")
    return header, [line.split("\t") for line in lines[2:]]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(d), "--users", "5", "--num-topics", "6", "--history-length", "40",
                 "--regimes", "2", "--seed", "4"]) == 0
    return d


def inputs(data, annotations=True):
    args = ["--topics", str(data / "topics.tsv"), "--histories", str(data / "histories.tsv")]
    if annotations:
        args += ["--annotations", str(data / "labels.tsv")]
    return args


def test_synth_outputs(data):
    for name in ("topics.tsv", "histories.tsv", "labels.tsv", "resolved_config.json"):
        assert (data / name).exists()
    cfg = json.loads((data / "resolved_config.json").read_text())
    assert cfg["command"] == "synth" and cfg["synth"]["users"] == 5


def test_run_writes_series_and_index(data, tmp_path):
    assert main(["run", *inputs(data, False), "--model", "vbBLR:tau_v=0.05", "--out", str(tmp_path),
                 "--save-index"]) == 0
    header, rows = read_table(tmp_path / "series.tsv")
    assert header == ["user_id", "step", "item_id", "stars", "rating", "predicted", "surprise", "serendipity"]
    assert len(rows) == 5 * 40
    for r in rows:
        assert float(r[7]) == pytest.approx(float(r[4]) * float(r[6]))
    assert (tmp_path / "index.bin").stat().st_size > 0


def test_reruns_are_byte_identical(data, tmp_path):
    args = ["eval-serendipity", *inputs(data), "--model", "AROW:r1=1,r2=2", "--sim-model", "NLMS",
            "--tau-s", "0.05", "--tau-d", "2", "--out", str(tmp_path)]
    assert main(args) == 0
    first = (tmp_path / "serendipity.tsv").read_bytes()
    assert main(args) == 0
    assert (tmp_path / "serendipity.tsv").read_bytes() == first


def test_eval_tables_layout(data, tmp_path):
    assert main(["eval-surprise", *inputs(data), "--model", "BLR", "--out", str(tmp_path)]) == 0
    header, rows = read_table(tmp_path / "surprise_detection.tsv")
    users = [f"u{i:04d}" for i in range(5)]
    assert header == ["model"] + [f"{u}:{m}" for u in users for m in ("P", "R", "F1")] + ["avg_F1"]
    assert [r[0] for r in rows] == ["BLR(beta=1,prior_variance=1)", "Random (p = 0.5)", "Random (p = P/T)"]
    for r in rows:
        vals = [float(x) for x in r[1:]]
        assert all(0 <= v <= 100 for v in vals)
    # p = P/T row: precision == recall == F1 per user
    ratio = [float(x) for x in rows[2][1:-1]]
    for u in range(5):
        assert ratio[3 * u] == ratio[3 * u + 1] == ratio[3 * u + 2]


def test_recommend_all_null_when_nothing_qualifies(data, tmp_path):
    assert main(["recommend", *inputs(data, False), "--tau-d", "1e-9", "--out", str(tmp_path)]) == 0
    header, rows = read_table(tmp_path / "recommendations.tsv")
    assert header[:3] == ["user_id", "step", "neighbor_user"]
    assert rows and all(r[2:] == ["null"] * 5 for r in rows)


def test_recommend_requests_file(data, tmp_path):
    req = tmp_path / "req.csv"
    req.write_text("user_id,step\nu0001,20\nu0003,39\n")
    assert main(["recommend", *inputs(data, False), "--requests", str(req), "--tau-d", "100",
                 "--out", str(tmp_path)]) == 0
    _, rows = read_table(tmp_path / "recommendations.tsv")
    assert [(r[0], r[1]) for r in rows] == [("u0001", "20"), ("u0003", "39")]
    assert all(r[2] not in ("null", r[0]) for r in rows)


def test_config_file_and_flag_precedence(data, tmp_path):
    cfg = tmp_path / "job.json"
    cfg.write_text(json.dumps({"topics": str(data / "topics.tsv"), "histories": str(data / "histories.tsv"),
                               "model": {"kind": "NLMS", "eta": 0.2}, "tau_s": 0.3, "out": str(tmp_path)}))
    assert main(["run", "--config", str(cfg), "--tau-s", "0.4"]) == 0
    resolved = json.loads((tmp_path / "resolved_config.json").read_text())
    assert resolved["tau_s"] == 0.4
    assert resolved["model"]["kind"] == "NLMS" and resolved["model"]["eta"] == 0.2


def test_tune_with_grid_file(data, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps([
        {"model": "BLR", "tau_s": 0.05},
        {"model": "BLR", "tau_s": 0.2},
        {"model": "AROW:r1=1,r2=2", "tau_s": 0.1},
    ]))
    assert main(["tune", *inputs(data), "--mode", "surprise", "--grid", str(grid), "--out", str(tmp_path)]) == 0
    header, rows = read_table(tmp_path / "tuning_surprise.tsv")
    assert header[0] == "held_out_user" and len(rows) == 6 and rows[-1][0] == "average"
    avg = float(rows[-1][4])
    assert avg == pytest.approx(np.mean([float(r[4]) for r in rows[:-1]]), abs=0.06)
    header, rows = read_table(tmp_path / "tuning_surprise_table.tsv")
    assert header[-1] == "avg_F1" and len(rows) == 1


@pytest.mark.parametrize("argv,kind", [
    (["run", "--topics", "nope.tsv", "--histories", "nope.tsv"], "JobError"),
    (["run"], "JobError"),
    (["run", "--model", "LMS"], "JobError"),
    (["eval-surprise", "--tau-s", "-1"], "JobError"),
])
def test_errors_are_single_line(argv, kind, capsys, tmp_path):
    assert main([*argv, "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert err[0].split("\t")[:2] == ["error", kind]


def test_unknown_item_reports_id(data, tmp_path, capsys):
    hist = tmp_path / "h.tsv"
    hist.write_text((data / "histories.tsv").read_text() + "u0000\tghost_item\t3\t999\n")
    assert main(["run", "--topics", str(data / "topics.tsv"), "--histories", str(hist),
                 "--out", str(tmp_path)]) == 2
    assert "ghost_item" in capsys.readouterr().err
