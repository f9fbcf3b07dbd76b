import json

import pytest

from ictmbo.cli import main, read_config_file
from ictmbo.harness import ConfigError

TINY = ["--task", "quadratic-bowl-8d", "--trials", "2", "--T", "2", "--M", "8", "--K", "4",
        "--n-starts", "2", "--hidden", "8", "--epochs", "2", "--meta-batch", "16", "--n-data", "60"]


def test_run_json_to_file_is_reproducible(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["run", *TINY, "--out", str(a)]) == 0
    assert main(["run", *TINY, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    d = json.loads(a.read_text())
    assert d["ict_config"]["K"] == 4 and d["method"] == "ict"


def test_run_markdown_to_stdout(capsys):
    assert main(["run", *TINY, "--method", "mean", "--format", "markdown"]) == 0
    assert capsys.readouterr().out.startswith("| task | method | 100th pct | 50th pct |")


def test_config_file_and_flag_precedence(tmp_path, capsys):
    conf = tmp_path / "c.conf"
    conf.write_text("# tiny\ntask = quadratic-bowl-8d\nmethod = min\ntrials = 1\n--n-starts = 2\n"
                    "T = 1\nhidden = 8\nepochs = 1\nn_data = 60\nformat = csv\n")
    assert main(["run", "--config", str(conf), "--method", "grad"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "task,method,seed,best,median" and rows[1].startswith("quadratic-bowl-8d,grad,0,")


def test_config_file_errors(tmp_path):
    p = tmp_path / "c.conf"
    p.write_text("task quadratic\n")
    with pytest.raises(ConfigError, match="line 1"):
        read_config_file(p)
    p.write_text("\nbogus = 1\n")
    with pytest.raises(ConfigError, match="line 2: unknown key"):
        read_config_file(p)


def test_sweep_and_rank(tmp_path, capsys):
    assert main(["sweep", *TINY, "--param", "K", "--values", "2,4", "--format", "markdown"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("| task | method | K |") and len(out) == 4

    paths = []
    for method in ("ict", "grad"):
        p = tmp_path / f"{method}.json"
        assert main(["run", *TINY, "--method", method, "--out", str(p)]) == 0
        paths.append(str(p))
    assert main(["rank", *paths]) == 0
    ranks = json.loads(capsys.readouterr().out)
    assert set(ranks) == {"ict", "grad"}
    assert sorted(r["mean_rank"] for r in ranks.values()) == [1.0, 2.0]


def test_gen_data_then_run_from_csv(tmp_path, capsys):
    csv_path = tmp_path / "d.csv"
    assert main(["gen-data", "--task", "quadratic-bowl-8d", "--n-data", "60", "--out", str(csv_path)]) == 0
    assert json.loads(capsys.readouterr().out)["rows"] == 60
    assert main(["run", *TINY, "--data", str(csv_path), "--trials", "1"]) == 0


def test_errors_become_json_records(capsys):
    assert main(["run", "--task", "nope"]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["type"] == "ConfigError" and err["error"]["command"] == "run"


def test_missing_task(capsys):
    assert main(["run", "--trials", "1"]) == 1
    assert "--task is required" in capsys.readouterr().err


def test_bad_csv_reports_row(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("x0,y\n1,2\n")
    assert main(["run", *TINY, "--data", str(p)]) == 1
    assert "columns" in json.loads(capsys.readouterr().err)["error"]["message"]


def test_check_passes(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("[PASS]") == 6
