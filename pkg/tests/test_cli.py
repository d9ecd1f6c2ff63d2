import json

from dpstream.cli import main
from dpstream.streams import hyperplane_schema, ingest_csv

CONFIG = """\
method = EP, PT1
preset = gradual
n_chunks = 8
chunk_size = 100
k = 2
hidden_layers = none
epochs = 2
minibatch_size = 70
learning_rate = 5
n_runs = 2
seed = 3
"""


def test_generate_writes_readable_stream(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["generate", "--preset", "abrupt", "--chunks", "4", "--chunk-size", "20", "--seed", "1",
                 "--out", str(out)]) == 0
    chunks = ingest_csv(out, hyperplane_schema(20))
    assert [len(c) for c in chunks] == [20] * 4


def test_run_twice_gives_identical_results(tmp_path):
    conf = tmp_path / "exp.conf"
    conf.write_text(CONFIG)
    assert main(["run", "--config", str(conf), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(conf), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    for name in ("summary.csv", "ledger_audit.json", "config_echo.conf"):
        assert (tmp_path / "a" / name).exists()


def test_report_formats(tmp_path, capsys):
    conf = tmp_path / "exp.conf"
    conf.write_text(CONFIG)
    main(["run", "--config", str(conf), "--out", str(tmp_path / "r")])
    capsys.readouterr()
    assert main(["report", "--in", str(tmp_path / "r"), "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert {r["method"] for r in rows} == {"EP", "PT1"}
    assert main(["report", "--in", str(tmp_path / "r"), "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "epsilon,k,method,time,metric,mean,stderr,n_missing"
    assert len(lines) == len(rows) + 1


def test_unknown_config_key_fails_cleanly(tmp_path, capsys):
    conf = tmp_path / "bad.conf"
    conf.write_text(CONFIG + "colour = blue\n")
    assert main(["run", "--config", str(conf), "--out", str(tmp_path / "x")]) == 2
    assert "unknown key 'colour'" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_missing_config_file(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.conf"), "--out", str(tmp_path / "x")]) == 2
    assert "error" in capsys.readouterr().err
