import json

import pytest

from ordrec import cli
from ordrec.pipeline import StageFailed, run_pipeline

TINY = {
    "gen-data": {"teams": 3, "stages": 3, "items-per-cell": 3, "users": 150, "max-orders": 10, "seed": 1},
    "prepare": {"seq-len": 12},
    "train-embeddings": {"dim": 4, "epochs": 1, "seed": 1},
    "train": {"hidden1": 6, "hidden2": 6, "batch": 32, "epochs": 2, "lr": 0.01, "seed": 2},
    "evaluate": {"k": "1,5", "seed": 3},
}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    work = tmp_path_factory.mktemp("cli")
    return run_pipeline(work, TINY, figures=True)


def test_help_and_version_exit_zero(capsys):
    assert cli.run(["--help"]) == 0
    assert cli.run(["train", "--help"]) == 0
    assert cli.run(["--version"]) == 0
    assert "ordrec" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [[], ["train", "--bogus"], ["gen-data"], ["evaluate", "--k", "1,x", "--out", "o"],
                                  ["predict", "--model", "m", "--seed-item", "1", "--history", "1,2"]])
def test_usage_errors_exit_one(argv, capsys):
    assert cli.run(argv) == 1
    assert "code=1" in capsys.readouterr().err


def test_pipeline_outputs(tiny_run):
    report = json.loads(tiny_run["report"].read_text())
    for key in ("n_cases", "mean_rank", "hit@1", "hit@5", "ndcg@5", "wilcoxon_p", "random_baseline_rank"):
        assert key in report
    assert tiny_run["model"].with_name("model.ordrec.report.tsv").exists()
    assert tiny_run["model"].with_name("model.ordrec.report.png").exists()
    assert tiny_run["report"].with_suffix(".png").exists()
    assert (tiny_run["prepared"] / "view_sequences").exists()


def test_train_prints_tsv_report(tiny_run, tmp_path, capsys):
    code = cli.run(["train", "--windows", str(tiny_run["prepared"]), "--embeddings", str(tiny_run["embeddings"]),
                    "--hidden1", "4", "--hidden2", "4", "--epochs", "1", "--out", str(tmp_path / "m"),
                    "--no-figures"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "epoch\ttrain_loss\tval_loss\tseconds" and lines[1].startswith("1\t")


def test_config_file_overrides_defaults(tiny_run, tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"model: {tiny_run['model']}\nhistory: '1,2'\nk: 3\n")
    assert cli.run(["predict", "--config", str(cfg), "--k", "2"]) == 0
    captured = capsys.readouterr()
    rows = captured.out.strip().splitlines()[1:]
    assert len(rows) == 2
    assert '"k": 2' in captured.err


def test_config_unknown_key_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"users": 10, "colour": "red"}))
    assert cli.run(["gen-data", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "colour" in capsys.readouterr().err


def test_data_errors_exit_two(tiny_run, tmp_path, capsys):
    assert cli.run(["inspect-model", "--model", str(tmp_path / "missing")]) == 2
    bad = tmp_path / "orders.tsv"
    bad.write_text("u\t1\t0\n")
    assert cli.run(["prepare", "--orders", str(bad), "--out", str(tmp_path / "p")]) == 2
    assert cli.run(["predict", "--model", str(tiny_run["model"]), "--seed-item", "0"]) == 2
    assert "code=2" in capsys.readouterr().err


def test_divergence_exits_three(tiny_run, tmp_path, capsys):
    code = cli.run(["train", "--windows", str(tiny_run["prepared"]), "--embeddings", str(tiny_run["embeddings"]),
                    "--hidden1", "4", "--hidden2", "4", "--epochs", "1", "--lr", "inf",
                    "--out", str(tmp_path / "m"), "--no-figures"])
    assert code == 3
    assert "code=3" in capsys.readouterr().err


def test_predict_rollout_output(tiny_run, capsys):
    assert cli.run(["predict", "--model", str(tiny_run["model"]), "--history", "1,2,3", "--k", "4",
                    "--horizon", "2"]) == 0
    rows = [r.split("\t") for r in capsys.readouterr().out.strip().splitlines()[1:]]
    assert [(r[0], r[1]) for r in rows] == [(s, k) for s in "12" for k in "1234"]


def test_score_batch_and_inspect(tiny_run, tmp_path, capsys):
    req = tmp_path / "req.tsv"
    req.write_text("a\t1,2\nb\t3\nc\t4,5,6\n")
    outs = []
    for workers in ("1", "3"):
        out = tmp_path / f"out{workers}.tsv"
        assert cli.run(["score-batch", "--model", str(tiny_run["model"]), "--requests", str(req),
                        "--workers", workers, "--k", "3", "--out", str(out)]) == 0
        outs.append(out.read_text())
    assert outs[0] == outs[1]
    first = outs[0].splitlines()[0].split("\t")
    assert first[0] == "a" and len(first[1].split(",")) == 3
    assert all(len(p.split(":")[1]) == 8 for p in first[1].split(","))
    assert cli.run(["inspect-model", "--model", str(tiny_run["model"])]) == 0
    assert "dense.W" in capsys.readouterr().out


def test_pipeline_stops_on_failed_stage(tmp_path):
    bad = {**TINY, "train": {**TINY["train"], "lr": "inf"}}
    with pytest.raises(StageFailed, match="train exited with code 3"):
        run_pipeline(tmp_path, bad)
