import csv
import json

import pytest

from npe.cli import RunConfig, main, resolve_config, build_parser
from npe.model import load_checkpoint
from npe.synthetic import make_block_dataset

TOY = ["--dim", "8", "--batch-size", "64", "--lr", "0.02", "--init-sigma", "0.1", "--seed", "3"]


@pytest.fixture(scope="module")
def toy_csv(tmp_path_factory):
    ds = make_block_dataset(30, 24, num_blocks=2, min_clicks=4, max_clicks=10, seed=8)
    path = tmp_path_factory.mktemp("raw") / "clicks.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for u, i in sorted(ds.pairs()):
            writer.writerow([ds.user_ids[u], ds.item_ids[i]])
    return str(path)


@pytest.fixture(scope="module")
def trained(toy_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    ckpt = str(out / "toy.npe")
    assert main(["train", "--input", toy_csv, "--epochs", "6", "--checkpoint", ckpt, "--deterministic", *TOY]) == 0
    return ckpt


def test_prepare_three_click_toy(tmp_path, capsys):
    raw = tmp_path / "t.csv"
    raw.write_text("a,x\na,y\nb,x\n")
    assert main(["prepare", "--input", str(raw), "--out", str(tmp_path / "s")]) == 0
    out = capsys.readouterr().out
    stats = json.loads((tmp_path / "s" / "stats.json").read_text())
    assert (stats["users"], stats["items"], stats["clicks"]) == (2, 2, 3)
    assert "75.00%" in out


def test_prepare_missing_file(tmp_path, capsys):
    code = main(["prepare", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path)])
    assert code == 2
    assert "nope.csv" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--dim", "abc"])
    assert exc.value.code == 1
    assert main(["train", "--input", "x.csv", "--neg-ratio", "0"]) == 1


def test_one_epoch_report(toy_csv, tmp_path):
    ckpt = tmp_path / "m.npe"
    assert main(["train", "--input", toy_csv, "--epochs", "1", "--checkpoint", str(ckpt), *TOY]) == 0
    report = json.loads((tmp_path / "m.report.json").read_text())
    assert len(report["train"]["train_loss"]) == 1
    assert report["train"]["stopped_epoch"] == 1
    assert len(report["train"]["epoch_seconds"]) == 1
    assert report["config"]["dim"] == 8


def test_deterministic_runs_are_byte_identical(toy_csv, tmp_path, monkeypatch):
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        monkeypatch.chdir(d)
        assert main(["train", "--input", toy_csv, "--epochs", "3", "--checkpoint", "m.npe", "--deterministic", *TOY]) == 0
        outputs.append(((d / "m.npe").read_bytes(), (d / "m.report.json").read_bytes()))
    assert outputs[0] == outputs[1]


def test_eval_report(trained, toy_csv, capsys):
    assert main(["eval", "--input", toy_csv, "--checkpoint", trained, *TOY]) == 0
    report = json.loads(capsys.readouterr().out)
    assert all(0.0 <= v <= 1.0 for v in report["metrics"].values())
    assert {"recall@5", "recall@10", "recall@20", "ndcg@20"} <= set(report["metrics"])
    assert sum(s["users"] for s in report["segments"].values()) == report["num_users"]
    assert set(report["segments"]) == {"Low", "Medium", "High"}


def test_eval_n_flag(trained, toy_csv, tmp_path):
    out = tmp_path / "ev.json"
    assert main(["eval", "--input", toy_csv, "--checkpoint", trained, "--n", "5,10,20", "--report", str(out), *TOY]) == 0
    recall = sorted(k for k in json.loads(out.read_text())["metrics"] if k.startswith("recall"))
    assert recall == ["recall@10", "recall@20", "recall@5"]


def test_eval_shape_mismatch(trained, tmp_path):
    other = tmp_path / "o.csv"
    other.write_text("a,x\na,y\nb,x\n")
    assert main(["eval", "--input", str(other), "--checkpoint", trained]) == 2


def _query(capsys, *argv):
    assert main(["query", *argv]) == 0
    return json.loads(capsys.readouterr().out)


def test_query_similar(trained, capsys):
    rows = _query(capsys, "similar", "--item", "i3", "--checkpoint", trained)
    assert len(rows) == 5
    assert "i3" not in [r["item_raw_id"] for r in rows]


def test_copurchase_differs_from_similar(trained, capsys):
    sim = _query(capsys, "similar", "--item", "i0", "--k", "5", "--checkpoint", trained)
    cop = _query(capsys, "copurchase", "--item", "i0", "--k", "5", "--checkpoint", trained)
    assert sim != cop


def test_recommend_excludes_history(trained, toy_csv, capsys):
    rows = _query(capsys, "recommend", "--user", "u0", "--k", "30", "--input", toy_csv, "--checkpoint", trained, *TOY)
    clicked = {line.split(",")[1] for line in open(toy_csv).read().split() if line.startswith("u0,")}
    assert rows and not clicked & {r["item_raw_id"] for r in rows}
    assert len(rows) == 24 - len(clicked)


def test_recommend_full_history_is_empty(tmp_path, capsys):
    raw = tmp_path / "full.csv"
    raw.write_text("".join(f"u0,i{k}\nu1,i{k % 2}\n" for k in range(3)))
    ckpt = str(tmp_path / "f.npe")
    assert main(["train", "--input", str(raw), "--epochs", "1", "--checkpoint", ckpt, "--dim", "2"]) == 0
    capsys.readouterr()
    assert main(["query", "recommend", "--user", "u0", "--input", str(raw), "--checkpoint", ckpt]) == 0
    captured = capsys.readouterr()
    assert json.loads(captured.out) == []
    assert "clicked every item" in captured.err


def test_query_unknown_id(trained, capsys):
    assert main(["query", "similar", "--item", "nope", "--checkpoint", trained]) == 2
    assert "nope" in capsys.readouterr().err


def test_sweep_single_cell_matches_train_and_eval(trained, toy_csv, tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--input", toy_csv, "--dims", "8", "--epochs", "6", "--out", str(out), *TOY]) == 0
    (row,) = list(csv.DictReader(open(out)))
    assert main(["eval", "--input", toy_csv, "--checkpoint", trained, *TOY]) == 0
    report = json.loads(capsys.readouterr().out)
    assert float(row["recall@20"]) == report["metrics"]["recall@20"]


def test_sweep_records_failed_cells(toy_csv, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--input", toy_csv, "--dims", "0,4", "--epochs", "1", "--out", str(out), *TOY]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["value"] for r in rows] == ["0", "4"]
    assert rows[0]["error"] and not rows[1]["error"]


def test_checkpoint_header(trained):
    params, header = load_checkpoint(trained)
    assert header["D"] == 8 and header["variant"] == "npe"
    assert header["id_map"] == "toy.npe.idmap.json"


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "run.json"
    cfg_file.write_text(json.dumps({"dim": 32, "lr": 0.05}))
    args = build_parser().parse_args(["train", "--config", str(cfg_file), "--dim", "16"])
    cfg = resolve_config(args)
    assert (cfg.dim, cfg.lr, cfg.neg_ratio, cfg.batch_size, cfg.patience) == (16, 0.05, 4, 10_000, 5)


def test_run_config_round_trip():
    cfg = RunConfig(dim=12, split=(0.8, 0.1, 0.1), n=[1, 3], threshold=4.0, context_cap=50)
    back = RunConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.to_json() == cfg.to_json()


def test_run_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        RunConfig.from_dict({"dimension": 3})
