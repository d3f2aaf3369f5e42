import csv
import json

import pytest

from archpredict.cli import apply_split, main
from archpredict.data import OracleConfig, generate_synthetic
from archpredict.embed import load_platforms
from archpredict.data import read_dataset
from archpredict.graph import parse_architecture

SMALL_MODEL = ["--d-model", "16", "--heads", "2", "--layers", "1"]
CHAIN = {
    "name": "chain",
    "nodes": [
        {"id": 0, "op": "Conv", "attrs": [3]},
        {"id": 1, "op": "ReLU"},
        {"id": 2, "op": "FC", "attrs": [512, 10]},
    ],
    "edges": [[0, 1], [1, 2]],
}


@pytest.fixture
def gen(tmp_path):
    out = tmp_path / "gen"
    assert main(["gen-synthetic", "--seed", "7", "--samples", "24", "--families", "3", "--out", str(out)]) == 0
    return out


@pytest.fixture
def chain_file(tmp_path):
    p = tmp_path / "chain.json"
    p.write_text(json.dumps(CHAIN))
    return p


@pytest.fixture
def trained(tmp_path, gen):
    out = tmp_path / "train"
    code = main(["train", "--data", str(gen / "dataset.jsonl"), "--epochs", "1", "--batch-size", "8",
                 "--split", "random:6", "--out", str(out), *SMALL_MODEL])
    assert code == 0
    return out


def test_gen_synthetic_files(gen):
    assert {p.name for p in gen.iterdir()} == {"dataset.jsonl", "platforms.json", "oracle.json", "run_config.json"}
    rc = json.loads((gen / "run_config.json").read_text())
    assert rc["command"] == "gen-synthetic" and rc["seed"] == 7
    assert OracleConfig.from_dict(json.loads((gen / "oracle.json").read_text())).seed == 7


def test_gen_synthetic_reproducible(tmp_path, gen):
    other = tmp_path / "again"
    main(["gen-synthetic", "--seed", "7", "--samples", "24", "--families", "3", "--out", str(other)])
    for name in ("dataset.jsonl", "platforms.json", "oracle.json"):
        assert (gen / name).read_bytes() == (other / name).read_bytes()


def test_gen_synthetic_family_count_and_reparse(gen):
    lines = (gen / "dataset.jsonl").read_text().splitlines()
    assert len({json.loads(l)["family"] for l in lines}) == 3
    for line in lines:
        parse_architecture(line)


def test_gen_synthetic_env_default_out(tmp_path, monkeypatch):
    monkeypatch.setenv("ARCHPREDICT_OUT", str(tmp_path / "root"))
    assert main(["gen-synthetic", "--samples", "5", "--families", "1"]) == 0
    assert (tmp_path / "root" / "gen-synthetic" / "dataset.jsonl").exists()


def test_config_file_defaults_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"samples": 9, "families": "2", "seed": 3}))
    main(["gen-synthetic", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "o")])
    rc = json.loads((tmp_path / "o" / "run_config.json").read_text())
    assert rc["extra"]["samples"] == 9 and rc["seed"] == 4
    assert len(rc["extra"]["families"]) == 2


def test_train_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"model.ckpt", "train_log.csv", "run_config.json", "vocab.txt", "metrics.csv"} <= names
    rc = json.loads((trained / "run_config.json").read_text())
    assert rc["dgsa"]["d_model"] == 16 and rc["split"] == "random:6" and rc["hyper"]["epochs"] == 1
    header = next(csv.reader(open(trained / "train_log.csv")))
    assert header == ["epoch", "train_loss", "eval_mape", "eval_acc10", "eval_tau"]


@pytest.mark.parametrize(
    "flags, key, value",
    [(["--gate-mode", "uniform"], "gate_mode", "uniform"), (["--encoder", "random-init"], "kind", "random")],
)
def test_train_ablation_flags(tmp_path, gen, flags, key, value):
    out = tmp_path / "abl"
    assert main(["train", "--data", str(gen / "dataset.jsonl"), "--epochs", "1", "--out", str(out),
                 *SMALL_MODEL, *flags]) == 0
    rc = json.loads((out / "run_config.json").read_text())
    assert value in (rc["dgsa"].get(key), rc["encoder"].get(key))


def test_finetune(tmp_path, gen, trained):
    out = tmp_path / "ft"
    assert main(["finetune", "--checkpoint", str(trained / "model.ckpt"), "--data", str(gen / "dataset.jsonl"),
                 "--epochs", "1", "--out", str(out)]) == 0
    rc = json.loads((out / "run_config.json").read_text())
    assert rc["hyper"]["lr"] == 1e-4 and (out / "model.ckpt").exists()


def test_eval_is_repeatable(tmp_path, gen, trained, capsys):
    args = ["eval", "--checkpoint", str(trained / "model.ckpt"), "--data", str(gen / "dataset.jsonl")]
    assert main([*args, "--out", str(tmp_path / "e1")]) == 0
    first = capsys.readouterr().out
    assert main([*args, "--out", str(tmp_path / "e2")]) == 0
    assert capsys.readouterr().out == first
    assert "MAPE" in first and "Acc(10%)" in first
    assert (tmp_path / "e1" / "metrics.csv").read_text() == (tmp_path / "e2" / "metrics.csv").read_text()


def test_eval_leave_out_train_side(tmp_path, gen, trained):
    ds = read_dataset(gen / "dataset.jsonl", load_platforms(gen / "platforms.json"))
    fam = ds.families[0]
    out = tmp_path / "e"
    assert main(["eval", "--checkpoint", str(trained / "model.ckpt"), "--data", str(gen / "dataset.jsonl"),
                 "--split", f"leave-out:{fam}", "--side", "train", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    scopes = {r["scope"] for r in rows}
    assert fam not in scopes
    assert int(rows[0]["count"]) == sum(s.family != fam for s in ds)


def test_eval_threads_match(tmp_path, gen, trained):
    args = ["eval", "--checkpoint", str(trained / "model.ckpt"), "--data", str(gen / "dataset.jsonl")]
    main([*args, "--out", str(tmp_path / "a")])
    main([*args, "--threads", "3", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "metrics.csv").read_text() == (tmp_path / "b" / "metrics.csv").read_text()


def test_predict(trained, chain_file, capsys):
    assert main(["predict", "--checkpoint", str(trained / "model.ckpt"), "--arch", str(chain_file),
                 "--platform-id", "syn-gpu-fp32"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["latency_ms"] > 0 and doc["name"] == "chain"


def test_dump_templates(chain_file, capsys):
    assert main(["dump", "templates", "--arch", str(chain_file), "--platform-id", "beta-fp32"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "ParamL Conv 3"
    assert lines[-1] == "Syn GPU FP32 8.1 GenB 70W"


def test_dump_masks_chain(chain_file, capsys):
    assert main(["dump", "masks", "--arch", str(chain_file)]) == 0
    out = capsys.readouterr().out.splitlines()
    i = out.index("grandfather:")
    grid = [list(map(int, row.split())) for row in out[i + 1 : i + 4]]
    assert grid == [[0, 0, 0], [0, 0, 0], [1, 0, 0]]


def test_dump_embeddings_rows(chain_file, capsys):
    assert main(["dump", "embeddings", "--arch", str(chain_file), "--d-model", "8"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert len(rows) == 4 and all(len(r) == 9 for r in rows)


def test_exit_codes(tmp_path, gen, chain_file):
    assert main(["train"]) == 1
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
    assert main(["eval", "--checkpoint", str(tmp_path / "missing"), "--data", str(gen / "dataset.jsonl")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nodes": [{"id": 0, "op": "Conv"}, {"id": 1, "op": "ReLU"}],
                               "edges": [[0, 1], [1, 0]]}))
    assert main(["dump", "masks", "--arch", str(bad)]) == 2
    assert main(["train", "--data", str(gen / "dataset.jsonl"), "--split", "leave-out:Nope",
                 "--out", str(tmp_path / "x")]) == 2
    assert main(["train", "--data", str(gen / "dataset.jsonl"), "--epochs", "2", "--lr", "1e30",
                 "--no-cosine", "--batch-size", "4", "--out", str(tmp_path / "y")]) == 3


def test_apply_split_kinds():
    ds = generate_synthetic(OracleConfig(), 12, ["VGG-like", "ResNet-like"])
    assert apply_split(ds, "none") == (ds, None)
    tr, te = apply_split(ds, "only:VGG-like")
    assert {s.family for s in tr} == {"VGG-like"} and {s.family for s in te} == {"ResNet-like"}
    tr, te = apply_split(ds, "random:3")
    assert len(te) == 3
