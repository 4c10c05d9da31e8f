import json
import subprocess
import sys

import pytest

from kfmrc.cli import main

TINY = ["--d1", "16", "--layers", "1", "--heads", "2", "--ff", "32", "--max-seq-len", "64", "--batch", "4",
        "--lr", "1e-3", "--d2", "8", "--kg-epochs", "5"]


@pytest.fixture(scope="module")
def synth_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out-data", str(d / "data.json"), "--out-triples", str(d / "kg.tsv"),
                 "--n", "8", "--kb-size", "30", "--alias-rate", "0.5"]) == 0
    return d


@pytest.fixture(scope="module")
def checkpoint(synth_files):
    out = synth_files / "ckpt"
    rc = main(["train", "--data", str(synth_files / "data.json"), "--triples", str(synth_files / "kg.tsv"),
               "--out", str(out), "--steps", "3", "--log", str(synth_files / "log.jsonl"), *TINY])
    assert rc == 0
    return out


def test_validate_ok(synth_files, capsys):
    assert main(["validate", str(synth_files / "data.json")]) == 0
    assert "8/8 records valid" in capsys.readouterr().out


def test_validate_bad(synth_files, tmp_path, capsys):
    rows = json.loads((synth_files / "data.json").read_text(encoding="utf-8"))
    rows[2]["answer"]["char_start"] += 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(rows, ensure_ascii=False), encoding="utf-8")
    assert main(["validate", str(bad)]) == 1
    assert "synth-00002" in capsys.readouterr().out


def test_unknown_flag_exit_two(capsys):
    assert main(["train", "--no-such-flag"]) == 2
    assert "usage" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "kfmrc", "validate"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr


def test_missing_file_exit_one(tmp_path):
    assert main(["validate", str(tmp_path / "none.json")]) == 1


def test_train_log(checkpoint, synth_files):
    rows = [json.loads(line) for line in (synth_files / "log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in rows] == [1, 2, 3]
    assert set(rows[0]) == {"step", "L_A", "L_S", "lambda", "L", "N", "M"}


def test_eval_report_schema(checkpoint, synth_files, tmp_path):
    rep, csv = tmp_path / "r.json", tmp_path / "r.csv"
    assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(synth_files / "data.json"),
                 "--report", str(rep), "--csv", str(csv)]) == 0
    d = json.loads(rep.read_text(encoding="utf-8"))
    assert set(d) >= {"answer", "support", "errors", "per_example"}
    assert set(d["answer"]) == {"em", "f1"} and set(d["support"]) == {"em", "f1"}
    assert set(d["errors"]) == {"exact", "start_cross", "end_cross", "substring", "other"}
    assert sum(d["errors"].values()) == len(d["per_example"]) == 8
    assert len(csv.read_text(encoding="utf-8").splitlines()) == 9


def test_predict(checkpoint, capsys):
    passage = "感冒与阿司匹林有关。"
    assert main(["predict", "--checkpoint", str(checkpoint), "--question", "感冒用什么药物治疗？",
                 "--passage", passage]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["answer"] in passage


def test_no_lambda_flag(synth_files, tmp_path):
    log = tmp_path / "log.jsonl"
    rc = main(["train", "--data", str(synth_files / "data.json"), "--triples", str(synth_files / "kg.tsv"),
               "--out", str(tmp_path / "c"), "--steps", "2", "--ablate", "no-lambda", "--log", str(log), *TINY])
    assert rc == 0
    assert all(json.loads(line)["lambda"] == 1.0 for line in log.read_text().splitlines())


def test_bad_ablation_exit_two():
    assert main(["train", "--data", "x", "--out", "y", "--ablate", "no-heads"]) == 2


def test_kg_train_and_reuse(synth_files, tmp_path, capsys):
    emb = tmp_path / "emb"
    assert main(["kg-train", "--triples", str(synth_files / "kg.tsv"), "--out", str(emb), "--d2", "8",
                 "--kg-epochs", "3"]) == 0
    assert "entities" in capsys.readouterr().out
    rc = main(["train", "--data", str(synth_files / "data.json"), "--triples", str(synth_files / "kg.tsv"),
               "--embeddings", str(emb), "--out", str(tmp_path / "c"), "--steps", "1", *TINY])
    assert rc == 0


def test_embeddings_vocab_mismatch(synth_files, tmp_path, capsys):
    other = tmp_path / "other.tsv"
    other.write_text("甲\tr\t乙\n", encoding="utf-8")
    emb = tmp_path / "emb"
    assert main(["kg-train", "--triples", str(other), "--out", str(emb), "--d2", "8", "--kg-epochs", "1"]) == 0
    rc = main(["train", "--data", str(synth_files / "data.json"), "--triples", str(synth_files / "kg.tsv"),
               "--embeddings", str(emb), "--out", str(tmp_path / "c"), "--steps", "1", *TINY])
    assert rc == 1
    assert "different entity vocabulary" in capsys.readouterr().err
