import json

import pytest

from medroute.cli import main
from medroute.dataset import write_csv
from medroute.ingest import ExtractionRules, SourceSpec

from support import FIXTURE_RULES, tiny_dataset, write_fixture_corpus

RUN_CONFIG = {
    "model": {"max_len": 16, "d_model": 8, "n_heads": 2, "n_layers": 1, "d_ff": 8, "seed": 0},
    "train": {"peak_lr": 0.01, "epochs": 2, "batch_size": 8, "seed": 0},
    "vocab": {"min_freq": 1},
}


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


@pytest.fixture()
def config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(RUN_CONFIG), encoding="utf-8")
    return path


def test_ingest_and_build(tmp_path, capsys):
    urls = write_fixture_corpus(tmp_path)
    (tmp_path / "urls.txt").write_text("\n".join(urls) + "\n", encoding="utf-8")
    spec = SourceSpec("fx", "", ExtractionRules(**FIXTURE_RULES), max_in_flight=3)
    (tmp_path / "src.json").write_text(json.dumps(spec.to_dict()), encoding="utf-8")
    code, out = _run(capsys, "ingest", "--source", tmp_path / "src.json", "--urls", tmp_path / "urls.txt",
                     "--out", tmp_path / "pages")
    assert code == 0 and out["pages"] == 20 and out["failed"] == 0
    code, out = _run(capsys, "dataset", "build", "--pages", tmp_path / "pages", "--rules", tmp_path / "src.json",
                     "--out", tmp_path / "corpus.csv")
    assert code == 0 and out["records"] == 20 and out["skips"] == []
    code, out = _run(capsys, "dataset", "stats", tmp_path / "corpus.csv")
    assert out["total"] == 20 and out["per_class_counts"]["ЛОР"] == 4


def test_ingest_refuses_network(tmp_path, capsys):
    (tmp_path / "urls.txt").write_text("http://example.invalid/1\n", encoding="utf-8")
    spec = SourceSpec("fx", "", ExtractionRules(**FIXTURE_RULES))
    (tmp_path / "src.json").write_text(json.dumps(spec.to_dict()), encoding="utf-8")
    code = main(["ingest", "--source", str(tmp_path / "src.json"), "--urls", str(tmp_path / "urls.txt"),
                 "--out", str(tmp_path / "pages")])
    assert code == 2
    assert "network" in capsys.readouterr().err


def test_augment_with_debug(tmp_path, capsys):
    write_csv(tiny_dataset(4), tmp_path / "in.csv")
    code, out = _run(capsys, "augment", "--in", tmp_path / "in.csv", "--out", tmp_path / "bal.csv",
                     "--target", 6, "--seed", 42, "--debug")
    assert code == 0 and set(out["per_class_counts"].values()) == {6}
    debug = (tmp_path / "bal.debug.csv").read_text(encoding="utf-8").splitlines()
    assert debug[0].endswith(",synthetic") and sum(line.endswith(",1") for line in debug[1:]) == 4
    header = (tmp_path / "bal.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "source_url,question_text,specialization"


def test_synth_imbalance(tmp_path, capsys):
    code, out = _run(capsys, "synth", "--out", tmp_path / "s.csv", "--classes", 4, "--per-class", 40,
                     "--imbalance", 0.5)
    assert code == 0 and sorted(out["per_class_counts"].values()) == [20, 20, 20, 40]


def test_train_eval_predict(tmp_path, capsys, config):
    write_csv(tiny_dataset(10), tmp_path / "data.csv")
    ckpt = tmp_path / "model" / "model.ckpt"
    ckpt.parent.mkdir()
    code, out = _run(capsys, "train", "--data", tmp_path / "data.csv", "--config", config, "--out", ckpt,
                     "--baseline-bow")
    assert code == 0 and len(out["model_version"]) == 12
    assert (ckpt.parent / "history.csv").exists() and (ckpt.parent / "history_bow.csv").exists()

    code, out = _run(capsys, "eval", "--data", tmp_path / "data.csv", "--mode", "kfold", "--k", 3,
                     "--config", config, "--out", tmp_path / "reports")
    assert code == 0 and len(out["fold_macro_f1"]) == 3
    for i in (1, 2, 3):
        assert (tmp_path / "reports" / f"fold_{i}" / "report.csv").exists()
    code, out = _run(capsys, "eval", "--data", tmp_path / "data.csv", "--mode", "holdout", "--config", config,
                     "--out", tmp_path / "holdout", "--baseline-bow")
    assert code == 0 and out["mode"] == "holdout"
    assert (tmp_path / "holdout" / "confusion.csv").exists()

    code, out = _run(capsys, "predict", "--model", ckpt, "--text", "болит сердце", "--k", 2)
    assert code == 0 and len(out["predictions"]) == 2
    code, _ = _run(capsys, "predict", "--model", ckpt, "--text", "   ")
    assert code == 2


def test_gridsearch(tmp_path, capsys):
    cfg = {"vocab_size": 40, "n_classes": 3, "max_len": 8, "d_model": 8, "n_heads": 2, "n_layers": 1, "d_ff": 8}
    (tmp_path / "m.json").write_text(json.dumps(cfg), encoding="utf-8")
    code, out = _run(capsys, "gridsearch-batch", "--config", tmp_path / "m.json", "--candidates", "2,4",
                     "--steps", 1)
    assert code == 0 and out["chosen"] in (2, 4) and len(out["table"]) == 2


def test_missing_file_exit_code(tmp_path, capsys):
    code, _ = _run(capsys, "dataset", "stats", tmp_path / "nope.csv")
    assert code == 2


def test_bad_checkpoint_exit_code(tmp_path, capsys):
    (tmp_path / "bad.ckpt").write_bytes(b"MDRT" + b"\x00" * 40)
    code, _ = _run(capsys, "predict", "--model", tmp_path / "bad.ckpt", "--text", "болит")
    assert code == 2
