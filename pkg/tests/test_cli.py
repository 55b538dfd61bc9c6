import json
import re

import numpy as np
import pytest

from tinyintent.cli import main, parse_overrides, UsageError
from tinyintent.data import write_split
from tinyintent.network import ModelConfig, init_parameters
from tinyintent.store import ModelFile, load_model, save_model
from tinyintent.synthetic import make_corpus
from tinyintent.text import build_char_vocab, build_label_map, build_word_vocab

SMALL = ["word_emb_dim=8", "char_emb_dim=4", "conv_kernel_sizes=2,3", "conv_filter_counts=4,4",
         "lstm_hidden=12", "max_seq_len=12", "max_word_len=10", "epochs=8", "lr=0.005"]

RUN_KEYS = {"type", "run", "seed", "best_epoch", "best_val_accuracy", "test_accuracy", "history"}
SUMMARY_KEYS = {"type", "n_runs", "run_accuracies", "mean_accuracy", "variance", "mean_accuracy_percent",
                "variance_percent"}
BENCH_KEYS = {"n_inferences", "mean_latency_us", "p50_us", "p95_us", "max_us", "peak_alloc_bytes",
              "load_peak_alloc_bytes", "peak_rss_bytes", "model_file_bytes"}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    for name, split in make_corpus(n_intents=4, vocab_size=120, sizes=(300, 60, 60), mean_len=6.0,
                                   seed=5).items():
        write_split(root / name, split)
    return root


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "float.odic"
    code = main(["train", "--data", str(dataset), "--out", str(out), "--runs", "2", "--seed", "3",
                 "--config", *SMALL])
    assert code == 0
    return out


def test_train_writes_model_and_summary(trained):
    assert not load_model(trained).is_quantized
    lines = [json.loads(l) for l in open(f"{trained}.summary.jsonl", encoding="utf-8")]
    runs, summary = lines[:-1], lines[-1]
    assert len(runs) == 2 and summary["n_runs"] == 2
    for i, run in enumerate(runs):
        assert set(run) == RUN_KEYS and run["type"] == "run"
        assert run["seed"] == 3 + i and len(run["history"]) == 8
        assert set(run["history"][0]) == {"train_loss", "val_accuracy"}
    assert set(summary) == SUMMARY_KEYS and summary["type"] == "summary"
    accs = [r["test_accuracy"] for r in runs]
    assert summary["run_accuracies"] == accs
    assert summary["mean_accuracy"] == pytest.approx(np.mean(accs))
    assert summary["variance"] == pytest.approx(np.var(accs))


def test_train_is_deterministic(dataset, trained, tmp_path):
    out = tmp_path / "again.odic"
    assert main(["train", "--data", str(dataset), "--out", str(out), "--runs", "2", "--seed", "3",
                 "--config", *SMALL]) == 0
    assert out.read_bytes() == trained.read_bytes()


def test_eval_quantize_infer_bench(dataset, trained, tmp_path, capsys):
    assert main(["eval", "--model", str(trained), "--data", str(dataset)]) == 0
    m = re.search(r"accuracy: (\d+\.\d\d)% \((\d+)/60\)", capsys.readouterr().out)
    assert m
    float_acc = float(m.group(1))
    assert float_acc > 50.0

    qpath = tmp_path / "q.odic"
    assert main(["quantize", "--in", str(trained), "--out", str(qpath)]) == 0
    assert "KB" in capsys.readouterr().out
    assert load_model(qpath).is_quantized
    assert qpath.stat().st_size < trained.stat().st_size

    outputs = []
    for _ in range(2):
        assert main(["infer", "--model", str(qpath), "--text", "some words here"]) == 0
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]
    probs = [float(x) for x in re.findall(r"\s(\d\.\d{6})$", outputs[0], flags=re.M)]
    assert len(probs) == 4 and sum(probs) == pytest.approx(1.0, abs=1e-5)

    jpath = tmp_path / "bench.jsonl"
    assert main(["bench", "--model", str(qpath), "--data", str(dataset), "--warmup", "5",
                 "--json", str(jpath)]) == 0
    assert "Inference Time" in capsys.readouterr().out
    report = json.loads(jpath.read_text().splitlines()[0])
    assert set(report) == BENCH_KEYS
    assert report["n_inferences"] == 60
    assert report["p50_us"] <= report["p95_us"] <= report["max_us"]


def test_untrained_model_is_at_chance(tmp_path, capsys):
    corpus = make_corpus(n_intents=7, vocab_size=300, sizes=(700, 50, 700), seed=9, label_skew=0.0)
    for name, split in corpus.items():
        write_split(tmp_path / "data" / name, split)
    wv, cv, labels = (build_word_vocab(corpus["train"]), build_char_vocab(corpus["train"]),
                      build_label_map(corpus["train"]))
    cfg = ModelConfig(num_labels=len(labels), word_vocab_size=len(wv), char_vocab_size=len(cv))
    save_model(ModelFile.from_parameters(init_parameters(cfg, 0), labels, wv, cv), tmp_path / "r.odic")
    assert main(["eval", "--model", str(tmp_path / "r.odic"), "--data", str(tmp_path / "data")]) == 0
    acc = float(re.search(r"accuracy: ([\d.]+)%", capsys.readouterr().out).group(1))
    assert abs(acc - 100 / 7) <= 5


def test_exit_codes(dataset, trained, tmp_path, capsys):
    missing = tmp_path / "missing"
    assert main(["train", "--data", str(missing), "--out", str(tmp_path / "x.odic")]) == 2
    assert str(missing) in capsys.readouterr().err
    assert main(["eval", "--model", str(trained), "--data", str(dataset), "--split", "nope"]) == 2
    assert main(["infer", "--model", str(trained), "--text", "   "]) == 2
    assert main(["infer", "--model", str(tmp_path / "none.odic"), "--text", "hi"]) == 2
    (tmp_path / "junk.odic").write_bytes(b"garbage bytes")
    assert main(["infer", "--model", str(tmp_path / "junk.odic"), "--text", "hi"]) == 2
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "y"), "--config", "bogus=1"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_parse_overrides():
    mcfg, tcfg = parse_overrides(["lstm_hidden=64", "conv-kernel-sizes=2,3", "batch_size=64",
                                  "lowercase=false", "lr=0.01"])
    assert mcfg.lstm_hidden == 64 and mcfg.conv_kernel_sizes == (2, 3) and not mcfg.lowercase
    assert tcfg.batch_size == 64 and tcfg.lr == 0.01
    for bad in (["lstm_hidden"], ["lstm_hidden=abc"], ["nope=1"]):
        with pytest.raises(UsageError):
            parse_overrides(bad)


def test_runtime_failure_exit_code(dataset, tmp_path, monkeypatch):
    from tinyintent import cli
    from tinyintent.errors import TrainingDiverged

    def diverge(*args, **kwargs):
        raise TrainingDiverged("loss became nan")

    monkeypatch.setattr(cli, "run_experiment", diverge)
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "m.odic"), "--config", *SMALL]) == 1
