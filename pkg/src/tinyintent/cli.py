"""Command-line entry point: ``tinyintent {train,eval,infer,quantize,bench}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bench import run_benchmark
from .data import load_dataset, load_embeddings, load_split
from .errors import ConfigError, DataError, InputError, ModelFormatError, TinyIntentError
from .network import ModelConfig, parameter_count
from .store import ModelFile, load_for_inference, load_model, save_model
from .text import tokenize
from .trainer import TrainConfig, prepare, run_experiment

log = logging.getLogger("tinyintent")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def parse_overrides(pairs: list[str]) -> tuple[ModelConfig, TrainConfig]:
    """Apply ``key=value`` overrides to the default model and training configs."""
    mfields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    tfields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    mkw, tkw = {}, {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise UsageError(f"--config expects key=value, got {pair!r}")
        if key in mfields:
            default, target = getattr(ModelConfig(), key), mkw
        elif key in tfields:
            default, target = getattr(TrainConfig(), key), tkw
        else:
            raise UsageError(f"unknown config key {key!r}")
        try:
            if isinstance(default, bool):
                value = raw.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, tuple):
                value = tuple(int(v) for v in raw.split(",") if v.strip())
            else:
                value = type(default)(raw)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {raw!r}") from exc
        target[key] = value
    return ModelConfig(**mkw), TrainConfig(**tkw)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TINYINTENT_THREADS", "1")))
    except ValueError:
        return 1


def cmd_train(args) -> int:
    mcfg, tcfg = parse_overrides(args.config)
    if args.seed is not None:
        tcfg = dataclasses.replace(tcfg, seed=args.seed)
    splits = load_dataset(args.data)
    embeddings = None
    if args.embeddings:
        keep = {tok for text in splits["train"].texts for tok in tokenize(text, mcfg.lowercase)}
        embeddings = load_embeddings(args.embeddings, mcfg.word_emb_dim, keep=keep)
    data = prepare(splits["train"], splits["valid"], splits["test"], mcfg, embeddings)
    log.info("vocab: %d words, %d chars, %d labels; %d parameters", len(data.word_vocab),
             len(data.char_vocab), len(data.label_map), parameter_count(data.config))
    summary, results = run_experiment(data, tcfg, n_runs=args.runs, base_seed=tcfg.seed,
                                      workers=_threads())
    best = max(range(len(results)), key=lambda i: (results[i].best_val_accuracy, -i))
    model = ModelFile.from_parameters(results[best].best_params, data.label_map, data.word_vocab,
                                      data.char_vocab)
    size = save_model(model, args.out)

    summary_path = Path(args.summary or f"{args.out}.summary.jsonl")
    with open(summary_path, "w", encoding="utf-8") as fh:
        for i, r in enumerate(results):
            fh.write(json.dumps({
                "type": "run", "run": i + 1, "seed": r.seed, "best_epoch": r.best_epoch,
                "best_val_accuracy": r.best_val_accuracy, "test_accuracy": r.test_accuracy,
                "history": [{"train_loss": l, "val_accuracy": v} for l, v in r.per_epoch_history],
            }, sort_keys=True) + "\n")
        mean_pct, var_pct = summary.percent()
        fh.write(json.dumps({
            "type": "summary", "n_runs": len(results), "run_accuracies": summary.run_accuracies,
            "mean_accuracy": summary.mean_accuracy, "variance": summary.variance,
            "mean_accuracy_percent": mean_pct, "variance_percent": var_pct,
        }, sort_keys=True) + "\n")
    print(f"{'Model':<12}{'Accuracy':>10}{'Variance':>10}{'Runs':>6}")
    print(f"{'Ours':<12}{mean_pct:>10.2f}{var_pct:>10.4f}{len(results):>6}")
    print(f"wrote {args.out} ({size} bytes, run {best + 1}) and {summary_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    engine = load_for_inference(args.model)
    split = load_split(Path(args.data) / args.split)
    correct = sum(engine.infer(text).label_name == label for text, label in split)
    print(f"accuracy: {100.0 * correct / len(split):.2f}% ({correct}/{len(split)})")
    return EXIT_OK


def cmd_infer(args) -> int:
    if not args.text or not args.text.strip():
        raise UsageError("--text must contain at least one token")
    engine = load_for_inference(args.model)
    pred = engine.infer(args.text)
    print(f"label: {pred.label_name} ({pred.label_id})")
    for i in np.argsort(-pred.probabilities, kind="stable")[:args.top]:
        print(f"  {engine.labels.id_to_token[i]:<32}{pred.probabilities[i]:.6f}")
    return EXIT_OK


def cmd_quantize(args) -> int:
    src = Path(getattr(args, "in"))
    model = load_model(src)
    size = save_model(model.quantized(), args.out)
    before = src.stat().st_size
    print(f"{src}: {before / 1024:.1f} KB -> {args.out}: {size / 1024:.1f} KB "
          f"({100.0 * (size - before) / before:+.1f}%)")
    return EXIT_OK


def cmd_bench(args) -> int:
    split = load_split(Path(args.data) / args.split)
    report = run_benchmark(args.model, split.texts, warmup=args.warmup, repeat=args.repeat,
                           track_memory=not args.no_memory)
    print(report.table())
    line = report.to_json()
    if args.json:
        with open(args.json, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    else:
        print(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tinyintent", description="on-device intent classifier")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train float model(s)")
    t.add_argument("--data", required=True, help="dataset root with train/valid/test")
    t.add_argument("--embeddings", help="GloVe-style text file")
    t.add_argument("--out", "--model", dest="out", required=True, help="output model path")
    t.add_argument("--runs", type=int, default=1)
    t.add_argument("--seed", type=int)
    t.add_argument("--summary", help="JSON-lines summary path (default: <out>.summary.jsonl)")
    t.add_argument("--config", nargs="*", default=[], metavar="KEY=VALUE")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy on a split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="classify one utterance")
    i.add_argument("--model", required=True)
    i.add_argument("--text", required=True)
    i.add_argument("--top", type=int, default=10)
    i.set_defaults(func=cmd_infer)

    q = sub.add_parser("quantize", help="int8 post-training quantization")
    q.add_argument("--in", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_quantize)

    b = sub.add_parser("bench", help="latency / memory benchmark over a split")
    b.add_argument("--model", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--split", default="test")
    b.add_argument("--warmup", type=int, default=50)
    b.add_argument("--repeat", type=int, default=1)
    b.add_argument("--json", help="append the JSON report to this file")
    b.add_argument("--no-memory", action="store_true", help="skip tracemalloc pass")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tinyintent: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"tinyintent: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InputError, ConfigError, ModelFormatError) as exc:
        print(f"tinyintent: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TinyIntentError, OSError) as exc:
        print(f"tinyintent: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
