"""Command-line entry point: gen-corpus, train, parse, eval, analyze.

JSON reports go to stdout, progress logs to stderr.  Exit codes: 0 success,
2 missing or unreadable files (including bad checkpoint magic), 3 validation
or training failures.  Config files are flat ``key = value`` text whose keys
mirror the config dataclass fields; command-line flags override file values.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .decoder import DecodeConfig, parse_batch
from .encoder import load_pretrained
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DivergenceError,
    FormatError,
    StructureError,
)
from .metrics import corpus_error_breakdown, evaluate_corpus
from .model import ModelConfig, load_model
from .trainer import TrainConfig, train
from .treebank import Corpus, LabelSet, Sentence, gen_synth_corpus, read_corpus, write_corpus

_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_MODEL_KEYS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
_PATH_KEYS = ("train_path", "dev_path", "out_dir",
              "pretrained_uni", "pretrained_bi", "pretrained_tri")


def read_config_file(path) -> dict:
    """Flat key = value config; '#' comments, bare or quoted strings."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path} line {line_no}: expected key = value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key] = _parse_value(value.strip('"').strip("'") if value[:1] in "\"'" else value)
    return out


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def split_config(blob: dict):
    train_kw, model_kw, paths = {}, {}, {}
    for key, value in blob.items():
        if key in _TRAIN_KEYS:
            train_kw[key] = value
        elif key in _MODEL_KEYS:
            model_kw[key] = value
        elif key in _PATH_KEYS:
            paths[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return train_kw, model_kw, paths


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="segparse",
        description="Joint Chinese word segmentation and dependency parsing.")
    sub = top.add_subparsers(dest="verb", required=True)

    gen = sub.add_parser("gen-corpus", help="write a synthetic treebank")
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--out", default=None, help="output file (default stdout)")

    trn = sub.add_parser("train", help="train a model from a config file")
    trn.add_argument("--config", required=True, help="key = value config file")
    trn.add_argument("--train", dest="train_path")
    trn.add_argument("--dev", dest="dev_path")
    trn.add_argument("--out", dest="out_dir")
    trn.add_argument("--mode", choices=("joint-multi", "joint-binary", "seg-only"))
    trn.add_argument("--seed", type=int)
    trn.add_argument("--batch-size", type=int, dest="batch_size")
    trn.add_argument("--max-epochs", type=int, dest="max_epochs")
    trn.add_argument("--early-stop-f1", type=float, dest="early_stop_f1")
    trn.add_argument("--no-ngram", action="store_true", default=None, dest="no_ngram")
    trn.add_argument("--no-pretrained", action="store_true", default=None,
                     dest="no_pretrained")
    trn.add_argument("--quiet", action="store_true", default=False)

    par = sub.add_parser("parse", help="parse raw text with a trained model")
    par.add_argument("--model", required=True, help="run directory with model.json")
    par.add_argument("--checkpoint", default="best.ckpt")
    par.add_argument("--input", required=True, help="one sentence of characters per line")
    par.add_argument("--out", default=None, help="output corpus file (default stdout)")

    ev = sub.add_parser("eval", help="score predictions against gold")
    ev.add_argument("--gold", required=True)
    ev.add_argument("--pred", required=True)

    an = sub.add_parser("analyze", help="error decomposition of predictions")
    an.add_argument("--gold", required=True)
    an.add_argument("--pred", required=True)
    return top


def _read_text(path) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _emit(text: str, out_path):
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_gen_corpus(args) -> int:
    corpus = gen_synth_corpus(args.seed, args.count)
    _emit(write_corpus(corpus), args.out)
    return 0


def cmd_train(args) -> int:
    blob = read_config_file(args.config)
    train_kw, model_kw, paths = split_config(blob)
    for key in ("mode", "no_ngram", "no_pretrained"):
        value = getattr(args, key)
        if value is not None:
            model_kw[key] = value
    for key in ("seed", "batch_size", "max_epochs", "early_stop_f1"):
        value = getattr(args, key)
        if value is not None:
            train_kw[key] = value
    for key in ("train_path", "dev_path", "out_dir"):
        value = getattr(args, key)
        if value is not None:
            paths[key] = value
    for key in ("train_path", "dev_path", "out_dir"):
        if not paths.get(key):
            raise ConfigError(f"{key} must be set in the config file or by flag")
    try:
        cfg = TrainConfig(**train_kw)
        model_cfg = ModelConfig(**model_kw)
    except TypeError as err:
        raise ConfigError(str(err)) from None

    train_corpus = read_corpus(_read_text(paths["train_path"]))
    dev_corpus = read_corpus(_read_text(paths["dev_path"]))
    pretrained = {}
    pretrained_paths = {}
    if not model_cfg.no_pretrained:
        for stream, key in (("uni", "pretrained_uni"), ("bi", "pretrained_bi"),
                            ("tri", "pretrained_tri")):
            if paths.get(key):
                pretrained[stream] = load_pretrained(paths[key], model_cfg.embed_dim)
                pretrained_paths[stream] = paths[key]
    result = train(train_corpus, dev_corpus, cfg, model_cfg, paths["out_dir"],
                   pretrained=pretrained, pretrained_paths=pretrained_paths,
                   quiet=args.quiet)
    summary = {
        "out_dir": result.out_dir,
        "best_epoch": result.best_epoch,
        "seg_f1": result.best_report.seg.f1,
        "udep_f1": result.best_report.udep.f1,
        "ldep_f1": result.best_report.ldep.f1,
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_parse(args) -> int:
    model = load_model(args.model, args.checkpoint)
    sentences = [Sentence.from_chars(line.strip())
                 for line in _read_text(args.input).splitlines() if line.strip()]
    if not sentences:
        raise StructureError(f"{args.input}: no sentences to parse")
    cfg = DecodeConfig(mode=model.config.mode)
    parsed = parse_batch(sentences, model, cfg)
    items = [(s, wt) for s, (wt, _) in zip(sentences, parsed)]
    labels = {lab for _, wt in items for lab in wt.labels}
    _emit(write_corpus(Corpus(items, LabelSet.from_labels(labels))), args.out)
    return 0


def cmd_eval(args) -> int:
    gold = read_corpus(_read_text(args.gold))
    pred = read_corpus(_read_text(args.pred))
    preds = [wt for _, wt in pred.items]
    report = evaluate_corpus(gold, preds)
    breakdown = corpus_error_breakdown(gold, preds)
    blob = {**report.to_json_dict(), **breakdown.to_json_dict()}
    print(json.dumps(blob, sort_keys=True))
    return 0


def cmd_analyze(args) -> int:
    gold = read_corpus(_read_text(args.gold))
    pred = read_corpus(_read_text(args.pred))
    breakdown = corpus_error_breakdown(gold, [wt for _, wt in pred.items])
    blob = {**breakdown.to_json_dict(), "counts": breakdown.counts}
    print(json.dumps(blob, sort_keys=True))
    return 0


_DISPATCH = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "parse": cmd_parse,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _DISPATCH[args.verb](args)
    except (FileNotFoundError, CheckpointError) as err:
        print(f"segparse: {err}", file=sys.stderr)
        return 2
    except (StructureError, FormatError, ConfigError, ContractError,
            DivergenceError) as err:
        print(f"segparse: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
