"""``bsner`` command line.

Exit codes: 0 ok, 2 usage or config error, 3 training diverged,
4 checkpoint/config shape mismatch, 5 empty input.

Run config (JSON)::

    {
      "train": "data/synthetic/separable/train.jsonl",   # required
      "dev": "...", "test": "...",                        # optional
      "format": "jsonl",               # or "conll"; inferred from the suffix if absent
      "decode_mode": "flat",           # or "nested"
      "output_dir": "runs/separable",
      "seed": 0,
      "vocab": {"min_freq": 1, "lowercase": false},
      "model": {"embed_dim": 100, "lstm_hidden": 200, ..., "max_width": null},
      "training": {"epochs": 50, "batch_size": 48, "lr": 0.001, ...},
      "target_mode": {"kind": "boundary_smooth", "epsilon": 0.1, "D": 1}
    }

``model.max_width`` left unset means the longest sentence in any loaded
split. ``BSNER_OUTPUT_DIR`` overrides ``output_dir``; command-line flags
override both.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Optional, Sequence

from .calibration import bin_entities, ece, reliability_csv
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .corpus import CorpusError, Sentence, Vocab, build_vocab, read_corpus
from .decoding import MODES, evaluate, parse_predictions, predictions_jsonl
from .landscape import DIRECTION_MODES, landscape_1d, landscape_csv, sample_direction
from .model import ModelConfig, ShapeMismatch
from .smoothing import RING_MODES, TargetMode, smooth_targets, targets_csv
from .training import TrainConfig, TrainingDiverged, metrics_csv, predict, train

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_SHAPE, EXIT_EMPTY = 0, 2, 3, 4, 5
OUTPUT_ENV = "BSNER_OUTPUT_DIR"
FINAL_CKPT, BEST_CKPT = "final.bsner", "best.bsner"

log = logging.getLogger("bsner")


class UsageError(Exception):
    pass


class EmptyInput(Exception):
    pass


# -- config ------------------------------------------------------------------

RUN_KEYS = {"train", "dev", "test", "format", "decode_mode", "output_dir", "seed",
            "vocab", "model", "training", "target_mode"}
MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"vocab_size", "type_count"}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed", "target_mode"}


def load_run_config(path: str, args: argparse.Namespace) -> dict[str, Any]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(raw) - RUN_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for section, allowed in (("model", MODEL_KEYS), ("training", TRAIN_KEYS), ("vocab", {"min_freq", "lowercase"})):
        extra = set(raw.get(section) or {}) - allowed
        if extra:
            raise UsageError(f"unknown {section} keys: {sorted(extra)}")
    cfg = {
        "format": None, "decode_mode": "flat", "output_dir": "runs/default", "seed": 0,
        "vocab": {"min_freq": 1, "lowercase": False}, "model": {}, "training": {},
        "target_mode": {"kind": "hard"},
    }
    cfg.update({k: v for k, v in raw.items() if v is not None or k in ("dev", "test")})
    base = Path(path).resolve().parent
    for split in ("train", "dev", "test"):
        if cfg.get(split):
            p = Path(cfg[split])
            cfg[split] = str(p if p.is_absolute() else base / p)
    if os.environ.get(OUTPUT_ENV):
        cfg["output_dir"] = os.environ[OUTPUT_ENV]
    overrides = {
        "output_dir": args.output_dir, "seed": args.seed, "decode_mode": args.decode_mode,
    }
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    training = dict(cfg["training"])
    for key in ("epochs", "batch_size", "lr"):
        if getattr(args, key) is not None:
            training[key] = getattr(args, key)
    cfg["training"] = training
    if "train" not in cfg:
        raise UsageError("config needs a 'train' corpus path")
    for split in ("train", "dev", "test"):
        if cfg.get(split) and not Path(cfg[split]).is_file():
            raise UsageError(f"{split} corpus not found: {cfg[split]}")
    if cfg["decode_mode"] not in MODES:
        raise UsageError(f"decode_mode must be one of {MODES}")
    return cfg


def _read(path: str, fmt: Optional[str] = None) -> list[Sentence]:
    try:
        return read_corpus(path, fmt)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except CorpusError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _encode(vocab: Vocab, sents: Sequence[Sentence]) -> list:
    try:
        return [(vocab.encode_tokens(s.tokens), vocab.encode_spans(s.entities)) for s in sents]
    except CorpusError as exc:
        raise UsageError(str(exc)) from None


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# -- commands ----------------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, args)
    splits = {k: _read(cfg[k], cfg["format"]) for k in ("train", "dev", "test") if cfg.get(k)}
    if not splits["train"]:
        raise EmptyInput("training corpus has no sentences")
    try:
        vocab = build_vocab(splits["train"], min_freq=int(cfg["vocab"].get("min_freq", 1)),
                            lowercase=bool(cfg["vocab"].get("lowercase", False)),
                            types={e.type for ss in splits.values() for s in ss for e in s.entities})
        model_fields = dict(cfg["model"])
        if model_fields.get("max_width") is None:
            model_fields["max_width"] = max(s.T for ss in splits.values() for s in ss)
        model_config = ModelConfig(vocab_size=len(vocab), type_count=vocab.type_count, **model_fields)
        train_config = TrainConfig(seed=int(cfg["seed"]), target_mode=TargetMode.from_dict(cfg["target_mode"]),
                                   **cfg["training"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None
    items = {k: _encode(vocab, ss) for k, ss in splits.items()}
    out = Path(cfg["output_dir"])
    resolved = dict(cfg, model={k: v for k, v in model_config.to_dict().items() if k in MODEL_KEYS},
                    training={k: v for k, v in train_config.to_dict().items() if k in TRAIN_KEYS},
                    target_mode=train_config.target_mode.to_dict(), output_dir=str(out))
    _write(out / "config.resolved.json", json.dumps(resolved, indent=2, sort_keys=True) + "\n")

    def report(m):
        log.info("epoch %d train_loss %.4f dev_f1 %s", m.epoch, m.train_loss,
                 "-" if m.dev_f1 is None else f"{m.dev_f1:.4f}")

    result = train(items["train"], model_config, train_config, items.get("dev"), cfg["decode_mode"], report)
    meta = {"target_mode": train_config.target_mode.to_dict(), "seed": train_config.seed}
    save_checkpoint(Checkpoint.from_model(result.model, vocab, meta), out / FINAL_CKPT)
    save_checkpoint(Checkpoint.from_model(result.model, vocab, dict(meta, epoch=result.best_epoch),
                                          state=result.best_state), out / BEST_CKPT)
    _write(out / "metrics.csv", metrics_csv(result.metrics))
    print(f"wrote {out / FINAL_CKPT}, {out / BEST_CKPT}, {out / 'metrics.csv'}")
    if result.metrics and result.metrics[-1].dev_f1 is not None:
        print(f"final dev f1 {result.metrics[-1].dev_f1:.4f}; best epoch {result.best_epoch}")
    return EXIT_OK


def _load(path: str) -> Checkpoint:
    try:
        ckpt = load_checkpoint(path)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    except CheckpointError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if ckpt.vocab is None:
        raise UsageError(f"{path}: checkpoint carries no vocabulary")
    return ckpt


def _model_config_override(path: str, ckpt: Checkpoint) -> ModelConfig:
    """Model config from a run config (``model`` section) or a resolved snapshot."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    section = raw.get("model", raw) if isinstance(raw, dict) else None
    if not isinstance(section, dict):
        raise UsageError("config must be a JSON object")
    merged = dict(ckpt.config.to_dict(), **section)
    try:
        return ModelConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad model config: {exc}") from None


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = _load(args.checkpoint)
    config = _model_config_override(args.config, ckpt) if args.config else None
    model = ckpt.build_model(config)  # ShapeMismatch -> exit 4
    sents = _read(args.corpus, args.format)
    if not sents:
        raise EmptyInput(f"{args.corpus} has no sentences")
    items = _encode(ckpt.vocab, sents)
    preds = predict(model, items, args.mode, args.min_confidence)
    report = evaluate(preds, [{tuple(s) for s in spans} for _, spans in items])
    print(f"precision {report.precision!r}")
    print(f"recall {report.recall!r}")
    print(f"f1 {report.f1!r}")
    print(f"predicted {report.predicted_count} gold {report.gold_count} correct {report.true_positives}")
    if args.dump_predictions:
        _write(Path(args.dump_predictions),
               predictions_jsonl([e for sent in preds for e in sent], ckpt.vocab.types))
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    if args.bins < 1:
        raise UsageError("--bins must be >= 1")
    try:
        preds = parse_predictions(Path(args.predictions).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read {args.predictions}: {exc.strerror}") from None
    except ValueError as exc:
        raise UsageError(f"{args.predictions}: {exc}") from None
    if not preds:
        raise EmptyInput("prediction file is empty; ECE is undefined")
    gold_sents = _read(args.gold, args.format)
    gold = {k: {tuple(e) for e in s.entities} for k, s in enumerate(gold_sents)}
    bad = sorted({e.sentence_id for e in preds} - set(gold))
    if bad:
        raise UsageError(f"prediction sentence ids outside the gold corpus: {bad[:10]}")
    try:
        bins = bin_entities(preds, gold, args.bins)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    value = ece(bins)
    print(f"ECE {value!r}")
    if args.output:
        _write(Path(args.output), reliability_csv(bins))
    return EXIT_OK


def cmd_landscape(args: argparse.Namespace) -> int:
    if args.points < 3 or args.points % 2 == 0:
        raise UsageError(f"--points must be odd and >= 3 so that alpha = 0 is sampled, got {args.points}")
    ckpt = _load(args.checkpoint)
    model = ckpt.build_model()
    split_paths = {k: getattr(args, k) for k in ("train", "dev", "test") if getattr(args, k)}
    if not split_paths:
        raise UsageError("give at least one of --train, --dev, --test")
    if args.loss_mode:
        try:
            mode = TargetMode.from_dict(json.loads(args.loss_mode))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise UsageError(f"bad --loss-mode: {exc}") from None
    else:
        mode = TargetMode.from_dict(ckpt.meta.get("target_mode", {"kind": "hard"}))
    direction = sample_direction(ckpt.tensors, args.seed, args.mode)
    curves = {}
    for split, path in split_paths.items():
        items = _encode(ckpt.vocab, _read(path, args.format))
        if not items:
            raise EmptyInput(f"{path} has no sentences")
        curves[split] = landscape_1d(model, direction, items, mode, args.points, args.max_sentences)
    text = landscape_csv(curves)
    if args.output:
        _write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_sizes(text: str) -> list[int]:
    try:
        sizes = [int(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"--smooth-size must be an integer or a comma list of integers, got {text!r}") from None
    return sizes


def cmd_dump_targets(args: argparse.Namespace) -> int:
    sents = _read(args.corpus, args.format)
    if not sents:
        raise EmptyInput(f"{args.corpus} has no sentences")
    sizes = _parse_sizes(args.smooth_size)
    vocab = build_vocab(sents)
    rows = []
    flat_index = 0
    try:
        for sid, s in enumerate(sents):
            spans = vocab.encode_spans(s.entities)
            if len(sizes) == 1:
                per = None
                D = sizes[0]
            else:
                per = sizes[flat_index:flat_index + len(spans)]
                if len(per) != len(spans):
                    raise UsageError(f"--smooth-size lists {len(sizes)} sizes but the corpus has more entities")
                D = max(per, default=1)
            flat_index += len(spans)
            rows.append((sid, smooth_targets(spans, s.T, vocab.type_count, args.epsilon, D, per, args.ring_mode)))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if len(sizes) > 1 and flat_index != len(sizes):
        raise UsageError(f"--smooth-size lists {len(sizes)} sizes for {flat_index} entities")
    text = targets_csv(rows, vocab.types)
    if args.output:
        _write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_make_corpus(args: argparse.Namespace) -> int:
    from .synthetic import write_corpus

    if not 0.0 <= args.noise <= 1.0:
        raise UsageError("--noise must be in [0, 1]")
    paths = write_corpus(args.out_dir, args.kind, args.seed, args.noise)
    for split, p in paths.items():
        print(f"{split}: {p}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bsner", description="Span-based NER with boundary smoothing.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON run config")
    t.add_argument("config")
    t.add_argument("--output-dir")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--decode-mode", choices=MODES)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a corpus")
    e.add_argument("checkpoint")
    e.add_argument("corpus")
    e.add_argument("--mode", choices=MODES, default="flat")
    e.add_argument("--min-confidence", type=float, default=0.0)
    e.add_argument("--dump-predictions")
    e.add_argument("--config", help="run config whose model section must match the checkpoint")
    e.add_argument("--format", choices=("jsonl", "conll"))
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("calibrate", help="ECE and reliability bins of a prediction dump")
    c.add_argument("predictions")
    c.add_argument("gold")
    c.add_argument("--bins", type=int, default=10)
    c.add_argument("--output", help="reliability CSV path")
    c.add_argument("--format", choices=("jsonl", "conll"))
    c.set_defaults(func=cmd_calibrate)

    ls = sub.add_parser("landscape", help="1-D loss slices along a random normalized direction")
    ls.add_argument("checkpoint")
    ls.add_argument("--train")
    ls.add_argument("--dev")
    ls.add_argument("--test")
    ls.add_argument("--seed", type=int, default=0)
    ls.add_argument("--points", type=int, default=51)
    ls.add_argument("--mode", choices=DIRECTION_MODES, default="per_weight")
    ls.add_argument("--loss-mode", help='target mode JSON, e.g. \'{"kind": "hard"}\'; defaults to the training mode')
    ls.add_argument("--max-sentences", type=int)
    ls.add_argument("--output")
    ls.add_argument("--format", choices=("jsonl", "conll"))
    ls.set_defaults(func=cmd_landscape)

    d = sub.add_parser("dump-targets", help="write the smoothed target matrices as CSV")
    d.add_argument("corpus")
    d.add_argument("--epsilon", type=float, default=0.1)
    d.add_argument("--smooth-size", default="1", help="D, or a comma list with one D per entity in corpus order")
    d.add_argument("--ring-mode", choices=RING_MODES, default="valid")
    d.add_argument("--output")
    d.add_argument("--format", choices=("jsonl", "conll"))
    d.set_defaults(func=cmd_dump_targets)

    m = sub.add_parser("make-corpus", help="generate a seeded synthetic corpus")
    m.add_argument("kind", choices=("separable", "noisy"))
    m.add_argument("out_dir")
    m.add_argument("--seed", type=int, default=13)
    m.add_argument("--noise", type=float, default=0.15)
    m.set_defaults(func=cmd_make_corpus)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ShapeMismatch as exc:
        print(f"error: shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except EmptyInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY


if __name__ == "__main__":
    sys.exit(main())
