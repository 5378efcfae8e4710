"""Command-line surface: corpus generation, vocab, training, eval, reports.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import shutil
import sys
from importlib import resources
from pathlib import Path

from . import trainer
from .bpe import Vocabulary, VocabularyError, train_bpe
from .checkpoint import load_tensors
from .config import read_config
from .data import DatasetError, generate_corpus, load_corpus_spec, read_dataset, write_dataset
from .evaluate import dataset_macro_wer, score_dataset
from .model import ConfigError, PEFT_MODES, SIMPLE_MODES, count_parameters
from .objectives import macro_average, report_csv


class UsageError(Exception):
    pass


def _prepare_out(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(
                f"output directory {path} is not empty (pass --force to replace it)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


def _existing(path_str: str, what: str) -> Path:
    p = Path(path_str)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


# -- commands ------------------------------------------------------------------


def _cmd_build_vocab(args) -> int:
    texts = []
    for name in args.corpus:
        p = _existing(name, "corpus file")
        for lineno, line in enumerate(
                p.read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise UsageError(
                    f"{p}:{lineno}: expected utt_id<TAB>lang<TAB>transcript")
            texts.append(parts[2])
    try:
        vocab = train_bpe(texts, args.size)
    except VocabularyError as exc:
        raise UsageError(str(exc)) from None
    vocab.save(args.out)
    print(f"wrote {args.out}: {vocab.size} tokens "
          f"({vocab.size - 256} merges)")
    return 0


def _spec_text(path_str: str) -> str:
    p = Path(path_str)
    if p.exists():
        return p.read_text(encoding="utf-8")
    if p.parent == Path("."):
        name = p.name if p.name.endswith(".cfg") else p.name + ".cfg"
        ref = resources.files("lingua_ctc") / "specs" / name
        if ref.is_file():
            return ref.read_text(encoding="utf-8")
    raise UsageError(f"spec file not found: {path_str}")


def _cmd_gen_data(args) -> int:
    text = _spec_text(args.spec)
    out = Path(args.out)
    _prepare_out(out, args.force)
    spec_copy = out / "corpus.cfg"
    spec_copy.write_text(text, encoding="utf-8")
    try:
        specs, counts = load_corpus_spec(spec_copy)
    except DatasetError as exc:
        raise UsageError(str(exc)) from None
    for offset, split in enumerate(("train", "dev", "test")):
        utts = generate_corpus(specs, counts[split], seed=args.seed + offset)
        write_dataset(utts, out / split)
        print(f"{split}: {len(utts)} utterances "
              f"({', '.join(s.name + '=' + str(c) for s, c in zip(specs, counts[split]))})")
    return 0


def _run_out_dir(args, run_cfg) -> Path:
    out = Path(args.out) if args.out else Path(run_cfg.train.out_dir)
    if str(out) in ("", "."):
        raise UsageError("no output directory (set [train] out_dir or pass --out)")
    _prepare_out(out, args.force)
    return out


def _cmd_train(args) -> int:
    _existing(args.config, "config file")
    run_cfg = read_config(args.config)
    if args.mode:
        run_cfg = dataclasses.replace(
            run_cfg, model=dataclasses.replace(run_cfg.model, mode=args.mode))
    out = _run_out_dir(args, run_cfg)
    state = trainer.train(run_cfg, out)
    print(f"trained {state.step} steps -> {out}")
    return 0


def _cmd_finetune(args) -> int:
    _existing(args.base, "base checkpoint")
    _existing(args.config, "config file")
    run_cfg = read_config(args.config)
    if args.mode:
        run_cfg = dataclasses.replace(
            run_cfg, model=dataclasses.replace(run_cfg.model, mode=args.mode))
    out = _run_out_dir(args, run_cfg)
    state = trainer.peft_finetune(args.base, run_cfg, out)
    tuned = sorted(set(state.params) - state.freeze)
    print(f"fine-tuned {state.step} steps ({len(tuned)} trainable tensors) -> {out}")
    return 0


def _resolve_stem(data: str, split: str) -> Path:
    p = Path(data)
    if Path(str(p) + ".tsv").exists():
        return p
    if (p / f"{split}.tsv").exists():
        return p / split
    raise UsageError(f"no dataset at {data} (expected {data}.tsv or "
                     f"{data}/{split}.tsv)")


def _cmd_eval(args) -> int:
    ckpt = _existing(args.ckpt, "checkpoint")
    state, run_cfg = trainer.load_checkpoint(ckpt)
    mcfg = run_cfg.model
    stem = _resolve_stem(args.data, args.split)
    utts = read_dataset(stem)
    if mcfg.needs_lang_id and args.lang is None:
        raise UsageError(f"mode {mcfg.mode!r} requires a language id (--lang)")
    if not mcfg.needs_lang_id and args.lang is not None:
        raise UsageError(f"mode {mcfg.mode!r} takes no language id; drop --lang")
    if args.lang is not None:
        if not 0 <= args.lang < mcfg.num_langs:
            raise UsageError(f"--lang {args.lang} out of range "
                             f"(model has {mcfg.num_langs} languages)")
        if all(u.lang != args.lang for u in utts):
            raise UsageError(f"dataset {stem} has no utterances for "
                             f"language {args.lang}")
    vocab_path = _existing(args.vocab or run_cfg.data.vocab, "vocabulary file")
    vocab = Vocabulary.load(vocab_path)
    scores = score_dataset(state.params, mcfg, utts, vocab, lang=args.lang)
    csv = report_csv(scores)
    Path(args.report).write_text(csv, encoding="utf-8")
    print(f"macro WER {dataset_macro_wer(scores):.2f}% over "
          f"{len(scores)} language(s) -> {args.report}")
    return 0


def _parse_eval_csv(path: Path) -> dict:
    wers = {}
    for lineno, line in enumerate(
            path.read_text(encoding="utf-8").splitlines()[1:], 2):
        field = line.split(",")
        if not field or field[0] == "avg":
            continue
        try:
            wers[int(field[0])] = float(field[1])
        except (ValueError, IndexError):
            raise UsageError(f"{path}:{lineno}: malformed eval row") from None
    return wers


def _param_counts(run: Path, run_cfg) -> tuple:
    ckpts = sorted(run.glob("ckpt-*"))
    if ckpts:
        weights = load_tensors(ckpts[-1] / "model.lct")
        freeze = set((ckpts[-1] / "freeze.txt")
                     .read_text(encoding="utf-8").splitlines())
        total = sum(a.size for a in weights.values())
        trainable = sum(a.size for n, a in weights.items() if n not in freeze)
        return total, trainable
    mcfg = run_cfg.model
    total = count_parameters(mcfg)
    if mcfg.mode in PEFT_MODES:
        base = dataclasses.replace(mcfg, mode=mcfg.base_mode, base_mode="",
                                   adapter_dim=0)
        return total, total - count_parameters(base)
    return total, total


def _cmd_report(args) -> int:
    rows = []
    langs: set = set()
    for name in args.runs:
        run = _existing(name, "run directory")
        cfg_path = run / "config.cfg"
        if not cfg_path.exists():
            raise UsageError(f"{run} contains no config.cfg")
        run_cfg = read_config(cfg_path)
        total, trainable = _param_counts(run, run_cfg)
        wers: dict = {}
        for csv in sorted(run.glob("eval*.csv")):
            wers.update(_parse_eval_csv(csv))
        langs |= wers.keys()
        rows.append((run.name, run_cfg.model.mode, total, trainable, wers))

    cols = sorted(langs)
    header = ["Model", "Mode", "Params", "Trainable"] + \
        [f"lang{c}" for c in cols] + ["Avg"]
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join("---" for _ in header) + "|"]
    for name, mode, total, trainable, wers in rows:
        cells = [name, mode, str(total), str(trainable)]
        cells += [f"{wers[c]:.2f}" if c in wers else "-" for c in cols]
        cells.append(f"{macro_average(list(wers.values())):.2f}" if wers else "-")
        lines.append("| " + " | ".join(cells) + " |")
    table = "\n".join(lines) + "\n"
    Path(args.out).write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lingua-ctc",
        description="Multilingual CTC speech recognition on synthetic corpora.")
    sub = parser.add_subparsers(dest="command", required=True)
    modes = list(SIMPLE_MODES) + list(PEFT_MODES) + ["baseline"]

    p = sub.add_parser("build-vocab", help="train a byte-level BPE vocabulary")
    p.add_argument("--corpus", nargs="+", required=True,
                   help="dataset .tsv files (utt_id<TAB>lang<TAB>transcript)")
    p.add_argument("--size", type=int, required=True,
                   help="target vocabulary size (>= 256)")
    p.add_argument("--out", required=True, help="output vocabulary file")
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True,
                   help="corpus spec file, or a shipped name (desk3, imbalanced7)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true",
                   help="replace a non-empty output directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model from scratch")
    p.add_argument("--config", required=True, help="run config file")
    p.add_argument("--mode", choices=modes, default=None,
                   help="override the conditioning mode from the config")
    p.add_argument("--out", default=None, help="override [train] out_dir")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("finetune",
                       help="fine-tune prompts/prefixes/adapters on a frozen base")
    p.add_argument("--base", required=True, help="base model checkpoint directory")
    p.add_argument("--config", required=True, help="run config file (peft-* mode)")
    p.add_argument("--mode", choices=list(PEFT_MODES), default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("eval", help="score a dataset with a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True,
                   help="dataset stem, or a directory holding <split>.tsv")
    p.add_argument("--split", default="test",
                   help="split name when --data is a directory (default test)")
    p.add_argument("--lang", type=int, default=None,
                   help="language id: required for language-configurable "
                        "models, forbidden otherwise")
    p.add_argument("--vocab", default=None,
                   help="vocabulary file (default: the one in the run config)")
    p.add_argument("--report", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="summarize runs as a markdown table")
    p.add_argument("--runs", nargs="*", default=[],
                   help="run directories (each with config.cfg and eval*.csv)")
    p.add_argument("--out", required=True, help="output markdown path")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
