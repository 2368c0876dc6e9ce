"""Command-line front end: train, translate, eval, sweep, trace.

Configs are flat `key = value` text files (see config.py for keys); every
command is deterministic under a fixed seed. Exit codes: 0 success, 1 usage or
config error, 2 runtime numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .autodiff import NonFiniteError
from .config import ConfigError, RunConfig, apply_overrides, config_from_dict, config_to_dict, load_config
from .data import (
    ParallelCorpus,
    Vocabulary,
    build_vocab,
    encode_pairs,
    gen_train_dev,
    load_corpus,
    save_corpus,
)
from .evaluate import beam_decode, bleu, corpus_bleu, greedy_decode
from .model import Seq2SeqModel, corpus_nll, parameter_count
from .params import load_checkpoint, save_checkpoint
from .trainer import filter_by_length, init_params, pretrain_transfer, train_epoch

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    """Bad flags, files, or config; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- shared training engine ------------------------------------------------------


@dataclass
class Prepared:
    train: ParallelCorpus
    dev: ParallelCorpus
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    train_ids: list
    dev_ids: list


def prepare_data(config: RunConfig) -> Prepared:
    """Generate or load the corpora, build vocabularies, encode and filter."""
    if config.train_corpus:
        train = load_corpus(config.train_corpus, config.task)
        if config.dev_corpus:
            dev = load_corpus(config.dev_corpus, config.task)
        else:
            split = max(1, len(train.pairs) - config.dev_size)
            dev = ParallelCorpus(pairs=train.pairs[split:], task=config.task)
            train = ParallelCorpus(pairs=train.pairs[:split], task=config.task)
    else:
        rng = np.random.default_rng([config.seed, 101])
        dev_range = None
        if config.dev_min_len > 0 and config.dev_max_len >= config.dev_min_len:
            dev_range = (config.dev_min_len, config.dev_max_len)
        train, dev = gen_train_dev(config.task, config.train_size, config.dev_size,
                                   (config.min_len, config.max_len), config.vocab_size, rng,
                                   dev_length_range=dev_range)
    train.pairs = filter_by_length(train.pairs, config.max_train_length)
    if not train.pairs:
        raise UsageError("no training pairs left after the length filter")
    src_vocab = build_vocab([src for src, _ in train.pairs], config.vocab_cap)
    tgt_vocab = build_vocab([tgt for _, tgt in train.pairs], config.vocab_cap)
    return Prepared(
        train=train, dev=dev, src_vocab=src_vocab, tgt_vocab=tgt_vocab,
        train_ids=encode_pairs(train, src_vocab, tgt_vocab),
        dev_ids=encode_pairs(dev, src_vocab, tgt_vocab),
    )


def dev_scores(model: Seq2SeqModel, prep: Prepared, config: RunConfig, epoch: int):
    """Held-out NLL (teacher forced) and greedy BLEU against the raw references."""
    rng = np.random.default_rng([config.seed, 211, epoch])
    dev_nll = corpus_nll(model, prep.dev_ids, config.batch_size, rng)
    candidates = []
    for src_ids, _ in prep.dev_ids:
        noise_rng = np.random.default_rng([config.seed, 223])
        out = greedy_decode(model, src_ids, config.max_decode_len, rng=noise_rng)
        candidates.append(model.tgt_vocab.decode(out))
    references = [tgt for _, tgt in prep.dev.pairs]
    return dev_nll, bleu(candidates, references), candidates, references


def checkpoint_meta(config: RunConfig, prep: Prepared, epoch: int, entry: dict) -> dict:
    return {
        "variant": config.variant,
        "config": config_to_dict(config),
        "epoch": epoch,
        "src_vocab": prep.src_vocab.tokens(),
        "tgt_vocab": prep.tgt_vocab.tokens(),
        "metrics": entry,
    }


@dataclass
class TrainResult:
    model: Seq2SeqModel
    prep: Prepared
    metrics: list
    out_dir: str | None

    @property
    def best_dev_nll(self) -> float:
        return min(m["dev_nll"] for m in self.metrics)

    @property
    def best_dev_bleu(self) -> float:
        return max(m["dev_bleu"] for m in self.metrics)

    def epochs_to_reach_nll(self, target: float):
        """1-based epoch count until dev NLL first drops to the target, or None."""
        for m in self.metrics:
            if m["dev_nll"] <= target:
                return m["epoch"] + 1
        return None


def run_training(config: RunConfig, out_dir: str | None = None,
                 pretrain_from: str | None = None, resume: str | None = None,
                 log=None) -> TrainResult:
    """The train pipeline shared by cmd_train, cmd_sweep, and the test suite."""
    config.validate()
    start_epoch = 0
    metrics: list[dict] = []
    if resume:
        # Parameters, optimizer state and vocabularies come from the checkpoint;
        # the passed config keeps control of the epoch budget.
        store, meta = load_checkpoint(resume)
        if meta["variant"] != config.variant:
            raise UsageError(f"cannot resume a {meta['variant']} checkpoint as {config.variant}")
        prep = prepare_data(config)
        prep.src_vocab = Vocabulary(meta["src_vocab"])
        prep.tgt_vocab = Vocabulary(meta["tgt_vocab"])
        prep.train_ids = encode_pairs(prep.train, prep.src_vocab, prep.tgt_vocab)
        prep.dev_ids = encode_pairs(prep.dev, prep.src_vocab, prep.tgt_vocab)
        start_epoch = meta["epoch"] + 1
    elif pretrain_from:
        baseline_store, base_meta = load_checkpoint(pretrain_from)
        if base_meta["variant"] != "baseline":
            raise UsageError("--pretrain-from expects a baseline checkpoint")
        prep = prepare_data(config)
        prep.src_vocab = Vocabulary(base_meta["src_vocab"])
        prep.tgt_vocab = Vocabulary(base_meta["tgt_vocab"])
        prep.train_ids = encode_pairs(prep.train, prep.src_vocab, prep.tgt_vocab)
        prep.dev_ids = encode_pairs(prep.dev, prep.src_vocab, prep.tgt_vocab)
        store = pretrain_transfer(baseline_store, config, np.random.default_rng([config.seed, 131]),
                                  len(prep.src_vocab), len(prep.tgt_vocab))
    else:
        prep = prepare_data(config)
        store = init_params(config, np.random.default_rng([config.seed, 131]),
                            config.variant, len(prep.src_vocab), len(prep.tgt_vocab))

    model = Seq2SeqModel(store, config, config.variant, prep.src_vocab, prep.tgt_vocab)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    best_nll = float("inf")
    for epoch in range(start_epoch, config.epochs):
        rng = np.random.default_rng([config.seed, 307, epoch])
        train_nll = train_epoch(model, prep.train_ids, config, rng)
        dev_nll, dev_bleu, _, _ = dev_scores(model, prep, config, epoch)
        entry = {"epoch": epoch, "train_nll": train_nll, "dev_nll": dev_nll, "dev_bleu": dev_bleu}
        metrics.append(entry)
        if log:
            log(f"epoch {epoch}: train_nll={train_nll:.4f} dev_nll={dev_nll:.4f} dev_bleu={dev_bleu:.4f}")
        if out_dir:
            with open(os.path.join(out_dir, "metrics.jsonl"), "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
            meta = checkpoint_meta(config, prep, epoch, entry)
            save_checkpoint(os.path.join(out_dir, "checkpoint_last.json"), store, meta)
            if dev_nll < best_nll:
                save_checkpoint(os.path.join(out_dir, "checkpoint_best.json"), store, meta)
        if dev_nll < best_nll:
            best_nll = dev_nll
    return TrainResult(model=model, prep=prep, metrics=metrics, out_dir=out_dir)


def load_model(path: str) -> tuple[Seq2SeqModel, RunConfig, dict]:
    store, meta = load_checkpoint(path)
    if "src_vocab" not in meta or "tgt_vocab" not in meta:
        raise UsageError(f"checkpoint {path} carries no vocabulary; cannot translate")
    config = config_from_dict(meta["config"], RunConfig)
    src_vocab = Vocabulary(meta["src_vocab"])
    tgt_vocab = Vocabulary(meta["tgt_vocab"])
    model = Seq2SeqModel(store, config, meta["variant"], src_vocab, tgt_vocab)
    return model, config, meta


# -- commands ---------------------------------------------------------------------


def cmd_train(args) -> int:
    config = load_config(args.config)
    apply_overrides(config, args.set or [])
    out_dir = args.out or f"run-{config.task}-{config.variant}"
    try:
        run_training(config, out_dir=out_dir, pretrain_from=args.pretrain_from,
                     resume=args.resume, log=lambda msg: print(msg, flush=True))
    except NonFiniteError as exc:
        print(f"training aborted on numerical failure: {exc}", file=sys.stderr)
        print("last good checkpoint retained", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_translate(args) -> int:
    model, config, _ = load_model(args.checkpoint)
    beam = 1 if args.greedy else args.beam
    max_len = args.max_len or config.max_decode_len
    with open(args.input, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    outputs = []
    for line in lines:
        tokens = line.split()
        if not tokens:
            outputs.append("")
            continue
        src_ids = model.src_vocab.encode(tokens)
        noise_rng = np.random.default_rng([config.seed, 223])
        if beam == 1:
            out_ids = greedy_decode(model, src_ids, max_len, rng=noise_rng)
        else:
            out_ids = list(beam_decode(model, src_ids, beam, max_len, rng=noise_rng).tokens)
        outputs.append(" ".join(model.tgt_vocab.decode(out_ids)))
    with open(args.output, "w", encoding="utf-8") as fh:
        for line in outputs:
            fh.write(line + "\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    with open(args.candidates, encoding="utf-8") as fh:
        cand_lines = fh.read().splitlines()
    with open(args.references, encoding="utf-8") as fh:
        ref_lines = fh.read().splitlines()
    if len(cand_lines) != len(ref_lines):
        raise UsageError(f"line count mismatch: {len(cand_lines)} candidates vs {len(ref_lines)} references")
    report = corpus_bleu([l.split() for l in cand_lines], [l.split() for l in ref_lines],
                         smooth=not args.no_smoothing)
    print(json.dumps({
        "bleu": report.bleu,
        "precisions": report.precisions,
        "bp": report.bp,
        "lengths": {"candidate": report.candidate_length, "reference": report.reference_length},
    }, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    apply_overrides(config, args.set or [])
    if config.variant != "memdec":
        raise UsageError("sweep varies the memory size; config must use variant = memdec")
    try:
        counts = [int(c) for c in args.cells.split(",") if c.strip()]
    except ValueError:
        raise UsageError(f"--cells expects comma-separated integers, got {args.cells!r}") from None
    if not counts or any(c < 1 for c in counts):
        raise UsageError(f"--cells expects positive integers, got {args.cells!r}")
    rows = []
    try:
        for n in counts:
            run_config = dataclasses.replace(config, cells=n)
            result = run_training(run_config, out_dir=None)
            rows.append({
                "cells": n,
                "dev_bleu": result.best_dev_bleu,
                "dev_nll": result.best_dev_nll,
                "epochs": len(result.metrics),
                "param_count": parameter_count(run_config, "memdec",
                                               len(result.prep.src_vocab), len(result.prep.tgt_vocab)),
            })
            print(f"cells={n}: dev_bleu={rows[-1]['dev_bleu']:.4f}", flush=True)
    except NonFiniteError as exc:
        print(f"sweep aborted on numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    table = {"task": config.task, "seed": config.seed, "rows": rows}
    text = json.dumps(table, sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_trace(args) -> int:
    model, config, meta = load_model(args.checkpoint)
    if meta["variant"] != "memdec":
        raise UsageError("no memory to trace: checkpoint is a baseline model")
    tokens = args.sentence.split()
    if not tokens:
        raise UsageError("empty sentence")
    src_ids = model.src_vocab.encode(tokens)
    noise_rng = np.random.default_rng([config.seed, 223])
    _, traces = greedy_decode(model, src_ids, args.max_len or config.max_decode_len,
                              rng=noise_rng, collect_trace=True)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for trace in traces:
            record = {"t": trace["t"], "alpha": trace["alpha"], "w_r": trace["w_r"],
                      "w_w": trace["w_w"], "gate_r": trace["gate_r"], "gate_w": trace["gate_w"],
                      "mu_ers_norm": trace["mu_ers_norm"], "mu_add_norm": trace["mu_add_norm"]}
            out.write(json.dumps(record) + "\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_gen(args) -> int:
    """Generate a task corpus TSV (handy for inspecting the data format)."""
    rng = np.random.default_rng(args.seed)
    from .data import gen_task_corpus

    corpus = gen_task_corpus(args.task, args.size, (args.min_len, args.max_len),
                             args.vocab_size, rng)
    save_corpus(args.out, corpus)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="memdec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (checkpoints, metrics.jsonl)")
    p.add_argument("--pretrain-from", default=None, help="baseline checkpoint to transfer from")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate a token file with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--greedy", action="store_true", help="force greedy decoding")
    p.add_argument("--max-len", type=int, default=None)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("eval", help="corpus BLEU of a candidate file against references")
    p.add_argument("--candidates", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--no-smoothing", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train one model per memory size, emit a table")
    p.add_argument("--config", required=True)
    p.add_argument("--cells", required=True, help="comma-separated cell counts, e.g. 4,6,8,10,12")
    p.add_argument("--out", default=None, help="table JSON path (stdout when omitted)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("trace", help="per-step memory access records for one sentence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sentence", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("gen", help="write a synthetic corpus TSV")
    p.add_argument("--task", default="copy")
    p.add_argument("--size", type=int, default=1000)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--vocab-size", type=int, default=20)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
