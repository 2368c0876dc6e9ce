"""Synthetic parallel corpora, vocabularies, and length-bucketed batching.

Tasks are chosen to stress the decoder memory: copy echoes the source, reverse
requires holding the whole source, digits2words adds a token mapping. Corpus
files are one pair per line, source TAB target, tokens space-separated, UTF-8.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

TASKS = ("copy", "reverse", "digits2words")

DIGIT_WORDS = {
    "0": "zero", "1": "one", "2": "two", "3": "three", "4": "four",
    "5": "five", "6": "six", "7": "seven", "8": "eight", "9": "nine",
}


@dataclass
class ParallelCorpus:
    pairs: list
    task: str

    def __len__(self):
        return len(self.pairs)


class Vocabulary:
    """Bijective token/id maps over the non-reserved tokens; ids 0..3 reserved."""

    def __init__(self, tokens):
        self._tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    def id_of(self, token) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens) -> list:
        return [self._ids.get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> list:
        return [self._tokens[i] for i in ids]

    def tokens(self) -> list:
        return self._tokens[len(RESERVED):]


def build_vocab(corpus_or_sentences, cap: int, side: str = "both") -> Vocabulary:
    """Top-`cap` tokens by frequency, ties broken toward the lexicographically smaller."""
    counts = Counter()
    if isinstance(corpus_or_sentences, ParallelCorpus):
        if not corpus_or_sentences.pairs:
            raise ValueError("cannot build a vocabulary from an empty corpus")
        for src, tgt in corpus_or_sentences.pairs:
            if side in ("both", "source"):
                counts.update(src)
            if side in ("both", "target"):
                counts.update(tgt)
    else:
        for sent in corpus_or_sentences:
            counts.update(sent)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([tok for tok, _ in ranked[:cap]])


def token_alphabet(vocab_size: int) -> list:
    return [f"w{i:02d}" for i in range(vocab_size)]


def gen_task_corpus(task: str, size: int, length_range, vocab_size: int, rng) -> ParallelCorpus:
    """Generate `size` pairs with source lengths uniform over length_range."""
    lo, hi = length_range
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if lo < 1 or hi < lo or size < 0:
        raise ValueError(f"impossible generation range: size={size}, lengths=[{lo}, {hi}]")
    if task == "digits2words":
        alphabet = list(DIGIT_WORDS)[: min(vocab_size, 10)]
    else:
        alphabet = token_alphabet(vocab_size)
    pairs = []
    for _ in range(size):
        length = int(rng.integers(lo, hi + 1))
        src = [alphabet[int(i)] for i in rng.integers(0, len(alphabet), size=length)]
        if task == "copy":
            tgt = list(src)
        elif task == "reverse":
            tgt = src[::-1]
        else:
            tgt = [DIGIT_WORDS[d] for d in src]
        pairs.append((src, tgt))
    return ParallelCorpus(pairs=pairs, task=task)


def gen_train_dev(task: str, train_size: int, dev_size: int, length_range, vocab_size: int, rng,
                  dev_length_range=None):
    """Train/dev corpora whose dev sources never appear in training.

    The dev set may use its own length range (e.g. train on mixed lengths,
    evaluate on long ones only).
    """
    train = gen_task_corpus(task, train_size, length_range, vocab_size, rng)
    seen = {tuple(src) for src, _ in train.pairs}
    dev_pairs = []
    attempts = 0
    while len(dev_pairs) < dev_size:
        extra = gen_task_corpus(task, dev_size, dev_length_range or length_range, vocab_size, rng)
        for src, tgt in extra.pairs:
            if tuple(src) not in seen and len(dev_pairs) < dev_size:
                seen.add(tuple(src))
                dev_pairs.append((src, tgt))
        attempts += 1
        if attempts > 100:
            raise ValueError("could not generate a disjoint dev set; widen the task space")
    return train, ParallelCorpus(pairs=dev_pairs, task=task)


@dataclass
class Batch:
    """Padded id arrays plus masks; loss must ignore PAD positions."""

    src: np.ndarray        # (B, Ts) int
    src_mask: np.ndarray   # (B, Ts) float, 1 at real tokens
    tgt_in: np.ndarray     # (B, Tt) int, BOS followed by the gold prefix
    tgt_out: np.ndarray    # (B, Tt) int, gold tokens followed by EOS
    tgt_mask: np.ndarray   # (B, Tt) float

    @property
    def rows(self) -> int:
        return self.src.shape[0]

    @property
    def token_count(self) -> float:
        return float(self.tgt_mask.sum())


def encode_pairs(corpus: ParallelCorpus, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> list:
    return [(src_vocab.encode(src), tgt_vocab.encode(tgt)) for src, tgt in corpus.pairs]


def make_batch(id_pairs) -> Batch:
    rows = len(id_pairs)
    src_len = max(len(src) for src, _ in id_pairs)
    tgt_len = max(len(tgt) for _, tgt in id_pairs) + 1  # +1 for EOS
    src = np.full((rows, src_len), PAD_ID, dtype=np.int64)
    src_mask = np.zeros((rows, src_len))
    tgt_in = np.full((rows, tgt_len), PAD_ID, dtype=np.int64)
    tgt_out = np.full((rows, tgt_len), PAD_ID, dtype=np.int64)
    tgt_mask = np.zeros((rows, tgt_len))
    for i, (s, t) in enumerate(id_pairs):
        src[i, : len(s)] = s
        src_mask[i, : len(s)] = 1.0
        tgt_in[i, 0] = BOS_ID
        tgt_in[i, 1 : len(t) + 1] = t
        tgt_out[i, : len(t)] = t
        tgt_out[i, len(t)] = EOS_ID
        tgt_mask[i, : len(t) + 1] = 1.0
    return Batch(src=src, src_mask=src_mask, tgt_in=tgt_in, tgt_out=tgt_out, tgt_mask=tgt_mask)


def batch_by_length(id_pairs, batch_size: int, rng) -> list:
    """Bucket pairs of similar source length, pad, and shuffle batch order."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if not id_pairs:
        return []
    order = rng.permutation(len(id_pairs))
    by_length = sorted(order, key=lambda i: len(id_pairs[i][0]))
    batches = []
    for start in range(0, len(by_length), batch_size):
        chunk = [id_pairs[i] for i in by_length[start : start + batch_size]]
        batches.append(make_batch(chunk))
    rng.shuffle(batches)
    return batches


def save_corpus(path, corpus: ParallelCorpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for src, tgt in corpus.pairs:
            fh.write(" ".join(src) + "\t" + " ".join(tgt) + "\n")


def load_corpus(path, task: str = "copy") -> ParallelCorpus:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise ValueError(f"{path}:{lineno}: expected 'source<TAB>target'")
            pairs.append((parts[0].split(), parts[1].split()))
    return ParallelCorpus(pairs=pairs, task=task)
