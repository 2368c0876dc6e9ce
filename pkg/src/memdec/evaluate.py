"""Greedy and beam decoding, plus case-insensitive corpus BLEU with clipped
n-gram precisions and a brevity penalty."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .autodiff import no_grad
from .data import BOS_ID, EOS_ID


@dataclass
class Hypothesis:
    """A (partial) translation: emitted tokens, accumulated log-probability,
    step count, and whether it ended on the end symbol."""

    tokens: tuple = ()
    logprob: float = 0.0
    steps: int = 0
    terminated: bool = False

    @property
    def mean_logprob(self) -> float:
        return self.logprob / max(self.steps, 1)


def greedy_decode(model, src_ids, max_len: int, rng=None, collect_trace: bool = False):
    """Argmax decoding; stops at the end symbol or max_len. Ties go to the
    smallest token id. Returns token ids, or (token ids, traces) when tracing."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    out, traces = [], []
    with no_grad():
        source, state = model.begin(src_ids, rng=rng)
        y = BOS_ID
        for t in range(max_len):
            state, logprobs, trace = model.step_logprobs(state, y, source, want_trace=collect_trace)
            token = int(np.argmax(logprobs))
            if collect_trace:
                trace["t"] = t + 1
                traces.append(trace)
            if token == EOS_ID:
                break
            out.append(token)
            y = token
    return (out, traces) if collect_trace else out


def beam_decode(model, src_ids, beam_width: int, max_len: int, rng=None) -> Hypothesis:
    """Beam search; completed hypotheses compete by mean log-probability per step.

    Width 1 reproduces greedy decoding exactly. Hypotheses still open at
    max_len join the pool unterminated.
    """
    if beam_width < 1:
        raise ValueError(f"beam_width must be >= 1, got {beam_width}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    with no_grad():
        source, state0 = model.begin(src_ids, rng=rng)
        active = [(Hypothesis(), state0, BOS_ID)]
        finished: list[Hypothesis] = []
        for _ in range(max_len):
            candidates = []
            for hyp, state, y_prev in active:
                new_state, logprobs, _ = model.step_logprobs(state, y_prev, source)
                top = np.argsort(-logprobs, kind="stable")[:beam_width]
                for token in top:
                    token = int(token)
                    candidates.append((hyp.logprob + float(logprobs[token]), hyp, new_state, token))
            candidates.sort(key=lambda c: (-c[0], c[1].tokens + (c[3],)))
            active = []
            for logprob, hyp, state, token in candidates[:beam_width]:
                if token == EOS_ID:
                    finished.append(Hypothesis(tokens=hyp.tokens, logprob=logprob,
                                               steps=hyp.steps + 1, terminated=True))
                else:
                    active.append((Hypothesis(tokens=hyp.tokens + (token,), logprob=logprob,
                                              steps=hyp.steps + 1), state, token))
            if not active:
                break
        finished.extend(hyp for hyp, _, _ in active)
    if not finished:
        return Hypothesis(terminated=False)
    return max(finished, key=lambda h: (h.mean_logprob, [-t for t in h.tokens]))


# -- BLEU ----------------------------------------------------------------------


@dataclass
class BleuReport:
    bleu: float
    precisions: list
    bp: float
    candidate_length: int
    reference_length: int
    numerators: list = field(default_factory=list)
    denominators: list = field(default_factory=list)


def _fold(tokens):
    return [t.lower() for t in tokens]


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_length(cand_len: int, ref_lens) -> int:
    return min(ref_lens, key=lambda r: (abs(r - cand_len), r))


def corpus_bleu(candidates, references, max_n: int = 4, smooth: bool = True) -> BleuReport:
    """Corpus-level BLEU over token lists.

    `references[i]` is either one reference (list of tokens) or a list of
    alternatives. Counting is case-folded. With `smooth`, a zero clipped count
    for n >= 2 is replaced by the add-one ratio 1/(total+1); order-1 precision
    is never smoothed, so fully disjoint corpora score 0.
    """
    if not candidates:
        raise ValueError("empty candidate set")
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} reference entries")
    numerators = [0] * max_n
    denominators = [0] * max_n
    cand_total, ref_total = 0, 0
    for cand, refs in zip(candidates, references):
        if refs and isinstance(refs[0], str):
            refs = [refs]
        cand = _fold(cand)
        refs = [_fold(r) for r in refs]
        cand_total += len(cand)
        ref_total += _closest_length(len(cand), [len(r) for r in refs])
        for n in range(1, max_n + 1):
            counts = _ngrams(cand, n)
            if not counts:
                continue
            ref_counters = [_ngrams(r, n) for r in refs]
            clipped = 0
            for gram, count in counts.items():
                best = max(rc.get(gram, 0) for rc in ref_counters)
                clipped += min(count, best)
            numerators[n - 1] += clipped
            denominators[n - 1] += sum(counts.values())

    precisions = []
    for n in range(1, max_n + 1):
        num, den = numerators[n - 1], denominators[n - 1]
        if den == 0:
            precisions.append(1.0 if smooth else 0.0)
        elif num == 0:
            precisions.append(1.0 / (den + 1.0) if smooth and n > 1 else 0.0)
        else:
            precisions.append(num / den)

    if cand_total == 0 or ref_total == 0:
        return BleuReport(0.0, precisions, 0.0, cand_total, ref_total, numerators, denominators)
    bp = 1.0 if cand_total >= ref_total else math.exp(1.0 - ref_total / cand_total)
    if any(p == 0.0 for p in precisions):
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return BleuReport(score, precisions, bp, cand_total, ref_total, numerators, denominators)


def bleu(candidates, references, max_n: int = 4, smooth: bool = True) -> float:
    """Corpus BLEU in [0, 1]."""
    return corpus_bleu(candidates, references, max_n=max_n, smooth=smooth).bleu


def exact_match_rate(candidates, references) -> float:
    """Fraction of candidates equal to their (single) reference, case-folded."""
    if not candidates:
        raise ValueError("empty candidate set")
    hits = sum(1 for c, r in zip(candidates, references) if _fold(c) == _fold(r))
    return hits / len(candidates)
