"""Full sequence-to-sequence model: parameter layout, step function, batch loss.

Two variants share the encoder, attention, decoder GRU and predictor:

* "memdec": the decoder carries the buffer memory; the recurrent update runs
  on the buffer read, and every step writes the buffer back.
* "baseline": attention-only; the previous vector-state stands in wherever the
  buffer read would be used, and the feedback transform folds in the previous
  word before querying the source.

Parameter names under "mem." are the memory-specific set that pre-training
transfer leaves freshly initialized.
"""

from __future__ import annotations

import numpy as np

from .attention import AttentionParams, attend, feedback_state, project_annotations
from .autodiff import Tensor, concat, gather_rows, no_grad, take_per_row
from .data import BOS_ID
from .encoder import GruParams, SourceMemory, encode_batch, gru_step
from .memory import (
    BufferAddressParams,
    DecoderState,
    MemDecParams,
    WriteParams,
    decode_step,
    init_buffer,
)
from .predictor import PredictorParams, score_logits

VARIANTS = ("memdec", "baseline")
MEMORY_PREFIX = "mem."


def _gru_specs(prefix, input_dim, state_dim):
    specs = []
    for gate in ("z", "r", "h"):
        specs.append((f"{prefix}.w{gate}", (input_dim, state_dim), "gaussian"))
        specs.append((f"{prefix}.u{gate}", (state_dim, state_dim), "orthogonal"))
        specs.append((f"{prefix}.b{gate}", (state_dim,), "zero"))
    return specs


def parameter_specs(config, variant, src_vocab_size, tgt_vocab_size):
    """Ordered (name, shape, init_tag) list for one model instance."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    embed, d, m = config.embed_dim, config.hidden_dim, config.cell_width
    two_d, align = 2 * d, config.align
    specs = [("src_embed", (src_vocab_size, embed), "gaussian")]
    specs += _gru_specs("enc_fwd", embed, d)
    specs += _gru_specs("enc_bwd", embed, d)
    specs += [
        ("att.w_a", (m, align), "gaussian"),
        ("att.u_a", (two_d, align), "gaussian"),
        ("att.v_a", (align,), "gaussian"),
    ]
    if variant == "baseline":
        if config.feedback == "tanh":
            specs += [("att.fb_s", (m, m), "gaussian"), ("att.fb_y", (embed, m), "gaussian")]
        else:
            specs += _gru_specs("att.fb_gru", embed, m)
        specs.append(("dec_init.w", (two_d, m), "gaussian"))
    specs += _gru_specs("dec_gru", embed + two_d, m)
    specs += [
        ("tgt_embed", (tgt_vocab_size, embed), "gaussian"),
        ("pred.w_hidden", (m + two_d + embed, m), "gaussian"),
        ("pred.b_hidden", (m,), "zero"),
        ("pred.w_out", (m, tgt_vocab_size), "gaussian"),
    ]
    if variant == "memdec":
        specs += [
            ("mem.read.w_a", (m, m), "gaussian"),
            ("mem.read.u_a", (m, m), "gaussian"),
            ("mem.read.v", (m,), "gaussian"),
            ("mem.read.w_g", (m,), "gaussian"),
        ]
        if not config.share_weights:
            specs += [
                ("mem.write.w_a", (m, m), "gaussian"),
                ("mem.write.u_a", (m, m), "gaussian"),
                ("mem.write.v", (m,), "gaussian"),
                ("mem.write.w_g", (m,), "gaussian"),
            ]
        specs += [
            ("mem.w_ers", (m, m), "gaussian"),
            ("mem.w_add", (m, m), "gaussian"),
            ("mem.w_ini", (two_d, m), "gaussian"),
            ("mem.w_r", (m, m), "gaussian"),
            ("mem.w_y", (embed, m), "gaussian"),
        ]
    return specs


def parameter_count(config, variant, src_vocab_size, tgt_vocab_size) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in
               parameter_specs(config, variant, src_vocab_size, tgt_vocab_size))


def _gru_view(store, prefix) -> GruParams:
    return GruParams(
        wz=store[f"{prefix}.wz"], uz=store[f"{prefix}.uz"], bz=store[f"{prefix}.bz"],
        wr=store[f"{prefix}.wr"], ur=store[f"{prefix}.ur"], br=store[f"{prefix}.br"],
        wh=store[f"{prefix}.wh"], uh=store[f"{prefix}.uh"], bh=store[f"{prefix}.bh"],
    )


def _addr_view(store, prefix) -> BufferAddressParams:
    return BufferAddressParams(
        w_a=store[f"{prefix}.w_a"], u_a=store[f"{prefix}.u_a"],
        v=store[f"{prefix}.v"], w_g=store[f"{prefix}.w_g"],
    )


class Seq2SeqModel:
    """Binds a ParameterStore to the step/loss surface of one variant."""

    def __init__(self, store, config, variant, src_vocab, tgt_vocab):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.store = store
        self.config = config
        self.variant = variant
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.enc_fwd = _gru_view(store, "enc_fwd")
        self.enc_bwd = _gru_view(store, "enc_bwd")
        self.dec_gru = _gru_view(store, "dec_gru")
        self.attention = AttentionParams(
            w_a=store["att.w_a"], u_a=store["att.u_a"], v_a=store["att.v_a"],
            fb_s=store["att.fb_s"] if "att.fb_s" in store else None,
            fb_y=store["att.fb_y"] if "att.fb_y" in store else None,
            fb_gru=_gru_view(store, "att.fb_gru") if "att.fb_gru.wz" in store else None,
        )
        self.predictor = PredictorParams(
            w_hidden=store["pred.w_hidden"], b_hidden=store["pred.b_hidden"],
            w_out=store["pred.w_out"],
        )
        if variant == "memdec":
            self.mem = MemDecParams(
                read_addr=_addr_view(store, "mem.read"),
                write_addr=None if config.share_weights else _addr_view(store, "mem.write"),
                write=WriteParams(w_ers=store["mem.w_ers"], w_add=store["mem.w_add"]),
                w_ini=store["mem.w_ini"], w_r=store["mem.w_r"], w_y=store["mem.w_y"],
                gru=self.dec_gru, attention=self.attention,
                share_weights=config.share_weights,
            )
        else:
            self.mem = None

    # -- forward pieces ------------------------------------------------------

    def encode_ids(self, src_ids, src_mask) -> SourceMemory:
        source = encode_batch(src_ids, src_mask, self.store["src_embed"],
                              self.enc_fwd, self.enc_bwd)
        source.proj = project_annotations(source, self.attention)
        return source

    def _masked_mean(self, source: SourceMemory) -> Tensor:
        batch, length, _ = source.annotations.shape
        mask3 = Tensor(source.mask.reshape(batch, length, 1))
        summed = (source.annotations * mask3).sum(axis=1)
        return summed * Tensor(1.0 / source.mask.sum(axis=1, keepdims=True))

    def initial_state(self, source: SourceMemory, rng=None, init_noise=None) -> DecoderState:
        """Source-conditioned start: buffer cells and vector-state for memdec,
        a plain transformed summary for the baseline."""
        if self.variant == "memdec":
            buffer, m_bar = init_buffer(
                source, self.mem.w_ini, rng, self.config.cells,
                noise_std=self.config.noise_std, noise=init_noise,
                literal_init=self.config.literal_init,
            )
            return DecoderState(s=m_bar, buffer=buffer, context=None)
        s0 = (self._masked_mean(source) @ self.store["dec_init.w"]).tanh()
        return DecoderState(s=s0, buffer=None, context=None)

    def prev_embedding(self, y_prev_ids) -> Tensor:
        """Embed the previous tokens; the start symbol embeds to zero by convention."""
        ids = np.asarray(y_prev_ids)
        emb = gather_rows(self.store["tgt_embed"], ids)
        keep = (ids != BOS_ID).astype(float).reshape(-1, 1)
        if keep.all():
            return emb
        return emb * Tensor(keep)

    def step(self, state: DecoderState, y_prev_ids, source: SourceMemory,
             train: bool = False, rng=None, want_trace: bool = False):
        """One teacher-forced or free-running step; returns (state, logits, trace)."""
        e_prev = self.prev_embedding(y_prev_ids)
        if self.variant == "memdec":
            state, (s, c, e), trace = decode_step(
                state, e_prev, source, self.mem,
                source_proj=source.proj, want_trace=want_trace,
            )
        else:
            s_tilde = feedback_state(state.s, e_prev, self.attention, mode=self.config.feedback)
            c, _ = attend(s_tilde, source, self.attention, source_proj=source.proj)
            s = gru_step(state.s, concat([e_prev, c], axis=1), self.dec_gru)
            state = DecoderState(s=s, buffer=None, context=c)
            e, trace = e_prev, None
        dropout_rate = self.config.dropout_rate if train else 0.0
        logits = score_logits(s, c, e, self.predictor, dropout_rate=dropout_rate, rng=rng)
        return state, logits, trace

    def batch_nll(self, batch, rng=None, train=False, init_noise=None):
        """Teacher-forced mean negative log-likelihood per real target token.

        Returns (loss Tensor, token count). PAD positions contribute nothing.
        """
        source = self.encode_ids(batch.src, batch.src_mask)
        state = self.initial_state(source, rng=rng, init_noise=init_noise)
        total = None
        for t in range(batch.tgt_in.shape[1]):
            state, logits, _ = self.step(state, batch.tgt_in[:, t], source, train=train, rng=rng)
            picked = take_per_row(logits.log_softmax(axis=1), batch.tgt_out[:, t])
            term = (picked * Tensor(batch.tgt_mask[:, t])).sum()
            total = term if total is None else total + term
        tokens = batch.token_count
        return total * (-1.0 / tokens), tokens

    # -- single-sentence decoding surface -------------------------------------

    def begin(self, src_ids, rng=None):
        """Encode one sentence; returns (source, initial state). Wrap in no_grad
        for inference speed."""
        ids = np.asarray([list(src_ids)])
        source = self.encode_ids(ids, np.ones_like(ids, dtype=float))
        return source, self.initial_state(source, rng=rng)

    def step_logprobs(self, state, y_prev_id: int, source, want_trace: bool = False):
        """Advance one step for a single sentence; returns (state, logprobs, trace)."""
        state, logits, trace = self.step(state, [y_prev_id], source, want_trace=want_trace)
        return state, logits.log_softmax(axis=1).data[0], trace


def sentence_nll(model: Seq2SeqModel, src_ids, tgt_ids, rng=None, init_noise=None) -> float:
    """Teacher-forced NLL per token of one pair, for dev scoring and tests."""
    from .data import make_batch

    loss, _ = model.batch_nll(make_batch([(list(src_ids), list(tgt_ids))]),
                              rng=rng, init_noise=init_noise)
    return loss.item()


def corpus_nll(model: Seq2SeqModel, id_pairs, batch_size: int, rng) -> float:
    """Mean per-token NLL over a corpus, dropout off."""
    from .data import batch_by_length

    total, tokens = 0.0, 0.0
    with no_grad():
        for batch in batch_by_length(id_pairs, batch_size, rng):
            loss, count = model.batch_nll(batch, rng=rng, train=False)
            total += loss.item() * count
            tokens += count
    return total / tokens
