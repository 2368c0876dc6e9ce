"""Bidirectional GRU encoder producing one annotation vector per source position.

The annotation matrix (one row per source token, forward state concatenated
with backward state) is the unbounded source-side memory the decoder attends
over. Batched inputs are padded; masked positions carry the previous hidden
state so padding never leaks into real annotations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, concat, gather_rows, stack


@dataclass
class GruParams:
    """Update gate z, reset gate r and candidate weights for one GRU.

    Input matrices are (input_dim, state_dim), recurrent matrices are square
    (state_dim, state_dim), biases are (state_dim,).
    """

    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wh: Tensor
    uh: Tensor
    bh: Tensor


def gru_step(prev_state: Tensor, x: Tensor, p: GruParams) -> Tensor:
    """One GRU update: new = (1 - z) * prev + z * candidate.

    The update gate interpolates toward the candidate, so z saturated at 0
    carries the previous state through unchanged.
    """
    z = (x @ p.wz + prev_state @ p.uz + p.bz).sigmoid()
    r = (x @ p.wr + prev_state @ p.ur + p.br).sigmoid()
    cand = (x @ p.wh + (r * prev_state) @ p.uh + p.bh).tanh()
    return (1.0 - z) * prev_state + z * cand


@dataclass
class SourceMemory:
    """Annotations (B, T, 2d) with forward half first, plus the padding mask."""

    annotations: Tensor
    mask: np.ndarray            # (B, T), 1.0 at real tokens, 0.0 at padding
    proj: Tensor | None = None  # cached alignment projection, filled by the model

    @property
    def batch(self) -> int:
        return self.annotations.shape[0]

    @property
    def length(self) -> int:
        return self.annotations.shape[1]

    @property
    def width(self) -> int:
        return self.annotations.shape[2]

    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def encode_batch(src_ids, mask, embeddings: Tensor, fwd: GruParams, bwd: GruParams) -> SourceMemory:
    """Run both GRU directions over a padded id batch and concatenate the states.

    Masked positions keep the running state frozen, so the backward pass over a
    padded tail produces exactly the states of the unpadded sentence.
    """
    src_ids = np.asarray(src_ids)
    mask = np.asarray(mask, dtype=float)
    if src_ids.ndim != 2 or src_ids.shape[1] == 0:
        raise ShapeError(f"encode: expected nonempty (B, T) ids, got {src_ids.shape}")
    batch, length = src_ids.shape
    d = fwd.uz.shape[0]

    def sweep(positions, params):
        h = Tensor(np.zeros((batch, d)))
        states = {}
        for t in positions:
            e_t = gather_rows(embeddings, src_ids[:, t])
            m_t = Tensor(mask[:, t : t + 1])
            h = m_t * gru_step(h, e_t, params) + (1.0 - m_t) * h
            states[t] = h
        return states

    fwd_states = sweep(range(length), fwd)
    bwd_states = sweep(range(length - 1, -1, -1), bwd)
    cells = [concat([fwd_states[t], bwd_states[t]], axis=1) for t in range(length)]
    return SourceMemory(annotations=stack(cells, axis=1), mask=mask)


def encode(source_ids, embeddings: Tensor, fwd: GruParams, bwd: GruParams) -> SourceMemory:
    """Encode one unpadded sentence (batch of one)."""
    source_ids = list(source_ids)
    if not source_ids:
        raise ShapeError("encode: empty source sequence")
    ids = np.asarray([source_ids])
    return encode_batch(ids, np.ones_like(ids, dtype=float), embeddings, fwd, bwd)
