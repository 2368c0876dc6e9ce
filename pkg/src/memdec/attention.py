"""Content-based read over the source annotations.

Alignment scores compare a query state against every annotation cell through a
small additive network; the softmax weights blend the cells into a context
vector. The feedback transform folds the previously emitted word into the
query, which the attention-only baseline uses in place of the buffer read.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor
from .encoder import GruParams, gru_step

MASK_PENALTY = 1e9  # added (negated) to padded cells before the softmax


@dataclass
class AttentionParams:
    w_a: Tensor  # (query_dim, align)
    u_a: Tensor  # (2d, align)
    v_a: Tensor  # (align,)
    fb_s: Tensor | None = None        # feedback transform on the previous state
    fb_y: Tensor | None = None        # feedback transform on the previous word embedding
    fb_gru: GruParams | None = None   # alternative gated feedback transform


def feedback_state(s_prev: Tensor, y_prev_embedding: Tensor, params: AttentionParams,
                   mode: str = "tanh") -> Tensor:
    """Fold the previous prediction into the state used to query the source.

    mode "tanh" applies an affine combination through tanh; mode "gru" runs a
    single gated update with its own parameters.
    """
    if mode == "tanh":
        return (s_prev @ params.fb_s + y_prev_embedding @ params.fb_y).tanh()
    if mode == "gru":
        return gru_step(s_prev, y_prev_embedding, params.fb_gru)
    raise ValueError(f"unknown feedback mode {mode!r}")


def project_annotations(source, params: AttentionParams) -> Tensor:
    """Precompute the per-cell alignment projection (constant across decode steps)."""
    ann = source.annotations
    batch, length, width = ann.shape
    flat = ann.reshape(batch * length, width) @ params.u_a
    return flat.reshape(batch, length, params.u_a.shape[1])


def attend(query: Tensor, source, params: AttentionParams, source_proj: Tensor | None = None):
    """Blend annotation cells by softmax-normalized alignment scores.

    Returns (context (B, 2d), weights (B, T)). Padded cells receive a large
    negative score so their weights underflow to exactly zero.
    """
    ann = source.annotations
    if ann.shape[1] == 0:
        raise ShapeError("attend: empty source memory")
    batch, length, _ = ann.shape
    if source_proj is None:
        source_proj = project_annotations(source, params)

    q = query @ params.w_a
    hidden = (source_proj + q.reshape(batch, 1, q.shape[1])).tanh()
    scores = (hidden * params.v_a).sum(axis=2)
    if not np.all(source.mask):
        m = Tensor(source.mask)
        scores = scores * m + (m - 1.0) * MASK_PENALTY
    weights = scores.softmax(axis=1)
    context = (weights.reshape(batch, length, 1) * ann).sum(axis=1)
    return context, weights
