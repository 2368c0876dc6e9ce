"""Target-word scoring: a one-hidden-layer readout dotted with output embeddings."""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import Tensor, concat, dropout


@dataclass
class PredictorParams:
    w_hidden: Tensor  # (m + 2d + embed, m)
    b_hidden: Tensor  # (m,)
    w_out: Tensor     # (m, |V|), one column per target word


def score_logits(s: Tensor, c: Tensor, e_prev: Tensor, params: PredictorParams,
                 dropout_rate: float = 0.0, rng=None) -> Tensor:
    """Score every target word from [state, context, previous embedding].

    Dropout, when active, applies to the readout hidden layer only.
    """
    hidden = (concat([s, c, e_prev], axis=1) @ params.w_hidden + params.b_hidden).tanh()
    if dropout_rate > 0.0 and rng is not None:
        hidden = dropout(hidden, dropout_rate, rng)
    return hidden @ params.w_out


def predict_distribution(logits) -> Tensor:
    """Softmax over the vocabulary scores."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    return logits.softmax(axis=-1)
