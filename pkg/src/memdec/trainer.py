"""Parameter init, Adadelta with gradient clipping, the epoch loop, and
pre-training transfer from an attention-only baseline."""

from __future__ import annotations

import numpy as np

from .autodiff import NonFiniteError
from .config import TrainConfig  # noqa: F401  (re-exported: the training contract type)
from .data import batch_by_length
from .model import MEMORY_PREFIX, parameter_specs
from .params import ParameterStore


def orthogonal_matrix(size: int, rng) -> np.ndarray:
    """Orthogonal square matrix: QR of a Gaussian draw, sign-fixed on the diagonal."""
    q, r = np.linalg.qr(rng.normal(size=(size, size)))
    return q * np.sign(np.diag(r))


def init_params(config, rng, variant: str, src_vocab_size: int, tgt_vocab_size: int) -> ParameterStore:
    """Recurrent square matrices orthogonal, other weights N(0, 0.01^2), biases zero."""
    store = ParameterStore()
    for name, shape, tag in parameter_specs(config, variant, src_vocab_size, tgt_vocab_size):
        if tag == "orthogonal":
            values = orthogonal_matrix(shape[0], rng)
        elif tag == "zero":
            values = np.zeros(shape)
        else:
            values = rng.normal(0.0, 0.01, size=shape)
        store.add(name, values, tag)
    return store


def clip_gradients(grads: dict, threshold: float) -> dict:
    """Scale all gradients by threshold/norm when the global L2 norm exceeds it."""
    if threshold <= 0:
        raise ValueError(f"clip threshold must be positive, got {threshold}")
    total = 0.0
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if norm <= threshold:
        return grads
    scale = threshold / norm
    return {name: g * scale for name, g in grads.items()}


def adadelta_step(store: ParameterStore, grads: dict, rho: float, epsilon: float) -> ParameterStore:
    """In-place Adadelta update with the usual paired running averages."""
    for name, g in grads.items():
        acc_g = store.acc_grad_sq[name]
        acc_d = store.acc_update_sq[name]
        acc_g *= rho
        acc_g += (1.0 - rho) * g * g
        # Zero-gradient entries update by zero even at epsilon=0 (0/0 guard).
        with np.errstate(invalid="ignore", divide="ignore"):
            delta = -np.sqrt(acc_d + epsilon) / np.sqrt(acc_g + epsilon) * g
        if epsilon == 0.0:
            delta = np.where(g == 0.0, 0.0, delta)
        if not np.all(np.isfinite(delta)):
            raise NonFiniteError(f"non-finite update for parameter {name!r}")
        store[name].data += delta
        acc_d *= rho
        acc_d += (1.0 - rho) * delta * delta
    return store


def filter_by_length(pairs, max_length: int):
    """Drop pairs where either side exceeds max_length tokens."""
    return [(s, t) for s, t in pairs if len(s) <= max_length and len(t) <= max_length]


def train_epoch(model, id_pairs, config, rng) -> float:
    """One shuffled pass: teacher-forced loss, backward, clip, Adadelta.

    Dropout masks and memory-init noise are resampled per batch from `rng`.
    Returns the mean per-token negative log-likelihood over the epoch.
    """
    if not id_pairs:
        raise ValueError("train_epoch: empty corpus")
    total_nll, total_tokens = 0.0, 0.0
    for batch in batch_by_length(id_pairs, config.batch_size, rng):
        model.store.zero_grad()
        loss, tokens = model.batch_nll(batch, rng=rng, train=True)
        loss.backward()
        grads = clip_gradients(model.store.gradients(), config.clip_threshold)
        adadelta_step(model.store, grads, config.rho, config.epsilon)
        total_nll += loss.item() * tokens
        total_tokens += tokens
    return total_nll / total_tokens


def pretrain_transfer(baseline: ParameterStore, target_config, rng,
                      src_vocab_size: int, tgt_vocab_size: int) -> ParameterStore:
    """Initialize a memory decoder from a trained attention-only model.

    Shared tensors (encoder, embeddings, attention, decoder GRU, predictor) are
    copied; everything under the memory prefix is freshly initialized; tensors
    that exist only in the baseline (feedback transform, its state init) are
    dropped. Optimizer accumulators start from zero for fine-tuning.
    """
    target = init_params(target_config, rng, "memdec", src_vocab_size, tgt_vocab_size)
    for name in target.names():
        if name.startswith(MEMORY_PREFIX) or name not in baseline:
            continue
        src = baseline[name].data
        dst = target[name].data
        if src.shape != dst.shape:
            raise ValueError(f"shape mismatch for {name!r}: baseline {src.shape}, target {dst.shape}")
        dst[...] = src
    return target
