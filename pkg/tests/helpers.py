"""Shared test utilities: gradient-check harness and toy model construction."""

import numpy as np

from memdec.autodiff import Tensor, finite_diff_grad, relative_error
from memdec.config import RunConfig
from memdec.data import Vocabulary, token_alphabet
from memdec.model import Seq2SeqModel
from memdec.trainer import init_params


def toy_config(**overrides) -> RunConfig:
    base = dict(embed_dim=4, hidden_dim=3, cell_width=5, cells=3, dropout_rate=0.0,
                noise_std=0.1, batch_size=4, epochs=2, train_size=40, dev_size=8,
                min_len=2, max_len=5, vocab_size=6, seed=1)
    base.update(overrides)
    return RunConfig(**base)


def toy_model(variant="memdec", seed=0, vocab_size=None, **overrides) -> Seq2SeqModel:
    """Randomly initialized tiny model over a synthetic token alphabet."""
    config = toy_config(**overrides)
    size = vocab_size if vocab_size is not None else config.vocab_size
    vocab = Vocabulary(token_alphabet(size))
    store = init_params(config, np.random.default_rng(seed), variant, len(vocab), len(vocab))
    return Seq2SeqModel(store, config, variant, vocab, vocab)


def analytic_grad(build, x0):
    """Gradient of build(x).item() at x0 via backward()."""
    x = Tensor(np.array(x0, dtype=float), requires_grad=True)
    build(x).backward()
    return x.grad if x.grad is not None else np.zeros_like(np.asarray(x0, dtype=float))


def numeric_grad(build, x0, eps=1e-5):
    """Same gradient via central differences (the independent oracle)."""
    return finite_diff_grad(lambda a: build(Tensor(a.copy())).item(), np.array(x0, dtype=float), eps)


def grad_check(build, x0, eps=1e-5, tol=1e-6):
    """Assert analytic and numeric gradients agree in relative error."""
    got = analytic_grad(build, x0)
    want = numeric_grad(build, x0, eps)
    err = relative_error(got, want)
    assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol:.0e}"
    return err
