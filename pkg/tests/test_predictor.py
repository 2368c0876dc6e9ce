"""Predictor checks: readout scoring against direct matrix math, softmax output."""

import numpy as np
import pytest

from memdec.autodiff import NonFiniteError, Tensor, take_per_row
from memdec.predictor import PredictorParams, predict_distribution, score_logits


def make_params(rng, m, two_d, embed, vocab):
    in_dim = m + two_d + embed
    return PredictorParams(
        w_hidden=Tensor(rng.uniform(-0.8, 0.8, (in_dim, m)), requires_grad=True),
        b_hidden=Tensor(rng.uniform(-0.5, 0.5, m), requires_grad=True),
        w_out=Tensor(rng.uniform(-0.8, 0.8, (m, vocab)), requires_grad=True),
    )


def test_zero_readout_gives_zero_logits():
    rng = np.random.default_rng(0)
    p = make_params(rng, 3, 4, 2, 6)
    p.w_hidden = Tensor(np.zeros((9, 3)))
    p.b_hidden = Tensor(np.zeros(3))
    logits = score_logits(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 4))),
                          Tensor(np.ones((1, 2))), p)
    np.testing.assert_array_equal(logits.data, np.zeros((1, 6)))


def test_duplicated_output_columns_give_identical_logits():
    rng = np.random.default_rng(1)
    p = make_params(rng, 3, 4, 2, 6)
    p.w_out.data[:, 4] = p.w_out.data[:, 1]
    logits = score_logits(Tensor(rng.uniform(-1, 1, (1, 3))), Tensor(rng.uniform(-1, 1, (1, 4))),
                          Tensor(rng.uniform(-1, 1, (1, 2))), p)
    assert logits.data[0, 4] == logits.data[0, 1]


def test_logits_match_direct_computation():
    rng = np.random.default_rng(2)
    p = make_params(rng, 3, 4, 2, 6)
    s = rng.uniform(-1, 1, (2, 3))
    c = rng.uniform(-1, 1, (2, 4))
    e = rng.uniform(-1, 1, (2, 2))
    got = score_logits(Tensor(s), Tensor(c), Tensor(e), p).data
    hidden = np.tanh(np.concatenate([s, c, e], axis=1) @ p.w_hidden.data + p.b_hidden.data)
    np.testing.assert_allclose(got, hidden @ p.w_out.data, atol=1e-12)


def test_distribution_uniform_over_equal_logits():
    out = predict_distribution(np.zeros(7))
    np.testing.assert_allclose(out.data, np.full(7, 1 / 7), atol=1e-15)


def test_distribution_closed_form_quarter():
    out = predict_distribution(np.array([0.0, np.log(3.0)]))
    np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)


def test_distribution_matches_exp_normalize():
    rng = np.random.default_rng(3)
    logits = rng.uniform(-4, 4, 9)
    got = predict_distribution(logits).data
    want = np.exp(logits) / np.exp(logits).sum()
    np.testing.assert_allclose(got, want, atol=1e-12)
    assert abs(got.sum() - 1.0) < 1e-12


def test_distribution_shift_invariance():
    rng = np.random.default_rng(4)
    logits = rng.uniform(-3, 3, 5)
    a = predict_distribution(logits).data
    b = predict_distribution(logits + 1234.5).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.argmax(a) == np.argmax(b)


def test_distribution_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        predict_distribution(np.array([0.0, np.nan]))


def test_cross_entropy_gradient_is_p_minus_onehot():
    rng = np.random.default_rng(5)
    logits0 = rng.uniform(-2, 2, (1, 6))
    target = 3
    logits = Tensor(logits0, requires_grad=True)
    loss = -take_per_row(logits.log_softmax(axis=1), [target]).sum()
    loss.backward()
    p = np.exp(logits0[0]) / np.exp(logits0[0]).sum()
    want = p.copy()
    want[target] -= 1.0
    np.testing.assert_allclose(logits.grad[0], want, atol=1e-12)


def test_dropout_hits_hidden_layer_only_in_training():
    rng = np.random.default_rng(6)
    p = make_params(rng, 4, 4, 2, 6)
    s, c, e = (Tensor(rng.uniform(-1, 1, (1, k))) for k in (4, 4, 2))
    eval_logits = score_logits(s, c, e, p).data
    eval_again = score_logits(s, c, e, p).data
    np.testing.assert_array_equal(eval_logits, eval_again)
    train_logits = score_logits(s, c, e, p, dropout_rate=0.5, rng=np.random.default_rng(7)).data
    assert not np.array_equal(train_logits, eval_logits)
