"""Init schemes, clipping, Adadelta against an independent scalar recurrence,
epoch training behavior, transfer, and checkpoint round-trips."""

import numpy as np
import pytest

from helpers import toy_config, toy_model
from memdec.autodiff import NonFiniteError
from memdec.config import RunConfig
from memdec.data import Vocabulary, make_batch, token_alphabet
from memdec.model import MEMORY_PREFIX, Seq2SeqModel, parameter_specs
from memdec.params import ParameterStore, load_checkpoint, save_checkpoint
from memdec.trainer import (
    adadelta_step,
    clip_gradients,
    filter_by_length,
    init_params,
    orthogonal_matrix,
    pretrain_transfer,
    train_epoch,
)


def small_store(rng=None, variant="memdec", vocab=8):
    rng = rng or np.random.default_rng(0)
    config = toy_config()
    v = Vocabulary(token_alphabet(vocab))
    return init_params(config, rng, variant, len(v), len(v)), config, v


# -- initialization -----------------------------------------------------------------


def test_recurrent_matrices_are_orthogonal():
    store, config, _ = small_store()
    checked = 0
    for name in store.names():
        if store.init_tag(name) == "orthogonal":
            q = store[name].data
            np.testing.assert_allclose(q.T @ q, np.eye(q.shape[0]), atol=1e-10)
            checked += 1
    assert checked >= 9  # three gates per GRU, three GRUs minimum


def test_gaussian_init_std_near_hundredth():
    config = toy_config(embed_dim=50)
    vocab = Vocabulary(token_alphabet(200))
    store = init_params(config, np.random.default_rng(123), "memdec", len(vocab), len(vocab))
    emb = store["src_embed"].data  # 204 x 50 > 10^4 samples
    assert emb.size >= 10_000
    assert 0.008 <= emb.std() <= 0.012
    assert abs(emb.mean()) < 0.001


def test_biases_start_at_zero():
    store, _, _ = small_store()
    for name in store.names():
        if store.init_tag(name) == "zero":
            assert not store[name].data.any()
    assert store.init_tag("enc_fwd.bz") == "zero"
    assert store.init_tag("pred.b_hidden") == "zero"


def test_init_scheme_assignment():
    store, _, _ = small_store()
    assert store.init_tag("dec_gru.uz") == "orthogonal"
    assert store.init_tag("dec_gru.wz") == "gaussian"
    assert store.init_tag("mem.w_ers") == "gaussian"


def test_orthogonal_matrix_properties():
    for seed in range(3):
        q = orthogonal_matrix(7, np.random.default_rng(seed))
        np.testing.assert_allclose(q.T @ q, np.eye(7), atol=1e-10)


# -- clipping ------------------------------------------------------------------------


def test_clip_below_threshold_unchanged():
    grads = {"a": np.array([0.3, 0.4])}  # norm 0.5
    out = clip_gradients(grads, 1.0)
    np.testing.assert_array_equal(out["a"], grads["a"])


def test_clip_scales_to_threshold():
    out = clip_gradients({"a": np.array([3.0, 4.0])}, 1.0)
    np.testing.assert_allclose(out["a"], [0.6, 0.8], atol=1e-12)


def test_clip_post_norm_bounded_randomized():
    rng = np.random.default_rng(8)
    for _ in range(50):
        grads = {f"p{i}": rng.normal(0, rng.uniform(0.1, 3), size=(3, 4)) for i in range(4)}
        pre = np.sqrt(sum((g ** 2).sum() for g in grads.values()))
        out = clip_gradients(grads, 1.0)
        post = np.sqrt(sum((g ** 2).sum() for g in out.values()))
        assert post <= min(pre, 1.0) + 1e-9
        assert abs(post - min(pre, 1.0)) <= 1e-9


def test_clip_rejects_non_finite_with_name():
    with pytest.raises(NonFiniteError) as exc:
        clip_gradients({"bad_param": np.array([np.nan])}, 1.0)
    assert "bad_param" in str(exc.value)
    with pytest.raises(ValueError):
        clip_gradients({"a": np.ones(2)}, 0.0)


# -- adadelta ---------------------------------------------------------------------------


def one_param_store(value=0.0):
    store = ParameterStore()
    store.add("w", np.array([value]), "gaussian")
    return store


def test_adadelta_zero_gradient_decays_accumulators():
    store = one_param_store(1.0)
    store.acc_grad_sq["w"][:] = 4.0
    store.acc_update_sq["w"][:] = 2.0
    adadelta_step(store, {"w": np.zeros(1)}, rho=0.95, epsilon=1e-6)
    assert store["w"].data[0] == 1.0
    np.testing.assert_allclose(store.acc_grad_sq["w"], [3.8])
    np.testing.assert_allclose(store.acc_update_sq["w"], [1.9])


def test_adadelta_first_step_closed_form():
    store = one_param_store(0.0)
    adadelta_step(store, {"w": np.ones(1)}, rho=0.95, epsilon=1e-6)
    want = -np.sqrt(1e-6) / np.sqrt(0.05 + 1e-6)
    assert store["w"].data[0] == pytest.approx(want, rel=1e-12)
    assert store["w"].data[0] == pytest.approx(-4.47e-3, abs=2e-5)


def test_adadelta_constant_gradient_matches_scalar_recurrence():
    rho, eps = 0.9, 1e-6
    store = one_param_store(0.0)
    # independent recurrence with plain floats
    eg = ed = 0.0
    x = 0.0
    deltas = []
    for _ in range(500):
        g = 1.0
        eg = rho * eg + (1 - rho) * g * g
        delta = -((ed + eps) ** 0.5) / ((eg + eps) ** 0.5) * g
        ed = rho * ed + (1 - rho) * delta * delta
        x += delta
        deltas.append(delta)
        adadelta_step(store, {"w": np.ones(1)}, rho=rho, epsilon=eps)
    assert store["w"].data[0] == pytest.approx(x, rel=1e-12)
    # update magnitude stabilizes: per-step relative change decays toward zero
    mags = np.abs(deltas)
    early = abs(mags[10] / mags[9] - 1.0)
    late = abs(mags[-1] / mags[-2] - 1.0)
    assert late < 1e-3
    assert late < early / 5


def test_adadelta_accumulators_stay_nonnegative():
    rng = np.random.default_rng(5)
    store = one_param_store(0.0)
    for _ in range(200):
        adadelta_step(store, {"w": rng.normal(size=1)}, rho=0.95, epsilon=1e-6)
        assert store.acc_grad_sq["w"][0] >= 0.0
        assert store.acc_update_sq["w"][0] >= 0.0


def test_adadelta_epsilon_zero_is_learning_rate_zero():
    store = one_param_store(3.0)
    adadelta_step(store, {"w": np.array([2.5])}, rho=0.95, epsilon=0.0)
    assert store["w"].data[0] == 3.0  # zero accumulators and zero eps: no movement


# -- epoch loop ----------------------------------------------------------------------


def toy_pairs(rng, count=24, vocab=6, lo=2, hi=5):
    pairs = []
    for _ in range(count):
        length = int(rng.integers(lo, hi + 1))
        seq = [int(t) for t in rng.integers(4, 4 + vocab - 2, size=length)]
        pairs.append((seq, seq[::-1]))
    return pairs


def test_train_epoch_reports_loss_without_moving_params_at_eps_zero():
    model = toy_model("memdec", seed=1)
    config = toy_config(epsilon=0.0, dropout_rate=0.0)
    before = {n: model.store[n].data.copy() for n in model.store.names()}
    nll = train_epoch(model, toy_pairs(np.random.default_rng(2)), config, np.random.default_rng(3))
    assert np.isfinite(nll) and nll > 0
    for name in model.store.names():
        np.testing.assert_array_equal(model.store[name].data, before[name])


def test_train_epoch_bitwise_reproducible():
    def run():
        model = toy_model("memdec", seed=4, dropout_rate=0.0)
        config = toy_config(dropout_rate=0.0)
        pairs = toy_pairs(np.random.default_rng(5))
        nll = train_epoch(model, pairs, config, np.random.default_rng(6))
        return nll, {n: model.store[n].data.copy() for n in model.store.names()}

    nll_a, params_a = run()
    nll_b, params_b = run()
    assert nll_a == nll_b
    for name in params_a:
        assert np.array_equal(params_a[name], params_b[name])


def test_identical_rows_match_single_sentence_gradient():
    # Mean-per-token loss: a batch of identical rows has the same gradient as one row.
    model = toy_model("memdec", seed=7, noise_std=0.1)
    pair = ([4, 5, 6], [6, 5, 4])
    noise1 = np.random.default_rng(8).normal(0, 0.1, (1, 3, 5))
    noise3 = np.repeat(noise1, 3, axis=0)

    model.store.zero_grad()
    loss1, _ = model.batch_nll(make_batch([pair]), init_noise=noise1)
    loss1.backward()
    grads1 = {n: g.copy() for n, g in model.store.gradients().items()}

    model.store.zero_grad()
    loss3, _ = model.batch_nll(make_batch([pair] * 3), init_noise=noise3)
    loss3.backward()
    grads3 = model.store.gradients()

    assert loss1.item() == pytest.approx(loss3.item(), rel=1e-12)
    for name in grads1:
        np.testing.assert_allclose(grads3[name], grads1[name], rtol=1e-9, atol=1e-12)


def test_overfit_single_sentence():
    # Desk experiment: 200 Adadelta steps drive one-sentence NLL below 0.1.
    model = toy_model("memdec", seed=9, embed_dim=16, hidden_dim=16, cell_width=16,
                      cells=2, noise_std=0.0, dropout_rate=0.0)
    config = toy_config(noise_std=0.0, dropout_rate=0.0)
    pair = ([4, 5, 6, 7], [7, 6, 5, 4])
    batch = make_batch([pair])
    first = last = None
    for step in range(200):
        model.store.zero_grad()
        loss, _ = model.batch_nll(batch)
        loss.backward()
        grads = clip_gradients(model.store.gradients(), config.clip_threshold)
        adadelta_step(model.store, grads, config.rho, config.epsilon)
        if first is None:
            first = loss.item()
        last = loss.item()
    assert last < 0.1, f"one-sentence NLL stuck at {last:.3f}"
    assert last < first


def test_filter_by_length():
    pairs = [([1] * 3, [1] * 3), ([1] * 9, [1] * 2), ([1] * 2, [1] * 9)]
    kept = filter_by_length(pairs, 5)
    assert kept == [([1] * 3, [1] * 3)]


def test_train_epoch_rejects_empty():
    model = toy_model("memdec", seed=1)
    with pytest.raises(ValueError):
        train_epoch(model, [], toy_config(), np.random.default_rng(0))


# -- pre-training transfer --------------------------------------------------------------


def test_transfer_copies_shared_and_freshens_memory():
    config = toy_config()
    vocab = Vocabulary(token_alphabet(config.vocab_size))
    base = init_params(config, np.random.default_rng(11), "baseline", len(vocab), len(vocab))
    target = pretrain_transfer(base, config, np.random.default_rng(12), len(vocab), len(vocab))

    assert any(n.startswith(MEMORY_PREFIX) for n in target.names())
    assert not any(n.startswith(MEMORY_PREFIX) for n in base.names())
    for name in target.names():
        if name.startswith(MEMORY_PREFIX):
            continue
        if name in base:
            assert np.array_equal(target[name].data, base[name].data), name
    # baseline-only tensors do not leak into the target
    assert "att.fb_s" in base and "att.fb_s" not in target
    assert "dec_init.w" in base and "dec_init.w" not in target


def test_transfer_rejects_shape_mismatch_with_name():
    config = toy_config()
    bigger = toy_config(hidden_dim=config.hidden_dim + 1)
    vocab = Vocabulary(token_alphabet(config.vocab_size))
    base = init_params(bigger, np.random.default_rng(13), "baseline", len(vocab), len(vocab))
    with pytest.raises(ValueError) as exc:
        pretrain_transfer(base, config, np.random.default_rng(14), len(vocab), len(vocab))
    assert "enc_" in str(exc.value) or "att." in str(exc.value)


# -- checkpoints --------------------------------------------------------------------------


def test_checkpoint_roundtrip_bitwise(tmp_path):
    store, config, vocab = small_store(np.random.default_rng(15))
    store.acc_grad_sq["src_embed"][:] = 0.123456789123456789
    meta = {"variant": "memdec", "epoch": 3, "note": "roundtrip"}
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, store, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert set(loaded.names()) == set(store.names())
    for name in store.names():
        assert np.array_equal(loaded[name].data, store[name].data), name
        assert np.array_equal(loaded.acc_grad_sq[name], store.acc_grad_sq[name])
        assert np.array_equal(loaded.acc_update_sq[name], store.acc_update_sq[name])
        assert loaded.init_tag(name) == store.init_tag(name)


def test_checkpoint_version_guard(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format_version": 99, "meta": {}, "params": {}}', encoding="utf-8")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_parameter_specs_cover_store():
    config = toy_config()
    for variant in ("memdec", "baseline"):
        specs = parameter_specs(config, variant, 10, 12)
        names = [n for n, _, _ in specs]
        assert len(names) == len(set(names))
        store = init_params(config, np.random.default_rng(1), variant, 10, 12)
        assert store.names() == names
        for name, shape, _ in specs:
            assert store[name].data.shape == tuple(shape)
