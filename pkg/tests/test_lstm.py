import math
import time

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ordrec import lstm
from ordrec.errors import DataError, DivergenceError
from ordrec.lstm import AdamState, ModelConfig


def tiny(seed=0, **kw):
    base = dict(seq_len_in=11, feature_dim=5, hidden1=4, hidden2=3, n_outputs=7, seed=seed)
    base.update(kw)
    return ModelConfig(**base)


def test_zero_params_give_uniform_output():
    cfg = tiny()
    params = lstm.zero_params(cfg)
    x = np.random.default_rng(0).normal(size=(11, 5))
    probs, cache = lstm.forward(params, x)
    np.testing.assert_allclose(probs, 1 / 7)
    np.testing.assert_allclose(cache.layer1.gates[..., :12], 0.5)
    assert not cache.layer1.gates[..., 12:].any()
    assert not cache.layer1.c.any() and not cache.layer2.h.any()


def _oracle_scalar_lstm(xs, layers, dense_w, dense_b):
    """Plain-arithmetic two-layer scalar LSTM in 50-digit precision."""
    mpmath.mp.dps = 50
    sig = lambda v: 1 / (1 + mpmath.exp(-v))  # noqa: E731
    seq = [mpmath.mpf(v) for v in xs]
    hs_per_layer = []
    for (wi, wf, wo, wg), (ui, uf, uo, ug), (bi, bf, bo, bg) in layers:
        h = c = mpmath.mpf(0)
        hs = []
        for x in seq:
            i = sig(wi * x + ui * h + bi)
            f = sig(wf * x + uf * h + bf)
            o = sig(wo * x + uo * h + bo)
            g = mpmath.tanh(wg * x + ug * h + bg)
            c = f * c + i * g
            h = o * mpmath.tanh(c)
            hs.append(h)
        hs_per_layer.append(hs)
        seq = hs
    logits = [w * seq[-1] + b for w, b in zip(dense_w, dense_b)]
    z = sum(mpmath.exp(v) for v in logits)
    return hs_per_layer, [mpmath.exp(v) / z for v in logits]


def test_scalar_model_matches_plain_arithmetic():
    W1, U1, b1 = (0.3, -0.2, 0.5, 0.7), (0.1, 0.4, -0.3, 0.2), (0.0, 1.0, 0.1, -0.1)
    W2, U2, b2 = (-0.6, 0.25, 0.35, 0.9), (0.05, -0.15, 0.2, -0.4), (0.2, 1.0, -0.2, 0.05)
    dw, db = (0.8, -1.1, 0.3), (0.1, 0.0, -0.2)
    xs = (0.9, -0.4)
    params = {
        "lstm1.W": np.array(W1).reshape(4, 1), "lstm1.U": np.array(U1).reshape(4, 1), "lstm1.b": np.array(b1),
        "lstm2.W": np.array(W2).reshape(4, 1), "lstm2.U": np.array(U2).reshape(4, 1), "lstm2.b": np.array(b2),
        "dense.W": np.array(dw).reshape(3, 1), "dense.b": np.array(db),
    }
    probs, cache = lstm.forward(params, np.array(xs).reshape(2, 1))
    hs, oracle_probs = _oracle_scalar_lstm(xs, [(W1, U1, b1), (W2, U2, b2)], dw, db)
    np.testing.assert_allclose(cache.layer1.h[0, 1:, 0], [float(v) for v in hs[0]], rtol=1e-12)
    np.testing.assert_allclose(cache.layer2.h[0, 1:, 0], [float(v) for v in hs[1]], rtol=1e-12)
    np.testing.assert_allclose(probs, [float(v) for v in oracle_probs], rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 11, 5), elements=st.floats(-20, 20)), st.integers(0, 2**16))
def test_softmax_normalised_and_positive(x, seed):
    params = lstm.init_params(tiny(seed), dtype=np.float64)
    probs, _ = lstm.forward(params, x)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(probs > 0) and np.all(probs < 1)


def test_loss_closed_forms():
    assert lstm.loss(np.full(4, 0.25), 2) == pytest.approx(math.log(4))
    assert lstm.loss(np.array([0.0, 1.0]), 1) == pytest.approx(0.0)
    assert lstm.loss(np.array([0.1, 0.9]), 0) == pytest.approx(math.log(10))
    assert lstm.cross_entropy(np.zeros((1, 4)), [3]) == pytest.approx(math.log(4))


def test_softmax_extreme_logits_wide_vocab():
    rng = np.random.default_rng(0)
    logits = rng.uniform(-50, 50, size=(2, 100_000)).astype(np.float32)
    logits[0, 0], logits[1, -1] = 50, -50
    probs = lstm.softmax(logits)
    assert np.all(np.isfinite(probs))
    np.testing.assert_allclose(probs.astype(np.float64).sum(axis=1), 1.0, atol=1e-6)
    assert np.isfinite(lstm.cross_entropy(logits, [99_999, 99_999]))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check_random_tiny_models(seed):
    cfg = tiny(seed, feature_dim=3 + seed, hidden1=2 + seed, hidden2=8 - seed, n_outputs=16 - seed)
    assert lstm.gradient_check(cfg, seed) <= 1e-4


def test_gradient_check_zero_recurrent_weights():
    assert lstm.gradient_check(tiny(), 11, zero_recurrent=True) <= 1e-6


def test_float64_gradients_agree_with_extended_precision():
    assert lstm.gradient_check(tiny(), 3, dtype=np.float64) <= 1e-4


def test_output_layer_gradient_identity():
    cfg = tiny()
    params = lstm.zero_params(cfg, dtype=np.float64)
    x = np.random.default_rng(1).normal(size=(11, 5))
    probs, cache = lstm.forward(params, x)
    grads = lstm.backward(params, cache, 4)
    expected = probs.copy()
    expected[4] -= 1
    np.testing.assert_allclose(grads["dense.b"], expected)


def test_logit_gradient_is_probs_minus_onehot():
    cfg = tiny()
    params = lstm.init_params(cfg, dtype=np.float64)
    x = np.random.default_rng(2).normal(size=(3, 11, 5))
    probs, cache = lstm.forward(params, x)
    labels = np.array([0, 6, 2])
    grads = lstm.backward(params, cache, labels)
    dlogits = probs.copy()
    dlogits[np.arange(3), labels] -= 1
    np.testing.assert_allclose(grads["dense.b"], dlogits.mean(axis=0))
    np.testing.assert_allclose(grads["dense.W"], dlogits.T @ cache.layer2.h[:, -1] / 3)


def test_backward_is_deterministic():
    cfg = tiny()
    params = lstm.init_params(cfg)
    x = np.random.default_rng(3).normal(size=(8, 11, 5))
    labels = np.arange(8) % 7
    g1 = lstm.backward(params, lstm.forward(params, x)[1], labels)
    g2 = lstm.backward(params, lstm.forward(params, x)[1], labels)
    for k in g1:
        assert g1[k].tobytes() == g2[k].tobytes()


def test_backward_rejects_mismatched_cache():
    params = lstm.init_params(tiny())
    _, cache = lstm.forward(params, np.zeros((2, 11, 5)))
    with pytest.raises(DataError):
        lstm.backward(params, cache, [1])
    other = lstm.init_params(tiny(hidden2=5))
    with pytest.raises(DataError):
        lstm.backward(other, cache, [1, 2])


def test_forward_validates_input():
    params = lstm.init_params(tiny())
    with pytest.raises(DataError):
        lstm.forward(params, np.zeros((11, 4)))
    bad = np.zeros((11, 5))
    bad[3, 1] = np.nan
    with pytest.raises(DataError):
        lstm.forward(params, bad)


def test_stateless_between_windows():
    params = lstm.init_params(tiny())
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(11, 5)), rng.normal(size=(11, 5))
    alone, _ = lstm.forward(params, b)
    lstm.forward(params, a)
    after, _ = lstm.forward(params, b)
    assert alone.tobytes() == after.tobytes()
    batched, _ = lstm.forward(params, np.stack([a, b]))
    np.testing.assert_allclose(batched[1], alone, rtol=1e-5)


def test_padding_rows_still_advance_state():
    params = lstm.init_params(tiny())
    x = np.zeros((11, 5))
    x[-1] = 1.0
    _, cache = lstm.forward(params, x)
    # padded steps still evaluate gates at sigma(b)
    np.testing.assert_allclose(cache.layer1.gates[0, 0, 4:8], lstm.sigmoid(params["lstm1.b"][4:8]), rtol=1e-6)


def test_init_params_conventions():
    cfg = tiny(hidden1=6)
    p = lstm.init_params(cfg)
    np.testing.assert_array_equal(p["lstm1.b"][6:12], 1.0)
    assert not p["lstm1.b"][:6].any() and not p["lstm1.b"][12:].any()
    assert np.abs(p["lstm1.W"]).max() <= math.sqrt(6 / (5 + 6))
    assert np.abs(p["dense.W"]).max() <= math.sqrt(6 / (3 + 7))
    assert all(v.dtype == np.float32 for v in p.values())


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    lstm.adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_is_lr_times_sign():
    params = {"w": np.array([1.0, 1.0, 1.0])}
    g = np.array([0.5, -3.0, 1e-3])
    lstm.adam_step(params, {"w": g}, AdamState(lr=0.01))
    np.testing.assert_allclose(params["w"], 1.0 - 0.01 * g / (np.abs(g) + 1e-8), rtol=1e-9)
    np.testing.assert_allclose(params["w"], 1.0 - 0.01 * np.sign(g), rtol=1e-6)


def test_adam_minimises_quadratic():
    params = {"w": np.array([5.0])}
    state = AdamState(lr=0.1)
    start = 0.5 * 25.0
    for _ in range(200):
        lstm.adam_step(params, {"w": params["w"].copy()}, state)
    assert 0.5 * params["w"][0] ** 2 < 0.1 * start


def test_adam_diverged():
    with pytest.raises(DivergenceError, match="diverged"):
        lstm.adam_step({"w": np.zeros(2)}, {"w": np.array([np.inf, 0.0])}, AdamState())


def test_full_gradient_check_runtime_budget():
    t0 = time.perf_counter()
    for seed in range(5):
        lstm.gradient_check(tiny(seed), seed)
    assert time.perf_counter() - t0 < 60
