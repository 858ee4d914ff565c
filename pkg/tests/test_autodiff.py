"""Unit tests for the tensor engine: forward semantics, gradients, Adam,
the cosine schedule, and parameter serialization."""

import math

import numpy as np
import pytest

from matgraph import autodiff as ad
from matgraph.autodiff import (
    BatchNormState,
    OptimizerState,
    Tape,
    Tensor,
    adam_step,
    cosine_lr,
    load_params,
    save_params,
)
from matgraph.errors import ConfigError, ShapeError

from gradcheck import away_from_kinks, check_gradients, f64


def rand(rng, *shape):
    return rng.normal(size=shape)


# ---------------------------------------------------------------------------
# forward semantics
# ---------------------------------------------------------------------------


def test_tensor_shapes_are_2d():
    t = Tensor([1.0, 2.0, 3.0])
    assert t.shape == (1, 3)
    assert Tensor(5.0).shape == (1, 1)
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 2, 2)))


def test_softmax_uniform_on_zeros():
    p = ad.softmax_rows(Tensor(np.zeros((2, 3))))
    np.testing.assert_allclose(p.data, np.full((2, 3), 1.0 / 3.0), atol=1e-7)


def test_softmax_rows_sum_to_one_and_positive():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(scale=30.0, size=(50, 21)))
    p = ad.softmax_rows(x)
    np.testing.assert_allclose(p.data.sum(axis=1), np.ones(50), atol=1e-6)
    assert (p.data > 0).all()


def test_leaky_relu_negative_slope():
    y = ad.leaky_relu(Tensor([[-1.0, 2.0]]), alpha=0.2)
    np.testing.assert_allclose(y.data, [[-0.2, 2.0]], atol=1e-7)


def test_add_rejects_bad_broadcast():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.zeros((3, 2))), Tensor(np.zeros((2, 2))))


def test_matmul_shape_error_names_primitive():
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_scatter_add_rows_sums_by_destination():
    x = Tensor([[1.0, 0.0], [2.0, 1.0], [4.0, 1.0]])
    out = ad.scatter_add_rows(x, np.array([0, 2, 0]), 3)
    np.testing.assert_allclose(out.data, [[5.0, 1.0], [0.0, 0.0], [2.0, 1.0]])


def test_index_select_rows_gathers():
    x = Tensor([[1.0], [2.0], [3.0]])
    out = ad.index_select_rows(x, np.array([2, 0, 0]))
    np.testing.assert_allclose(out.data, [[3.0], [1.0], [1.0]])


def test_batch_norm_eval_is_affine_and_deterministic():
    rng = np.random.default_rng(3)
    state = BatchNormState.fresh(4)
    state.running_mean = np.array([[1.0, 0.0, -1.0, 2.0]], dtype=np.float32)
    state.running_var = np.array([[4.0, 1.0, 1.0, 9.0]], dtype=np.float32)
    gamma = Tensor(np.ones((1, 4)))
    beta = Tensor(np.zeros((1, 4)))
    x = Tensor(rng.normal(size=(6, 4)))
    y1 = ad.batch_norm(x, gamma, beta, state, training=False)
    y2 = ad.batch_norm(x, gamma, beta, state, training=False)
    np.testing.assert_array_equal(y1.data, y2.data)
    expected = (x.data - state.running_mean) / np.sqrt(state.running_var + state.eps)
    np.testing.assert_allclose(y1.data, expected, rtol=1e-6)


def test_batch_norm_training_updates_running_stats():
    state = BatchNormState.fresh(2)
    x = Tensor([[0.0, 10.0], [2.0, 14.0]])
    ad.batch_norm(x, Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 2))), state, training=True)
    np.testing.assert_allclose(state.running_mean, [[0.1, 1.2]], atol=1e-6)


def test_lstm_cell_step_matches_reference():
    rng = np.random.default_rng(11)
    hidden, nin = 3, 2
    x = Tensor(rand(rng, 1, nin), dtype=np.float64)
    h = Tensor(rand(rng, 1, hidden), dtype=np.float64)
    c = Tensor(rand(rng, 1, hidden), dtype=np.float64)
    w_ih = Tensor(rand(rng, nin, 4 * hidden), dtype=np.float64)
    w_hh = Tensor(rand(rng, hidden, 4 * hidden), dtype=np.float64)
    b = Tensor(rand(rng, 1, 4 * hidden), dtype=np.float64)
    h2, c2 = ad.lstm_cell_step(x, h, c, w_ih, w_hh, b)

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    gates = x.data @ w_ih.data + h.data @ w_hh.data + b.data
    i, f, g, o = np.split(gates, 4, axis=1)
    c_ref = sig(f) * c.data + sig(i) * np.tanh(g)
    h_ref = sig(o) * np.tanh(c_ref)
    np.testing.assert_allclose(c2.data, c_ref, rtol=1e-10)
    np.testing.assert_allclose(h2.data, h_ref, rtol=1e-10)


# ---------------------------------------------------------------------------
# weighted cross entropy
# ---------------------------------------------------------------------------


def test_wce_uniform_weights_equals_mean_ce():
    rng = np.random.default_rng(5)
    probs = ad.softmax_rows(Tensor(rand(rng, 8, 4), dtype=np.float64))
    y = rng.integers(0, 4, size=8)
    loss = ad.weighted_cross_entropy(probs, y, np.ones(4))
    expected = -np.log(probs.data[np.arange(8), y]).mean()
    assert abs(loss.item() - expected) < 1e-6


def test_wce_perfect_predictions_near_zero():
    probs = Tensor(np.eye(3), dtype=np.float64)
    loss = ad.weighted_cross_entropy(probs, np.array([0, 1, 2]), np.ones(3))
    assert loss.item() <= 1e-6


def test_wce_two_class_hand_value():
    # p=[0.5, 0.5], y=0, w=[2, 1]: loss = 2*(-log 0.5)/2 = 0.6931...
    probs = Tensor([[0.5, 0.5]], dtype=np.float64)
    loss = ad.weighted_cross_entropy(probs, np.array([0]), np.array([2.0, 1.0]))
    assert abs(loss.item() - 0.6931471805599453) < 1e-6


def test_wce_clamps_zero_probability():
    probs = Tensor([[0.0, 1.0]], dtype=np.float64)
    loss = ad.weighted_cross_entropy(probs, np.array([0]), np.ones(2))
    assert math.isfinite(loss.item())


def test_wce_empty_mask_rejected():
    probs = Tensor([[0.5, 0.5]], dtype=np.float64)
    with pytest.raises(ConfigError):
        ad.weighted_cross_entropy(probs, np.array([0]), np.ones(2), mask=np.array([False]))


def test_wce_mask_restricts_rows():
    probs = Tensor([[0.9, 0.1], [0.5, 0.5]], dtype=np.float64)
    y = np.array([0, 0])
    masked = ad.weighted_cross_entropy(probs, y, np.ones(2), mask=np.array([True, False]))
    assert abs(masked.item() - (-np.log(0.9))) < 1e-9


# ---------------------------------------------------------------------------
# gradients: every differentiable primitive against central differences
# ---------------------------------------------------------------------------

GRADCHECK_INSTANCES = 20


def seeded_rngs():
    return [np.random.default_rng(1000 + k) for k in range(GRADCHECK_INSTANCES)]


def test_grad_matmul():
    for rng in seeded_rngs():
        a = f64(rand(rng, 5, 4))
        b = f64(rand(rng, 4, 3))
        check_gradients(ad.matmul, [a, b], rng=rng)


def test_grad_add_same_shape_and_bias():
    for rng in seeded_rngs():
        a = f64(rand(rng, 4, 3))
        b = f64(rand(rng, 4, 3))
        check_gradients(ad.add, [a, b], rng=rng)
        bias = f64(rand(rng, 1, 3))
        check_gradients(ad.add, [a, bias], rng=rng)


def test_grad_mul_scale_and_scale_rows():
    for rng in seeded_rngs():
        a = f64(rand(rng, 3, 4))
        b = f64(rand(rng, 3, 4))
        check_gradients(ad.mul, [a, b], rng=rng)
        check_gradients(lambda t: ad.scale(t, 0.37), [a], rng=rng)
        factors = rng.uniform(0.2, 2.0, size=(3, 1))
        check_gradients(lambda t: ad.scale_rows(t, factors), [a], rng=rng)


def test_grad_concat_and_slice():
    for rng in seeded_rngs():
        a = f64(rand(rng, 3, 2))
        b = f64(rand(rng, 3, 4))
        check_gradients(ad.concat_cols, [a, b], rng=rng)
        c = f64(rand(rng, 2, 3))
        d = f64(rand(rng, 4, 3))
        check_gradients(ad.concat_rows, [c, d], rng=rng)
        e = f64(rand(rng, 3, 6))
        check_gradients(lambda t: ad.slice_cols(t, 1, 4), [e], rng=rng)


def test_grad_activations():
    for rng in seeded_rngs():
        x = f64(away_from_kinks(rand(rng, 4, 5)))
        check_gradients(ad.relu, [x], rng=rng)
        check_gradients(lambda t: ad.leaky_relu(t, 0.2), [x], rng=rng)
        alpha = f64(np.array([[0.25]]))
        check_gradients(ad.prelu, [x, alpha], rng=rng)
        y = f64(rand(rng, 4, 5))
        check_gradients(ad.sigmoid, [y], rng=rng)
        check_gradients(ad.tanh, [y], rng=rng)


def test_grad_softmax_and_reductions():
    for rng in seeded_rngs():
        x = f64(rand(rng, 4, 6))
        check_gradients(ad.softmax_rows, [x], rng=rng)
        check_gradients(ad.mean_rows, [x], rng=rng)
        check_gradients(ad.sum_all, [x], rng=rng)


def test_grad_gather_scatter():
    for rng in seeded_rngs():
        x = f64(rand(rng, 5, 3))
        idx = rng.integers(0, 5, size=7)
        check_gradients(lambda t: ad.index_select_rows(t, idx), [x], rng=rng)
        y = f64(rand(rng, 7, 3))
        dst = rng.integers(0, 4, size=7)
        check_gradients(lambda t: ad.scatter_add_rows(t, dst, 4), [y], rng=rng)


def test_grad_batch_norm_train_and_eval():
    for rng in seeded_rngs():
        x = f64(rand(rng, 6, 3))
        gamma = f64(rng.uniform(0.5, 1.5, size=(1, 3)))
        beta = f64(rand(rng, 1, 3))
        state = BatchNormState.fresh(3, dtype=np.float64)

        def bn_train(xx, gg, bb):
            st = BatchNormState.fresh(3, dtype=np.float64)
            return ad.batch_norm(xx, gg, bb, st, training=True)

        check_gradients(bn_train, [x, gamma, beta], rng=rng)
        check_gradients(lambda xx, gg, bb: ad.batch_norm(xx, gg, bb, state, training=False),
                        [x, gamma, beta], rng=rng)


def test_grad_lstm_cell_step():
    for rng in seeded_rngs():
        hidden, nin = 3, 2
        tensors = [
            f64(rand(rng, 2, nin)),
            f64(rand(rng, 2, hidden)),
            f64(rand(rng, 2, hidden)),
            f64(rand(rng, nin, 4 * hidden)),
            f64(rand(rng, hidden, 4 * hidden)),
            f64(rand(rng, 1, 4 * hidden)),
        ]
        check_gradients(lambda *ts: ad.lstm_cell_step(*ts)[0], tensors, rng=rng)


def test_grad_weighted_cross_entropy():
    for rng in seeded_rngs():
        logits = f64(rand(rng, 6, 4))
        y = rng.integers(0, 4, size=6)
        w = rng.uniform(0.5, 2.0, size=4)
        mask = rng.uniform(size=6) > 0.3
        if not mask.any():
            mask[0] = True

        def loss_fn(t):
            return ad.weighted_cross_entropy(ad.softmax_rows(t), y, w, mask)

        check_gradients(loss_fn, [logits], rng=rng)


# ---------------------------------------------------------------------------
# optimizer, schedule, serialization
# ---------------------------------------------------------------------------


def test_adam_converges_on_quadratic():
    p = Tensor(np.array([[5.0, -3.0]]), requires_grad=True)
    state = OptimizerState(lr=0.1)
    for _ in range(400):
        p.zero_grad()
        with Tape() as tape:
            loss = ad.sum_all(ad.mul(p, p))
            tape.backward(loss)
        adam_step({"p": p}, state)
    assert np.abs(p.data).max() < 1e-2


def test_adam_steps_are_deterministic():
    def run():
        p = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
        state = OptimizerState(lr=0.01)
        for _ in range(3):
            p.zero_grad()
            with Tape() as tape:
                loss = ad.sum_all(ad.mul(p, p))
                tape.backward(loss)
            adam_step({"p": p}, state)
        return p.data.copy()

    np.testing.assert_array_equal(run(), run())


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 100, 0.001) == pytest.approx(0.001)
    assert cosine_lr(100, 100, 0.001) == pytest.approx(0.0, abs=1e-12)
    assert cosine_lr(50, 100, 0.001) == pytest.approx(0.0005)
    with pytest.raises(ConfigError):
        cosine_lr(1, 0, 0.001)


def test_param_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(9)
    params = {
        "layer0.W": Tensor(rng.normal(size=(4, 3)).astype(np.float32), requires_grad=True),
        "layer0.b": Tensor(rng.normal(size=(1, 3)).astype(np.float32), requires_grad=True),
        "bn.running_mean": Tensor(rng.normal(size=(1, 3)).astype(np.float32)),
    }
    path = tmp_path / "params.bin"
    save_params(path, params, header_extra={"note": {"k": 1}})
    loaded, header = load_params(path)
    assert header["note"] == {"k": 1}
    assert set(loaded) == set(params)
    for name in params:
        np.testing.assert_array_equal(loaded[name].data, params[name].data)
        assert loaded[name].requires_grad == params[name].requires_grad


def test_backward_requires_scalar():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    with Tape() as tape:
        y = ad.relu(x)
        with pytest.raises(ShapeError):
            tape.backward(y)
