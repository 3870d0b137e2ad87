import math

import numpy as np
import pytest

from gfscma.neural import functional as F
from gfscma.neural.engine import Parameter, Tensor, no_grad
from gfscma.neural.gradcheck import gradcheck, relative_error
from gfscma.neural.optim import Adam, adam_step
from gfscma.verify import LAYER_TOL, grad_suite


def P(rng, *shape, name=""):
    return Parameter(rng.standard_normal(shape), name=name)


def probe(y, rng):
    """Scalar loss with a non-trivial gradient for every output entry."""
    R = rng.standard_normal(y.shape)
    return lambda t: F.bce_loss(F.sigmoid(F.mul(t, R)), (R > 0).astype(np.float64))


# ---------------------------------------------------------------- engine


def test_gradients_accumulate_over_shared_use():
    x = Parameter(np.array([2.0, -3.0]), "x")
    y = F.add(F.mul(x, x), F.scale(x, 3.0))  # x^2 + 3x
    F.reshape(y, (1, 2)).backward(np.ones((1, 2)))
    np.testing.assert_allclose(x.grad, 2 * x.data + 3)


def test_backward_needs_scalar():
    x = Parameter(np.ones(3))
    with pytest.raises(ValueError, match="scalar"):
        F.scale(x, 2.0).backward()


def test_no_grad_records_nothing():
    x = Parameter(np.ones(3))
    with no_grad():
        y = F.scale(x, 2.0)
    assert not y.requires_grad and y._parents == ()


def test_operator_sugar():
    a = Parameter(np.array([1.0, 2.0]))
    b = Parameter(np.array([3.0, 5.0]))
    out = (a * b - a + 1.0)
    np.testing.assert_allclose(out.data, [3.0, 9.0])
    F.reshape(out, (2,)).backward(np.ones(2))
    np.testing.assert_allclose(a.grad, b.data - 1)
    np.testing.assert_allclose(b.grad, a.data)


# ---------------------------------------------------------------- dense / conv


def test_dense_identity_and_scalar():
    x = Tensor(np.array([[1.0, -2.0, 3.0]]))
    y = F.dense(x, Parameter(np.eye(3)), Parameter(np.zeros(3)))
    np.testing.assert_array_equal(y.data, x.data)
    y = F.dense(Tensor(np.array([[4.0]])), Parameter(np.array([[2.0]])), Parameter(np.array([3.0])))
    np.testing.assert_array_equal(y.data, [[11.0]])


def test_dense_shape_errors():
    with pytest.raises(ValueError, match="features"):
        F.dense(Tensor(np.ones((2, 3))), Parameter(np.ones((4, 2))))
    with pytest.raises(ValueError, match="bias"):
        F.dense(Tensor(np.ones((2, 3))), Parameter(np.ones((4, 3))), Parameter(np.ones(3)))


def test_dense_gradcheck():
    rng = np.random.default_rng(0)
    x, W, b = P(rng, 4, 5, name="x"), P(rng, 3, 5, name="W"), P(rng, 3, name="b")
    loss = probe(np.zeros((4, 3)), rng)
    rep = gradcheck(lambda: loss(F.dense(x, W, b)), [x, W, b], 1e-6)
    assert rep.passed, rep.summary()


def test_conv_one_hot_and_identity():
    x = Tensor(np.arange(8.0).reshape(1, 8))
    k = np.zeros((1, 8))
    k[0, 5] = 1
    np.testing.assert_array_equal(F.conv1d_full(x, Parameter(k)).data, [[5.0]])
    np.testing.assert_array_equal(F.conv1d_full(x, Parameter(np.eye(8)), Parameter(np.zeros(8))).data, x.data)


def test_conv_shares_kernels_over_positions():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 16, 8))
    K = Parameter(rng.standard_normal((5, 8)))
    y = F.conv1d_full(Tensor(x), K).data
    for i in range(16):
        np.testing.assert_allclose(y[:, i], x[:, i] @ K.data.T)


def test_conv_size_mismatch():
    with pytest.raises(ValueError, match="kernel size"):
        F.conv1d_full(Tensor(np.ones((2, 8))), Parameter(np.ones((3, 7))))


def test_conv_gradcheck():
    rng = np.random.default_rng(2)
    x, K, b = P(rng, 3, 4, 8, name="x"), P(rng, 6, 8, name="K"), P(rng, 6, name="b")
    loss = probe(np.zeros((3, 4, 6)), rng)
    assert gradcheck(lambda: loss(F.conv1d_full(x, K, b)), [x, K, b], 1e-6).passed


# ---------------------------------------------------------------- batchnorm


def _bn_state(C):
    return {"running_mean": np.zeros(C), "running_var": np.ones(C)}


def test_batchnorm_standardized_input_passthrough():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1000, 4))
    x = (x - x.mean(0)) / x.std(0)
    y = F.batchnorm(Tensor(x), Parameter(np.ones(4)), Parameter(np.zeros(4)), _bn_state(4), True)
    np.testing.assert_allclose(y.data, x / np.sqrt(1 + 1e-5), rtol=1e-12)
    np.testing.assert_allclose(y.data, x, atol=1e-4)


def test_batchnorm_constant_batch_gives_beta():
    beta = np.array([0.3, -1.0])
    y = F.batchnorm(Tensor(np.full((5, 2), 7.0)), Parameter(np.array([2.0, 3.0])), Parameter(beta),
                    _bn_state(2), True)
    np.testing.assert_allclose(y.data, np.broadcast_to(beta, (5, 2)))


def test_batchnorm_running_stats_and_inference():
    rng = np.random.default_rng(4)
    st = _bn_state(3)
    x = rng.normal(2.0, 3.0, (64, 3))
    F.batchnorm(Tensor(x), Parameter(np.ones(3)), Parameter(np.zeros(3)), st, True)
    np.testing.assert_allclose(st["running_mean"], 0.1 * x.mean(0))
    np.testing.assert_allclose(st["running_var"], 0.9 + 0.1 * x.var(0))
    y = F.batchnorm(Tensor(x), Parameter(np.full(3, 2.0)), Parameter(np.ones(3)), st, False)
    np.testing.assert_allclose(y.data, 2 * (x - st["running_mean"]) / np.sqrt(st["running_var"] + 1e-5) + 1)


def test_batchnorm_needs_two_samples():
    with pytest.raises(ValueError, match="at least 2"):
        F.batchnorm(Tensor(np.ones((1, 3))), Parameter(np.ones(3)), Parameter(np.zeros(3)), _bn_state(3), True)


def test_batchnorm_gradcheck_through_batch_statistics():
    rng = np.random.default_rng(5)
    x = P(rng, 8, 3, 4, name="x")
    g = Parameter(1 + 0.2 * rng.standard_normal(4), "gamma")
    b = P(rng, 4, name="beta")
    loss = probe(np.zeros((8, 3, 4)), rng)
    rep = gradcheck(lambda: loss(F.batchnorm(x, g, b, _bn_state(4), True)), [x, g, b], 1e-5)
    assert rep.passed, rep.summary()


# ---------------------------------------------------------------- activations


def test_activation_values():
    z = Tensor(np.array([0.0]))
    assert F.sigmoid(z).data[0] == 0.5
    assert F.tanh(z).data[0] == 0.0
    assert F.relu(Tensor(np.array([-2.5]))).data[0] == 0.0
    with np.errstate(over="raise"):
        big = Tensor(np.array([1e4, -1e4, 800.0]))
        np.testing.assert_allclose(F.tanh(big).data, [1, -1, 1], atol=1e-6)
        s = F.sigmoid(big).data
    assert s[0] == 1.0 and s[1] == 0.0


@pytest.mark.parametrize("op", [F.relu, F.sigmoid, F.tanh])
def test_activation_gradcheck(op):
    rng = np.random.default_rng(6)
    x = Parameter(rng.standard_normal((5, 6)) + 0.05, "x")
    loss = probe(np.zeros((5, 6)), rng)
    assert gradcheck(lambda: loss(op(x)), [x], 1e-6).passed


# ---------------------------------------------------------------- LSTM


def _cell(H, D, fill=None, rng=None):
    out = {}
    for k in "WUb":
        for g in F.GATES:
            shape = (H, D) if k == "W" else (H, H) if k == "U" else (H,)
            val = np.full(shape, fill) if fill is not None else rng.standard_normal(shape) * 0.5
            out[f"{k}_{g}"] = Parameter(val, f"{k}_{g}")
    return out


def test_lstm_zero_params():
    p = _cell(4, 3, fill=0.0)
    o, c = F.lstm_cell(Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))), p)
    np.testing.assert_array_equal(c.data, 0.0)
    np.testing.assert_array_equal(o.data, 0.0)
    o2, c2 = F.lstm_cell(Tensor(np.ones((2, 3))), None, None, p)
    np.testing.assert_array_equal(o2.data, o.data)


def test_lstm_perfect_memory():
    p = _cell(4, 3, fill=0.0)
    p["b_f"].data[:] = 50.0   # forget gate -> 1
    p["b_i"].data[:] = -50.0  # input gate -> 0
    c_prev = np.array([[0.3, -0.7, 1.5, 0.0]])
    _, c = F.lstm_cell(Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 4))), Tensor(c_prev), p)
    np.testing.assert_allclose(c.data, c_prev, atol=1e-12)


def test_lstm_matches_reference_equations():
    rng = np.random.default_rng(7)
    p = _cell(5, 3, rng=rng)
    z, o0, c0 = rng.standard_normal((2, 3)), rng.standard_normal((2, 5)), rng.standard_normal((2, 5))
    o, c = F.lstm_cell(Tensor(z), Tensor(o0), Tensor(c0), p)

    def sg(v):
        return 1 / (1 + np.exp(-v))

    def gate(x):
        return z @ p[f"W_{x}"].data.T + o0 @ p[f"U_{x}"].data.T + p[f"b_{x}"].data

    c_ref = sg(gate("f")) * c0 + sg(gate("i")) * np.tanh(gate("c"))
    np.testing.assert_allclose(c.data, c_ref, rtol=1e-12)
    np.testing.assert_allclose(o.data, sg(gate("o")) * np.tanh(c_ref), rtol=1e-12)


def test_lstm_shape_error():
    p = _cell(4, 3, fill=0.1)
    with pytest.raises(ValueError):
        F.lstm_cell(Tensor(np.ones((2, 5))), None, None, p)


def test_lstm_three_chained_cells_gradcheck():
    rng = np.random.default_rng(8)
    cells = [_cell(4, 3, rng=rng) for _ in range(3)]
    z = P(rng, 2, 3, name="z")
    loss = probe(np.zeros((2, 4)), rng)

    def run():
        o = c = None
        for p in cells:
            o, c = F.lstm_cell(z, o, c, p)
        return loss(o)

    params = [z] + [v for p in cells for v in p.values()]
    rep = gradcheck(run, params, 1e-5)
    assert rep.passed, rep.summary()


# ---------------------------------------------------------------- BCE


def test_bce_exact_predictions():
    t = np.array([[1.0, 0.0, 1.0]])
    loss = F.bce_loss(Tensor(t.copy()), t)
    assert float(loss.data) == pytest.approx(-3 * math.log(1 - 1e-7), rel=1e-6)
    assert float(loss.data) < 1e-6


def test_bce_half_gives_log2_per_output():
    t = (np.random.default_rng(9).random((10, 42)) < 0.3).astype(float)
    loss = F.bce_loss(Tensor(np.full((10, 42), 0.5)), t)
    assert float(loss.data) == pytest.approx(42 * math.log(2), rel=1e-12)


def test_bce_rejects_soft_targets():
    with pytest.raises(ValueError, match="0 or 1"):
        F.bce_loss(Tensor(np.full((1, 2), 0.5)), np.array([[0.5, 1.0]]))


def test_bce_gradcheck():
    rng = np.random.default_rng(10)
    q = Parameter(rng.uniform(0.05, 0.95, (4, 6)), "q")
    t = (rng.random((4, 6)) < 0.5).astype(float)
    assert gradcheck(lambda: F.bce_loss(q, t), [q], 1e-6).passed


def test_bce_clamped_gradient_is_zero():
    q = Parameter(np.array([[0.0, 1.0, 0.5]]), "q")
    F.bce_loss(q, np.array([[1.0, 0.0, 1.0]])).backward()
    assert q.grad[0, 0] == 0 and q.grad[0, 1] == 0 and q.grad[0, 2] != 0


# ---------------------------------------------------------------- Adam


def test_adam_first_step_closed_form():
    p = Parameter(np.array([1.0]))
    opt = Adam([p], lr=0.01)
    opt.step([np.array([1.0])])
    # m_hat = 1, v_hat = 1 -> update lr / (1 + eps)
    assert p.data[0] == pytest.approx(1.0 - 0.01 / (1 + 1e-8), abs=1e-15)
    q = Parameter(np.array([1.0]))
    Adam([q], lr=0.01).step([np.array([-250.0])])
    assert q.data[0] == pytest.approx(1.01, abs=1e-12)


def test_adam_zero_gradient_is_noop():
    p = Parameter(np.array([0.4, -2.0]))
    opt = Adam([p], lr=0.1)
    for _ in range(3):
        opt.step([np.zeros(2)])
    np.testing.assert_array_equal(p.data, [0.4, -2.0])


def test_adam_deterministic_and_functional_form():
    rng = np.random.default_rng(11)
    grads = [rng.standard_normal(3) for _ in range(20)]
    a, b = Parameter(np.ones(3)), Parameter(np.ones(3))
    opt, state = Adam([a], lr=0.05), None
    for g in grads:
        opt.step([g])
        state = adam_step([b], [g], state, 0.05)
    assert a.data.tobytes() == b.data.tobytes()
    assert state.t == 20


def test_adam_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        Adam([Parameter(np.ones(3))]).step([np.ones(2)])


def test_bce_decreases_monotonically_on_separable_toy():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((200, 2))
    t = (x[:, :1] + 0.5 * x[:, 1:] > 0).astype(float)
    W, b = Parameter(rng.standard_normal((1, 2)) * 0.1, "W"), Parameter(np.zeros(1), "b")
    opt = Adam([W, b], lr=0.01)
    losses = []
    for _ in range(100):
        opt.zero_grad()
        loss = F.bce_loss(F.sigmoid(F.dense(Tensor(x), W, b)), t)
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
    assert all(l >= 0 for l in losses)
    assert all(b2 < a for a, b2 in zip(losses, losses[1:]))


# ---------------------------------------------------------------- gradcheck harness


def test_relative_error_definition():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.0])) == 0.0
    assert relative_error(np.array([1.0]), np.array([-1.0])) == 1.0


def test_gradcheck_detects_wrong_rule():
    x = Parameter(np.array([0.3, -1.2]), "x")

    def broken():
        return F.bce_loss(F.sigmoid(
            Tensor._wrap_wrong(x) if hasattr(Tensor, "_wrap_wrong") else _wrong_square(x)), np.array([1.0, 0.0]))

    rep = gradcheck(broken, [x], 1e-6)
    assert not rep.passed and "FAIL" in rep.summary()


def _wrong_square(x):
    from gfscma.neural.engine import accumulate, record

    return record(x.data ** 2, (x,), lambda g: accumulate(x, g * x.data))  # should be 2x


def test_gradcheck_requires_float64():
    x = Parameter(np.ones(2, np.float32))
    with pytest.raises(TypeError, match="float64"):
        gradcheck(lambda: F.scale(x, 1.0), [x], 1e-6)


def test_layer_suite_all_below_tolerance():
    rows = grad_suite(seed=3)
    bad = [r for r in rows if not r.passed]
    assert not bad, [r.line() for r in bad]
    assert all(r.value < LAYER_TOL for r in rows if r.name != "UAEN->AUDN network")


def test_no_nan_over_many_random_forward_passes():
    """10^6 random rows (including extreme magnitudes) through sigmoid/tanh/BCE."""
    rng = np.random.default_rng(13)
    x = rng.standard_normal((1_000_000, 4)) * rng.choice([1, 1e3, 1e6], size=(1_000_000, 1))
    W = Parameter(rng.standard_normal((3, 4)), "W")
    h = F.tanh(F.dense(Tensor(x), W))
    q = F.sigmoid(F.dense(Tensor(x), W))
    loss = F.bce_loss(q, (rng.random(q.shape) < 0.5).astype(float))
    assert np.all(np.isfinite(h.data)) and np.all(np.isfinite(q.data))
    assert np.isfinite(float(loss.data))
    loss.backward()
    assert np.all(np.isfinite(W.grad))
