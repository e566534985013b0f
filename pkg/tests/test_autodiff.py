import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmmqa import autodiff as ad
from mmmqa.autodiff import GRUParams, LrSchedule, OptimizerState, Tensor
from mmmqa.errors import NumericError, ShapeError, UsageError


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


# ---------------------------------------------------------------- matmul

def test_matmul_identity():
    X = np.random.default_rng(0).normal(size=(3, 3))
    assert np.array_equal(ad.matmul(np.eye(3), X).data, X)


def test_matmul_ones():
    assert np.array_equal(ad.matmul(np.ones((2, 3)), np.ones((3, 1))).data, [[3.0], [3.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(ad.matmul(a, b).data, naive_matmul(a, b), atol=1e-12, rtol=0)


def test_matmul_dimension_mismatch():
    with pytest.raises(ShapeError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_vector_dot():
    out = ad.matmul(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    assert out.shape == () and float(out.data) == 11.0


# ---------------------------------------------------------------- softmax

@pytest.mark.parametrize("v, want", [
    ([1.0, 1.0, 1.0], [1 / 3, 1 / 3, 1 / 3]),
    ([0.0, math.log(2.0)], [1 / 3, 2 / 3]),
    ([1000.0, 1000.0], [0.5, 0.5]),
])
def test_softmax_values(v, want):
    np.testing.assert_allclose(ad.softmax(np.array(v)).data, want, atol=1e-15)


def test_softmax_nan_raises():
    with pytest.raises(NumericError):
        ad.softmax(np.array([0.0, np.nan]))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)), st.floats(-1e3, 1e3))
def test_softmax_sums_to_one_and_is_shift_invariant(v, c):
    p = ad.softmax(v).data
    assert abs(p.sum() - 1.0) < 1e-9
    np.testing.assert_allclose(ad.softmax(v + c).data, p, atol=1e-9)


# ---------------------------------------------------------------- gru

def test_gru_zero_params_halves_state():
    s = np.array([0.4, -1.2, 3.0])
    out = ad.gru_cell(s, np.array([1.0, 2.0, -1.0]), GRUParams.zeros(3))
    np.testing.assert_allclose(out.data, 0.5 * s, atol=0)


def test_gru_closed_update_gate_keeps_state():
    p = GRUParams.zeros(3)
    p.b_z.data[:] = -1e6
    s = np.array([0.4, -1.2, 3.0])
    out = ad.gru_cell(s, np.array([1.0, 2.0, -1.0]), p)
    np.testing.assert_allclose(out.data, s, atol=1e-9)


def test_gru_two_dim_hand_case():
    rng = np.random.default_rng(5)
    vals = {n: rng.normal(size=(2,) if n.startswith("b") else (2, 2)) for n in ad.GRU_FIELDS}
    params = GRUParams(**{n: ad.parameter(v) for n, v in vals.items()})
    s, x = np.array([0.3, -0.7]), np.array([1.1, 0.2])

    def sig(t):
        return 1.0 / (1.0 + math.exp(-t))

    def row(W, v, i):
        return W[i, 0] * v[0] + W[i, 1] * v[1]

    z = [sig(row(vals["W_z"], x, i) + row(vals["U_z"], s, i) + vals["b_z"][i]) for i in range(2)]
    r = [sig(row(vals["W_r"], x, i) + row(vals["U_r"], s, i) + vals["b_r"][i]) for i in range(2)]
    rs = [r[0] * s[0], r[1] * s[1]]
    h = [math.tanh(row(vals["W_h"], x, i) + row(vals["U_h"], rs, i) + vals["b_h"][i]) for i in range(2)]
    want = [(1 - z[i]) * s[i] + z[i] * h[i] for i in range(2)]
    np.testing.assert_allclose(ad.gru_cell(s, x, params).data, want, atol=1e-14)


def test_gru_dimension_mismatch():
    with pytest.raises(ShapeError):
        ad.gru_cell(np.zeros(3), np.zeros(2), GRUParams.zeros(3))


# ---------------------------------------------------------------- backward

def test_backward_sum_of_squares():
    x = ad.parameter([1.0, 2.0])
    ad.sum_(ad.mul(x, x)).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_constant_gives_zero_grads():
    x = ad.parameter([1.0, 2.0])
    ad.add(ad.sum_(ad.mul(x, 0.0)), 3.0).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_backward_twice_raises():
    x = ad.parameter([1.0, 2.0])
    y = ad.sum_(ad.mul(x, x))
    y.backward()
    with pytest.raises(UsageError):
        y.backward()


def test_backward_non_scalar_raises():
    with pytest.raises(UsageError):
        ad.mul(ad.parameter([1.0, 2.0]), 2.0).backward()


def test_composite_graph_matches_finite_differences_tightly():
    rng = np.random.default_rng(3)
    W = ad.parameter(rng.normal(size=(4, 3)))
    x = ad.parameter(rng.normal(size=(3,)))
    target = rng.normal(size=4)

    def fn():
        p = ad.softmax(ad.tanh(ad.matmul(W, x)))
        return ad.sum_(ad.mul(p, target))

    fn().backward()
    # plain central differences carry O(eps^2) truncation of ~1e-8 here;
    # Richardson extrapolation of two step sizes cancels that term
    for p in (W, x):
        coarse, fine = ad.numeric_grad(fn, p, 2e-4), ad.numeric_grad(fn, p, 1e-4)
        oracle = (4.0 * fine - coarse) / 3.0
        assert ad.relative_error(p.grad, oracle).max() < 1e-8


def test_backward_visits_shared_node_once():
    x = ad.parameter([3.0])
    y = ad.mul(x, 2.0)
    ad.sum_(ad.add(y, y)).backward()
    np.testing.assert_array_equal(x.grad, [4.0])


# ---------------------------------------------------------------- grad_check

def test_grad_check_tanh_chain():
    x = ad.parameter(np.random.default_rng(2).normal(size=5))
    assert ad.grad_check(lambda: ad.sum_(ad.tanh(ad.tanh(ad.mul(x, 1.5)))), [x]) < 1e-6


def test_grad_check_detects_doubled_gradient():
    x = ad.parameter([0.5, -1.0, 2.0])

    def doubled():
        y = ad.sum_(ad.tanh(x))
        g = ad.make_op(y.data * 1.0, (y,), lambda g: (2.0 * g,), "double_grad")
        return g

    assert ad.grad_check(doubled, [x]) == pytest.approx(1 / 3, abs=1e-6)


def test_grad_check_zero_function():
    x = ad.parameter([1.0, 2.0])
    assert ad.grad_check(lambda: ad.sum_(ad.mul(x, 0.0)), [x]) == 0.0


# ---------------------------------------------------------------- adam

def test_adam_zero_grads_leave_params():
    p = [np.array([1.0, -2.0])]
    state = OptimizerState.for_params(p)
    ad.adam_step(p, [np.zeros(2)], state, 0.1)
    np.testing.assert_array_equal(p[0], [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_is_signed_lr():
    p = [np.array([1.0, -2.0, 0.5])]
    g = np.array([0.3, -4.0, 0.05])
    state = OptimizerState.for_params(p)
    lr = 0.01
    ad.adam_step(p, [g], state, lr)
    np.testing.assert_allclose(p[0] - np.array([1.0, -2.0, 0.5]), -lr * np.sign(g), atol=lr * 1e-6)


def test_adam_two_steps_match_scalar_oracle():
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.05
    theta, m, v = 0.7, 0.0, 0.0
    grads = [0.4, -1.3]
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    p = [np.array([0.7])]
    state = OptimizerState.for_params(p)
    for g in grads:
        ad.adam_step(p, [np.array([g])], state, lr)
    assert p[0][0] == pytest.approx(theta, abs=1e-15)
    assert state.step == 2


def test_adam_shape_mismatch():
    p = [np.zeros(2)]
    with pytest.raises(ShapeError):
        ad.adam_step(p, [np.zeros(3)], OptimizerState.for_params(p), 0.1)


def test_adam_is_bit_deterministic():
    rng = np.random.default_rng(9)
    p0, g = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    runs = []
    for _ in range(2):
        p = [p0.copy()]
        state = OptimizerState.for_params(p)
        for _ in range(3):
            ad.adam_step(p, [g], state, 1e-3)
        runs.append(p[0])
    assert np.array_equal(runs[0], runs[1])


# ---------------------------------------------------------------- lr schedule

@pytest.mark.parametrize("step, want", [(0, 0.0), (100, 1.0), (550, 0.5), (1000, 0.0)])
def test_lr_anchor_points(step, want):
    assert ad.lr_at(LrSchedule(1.0, 1000, 0.1), step) == want


def test_lr_past_end_raises():
    with pytest.raises(UsageError):
        ad.lr_at(LrSchedule(1.0, 1000, 0.1), 1001)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-6, 10.0), st.integers(20, 5000), st.floats(0.05, 0.5))
def test_lr_is_continuous_at_warmup_boundary(lr_max, T, w):
    sched = LrSchedule(lr_max, T, w)
    k = int(w * T)
    assert abs(ad.lr_at(sched, k - 1) - ad.lr_at(sched, k)) <= lr_max / (w * T) + 1e-12


# ---------------------------------------------------------------- clipping

def test_clip_halves_when_norm_twice_max():
    grads = [np.array([6.0, 0.0]), np.array([[0.0, 8.0]])]
    out, norm = ad.clip_global_norm(grads, 5.0)
    assert norm == 10.0
    np.testing.assert_array_equal(out[0], [3.0, 0.0])
    np.testing.assert_array_equal(out[1], [[0.0, 4.0]])


@pytest.mark.parametrize("max_norm", [5.0, None, 0.0])
def test_clip_leaves_small_or_disabled(max_norm):
    grads = [np.array([3.0, 0.0])]
    out, _ = ad.clip_global_norm(grads, max_norm)
    np.testing.assert_array_equal(out[0], grads[0])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 10), elements=st.floats(-1e3, 1e3)), st.floats(1e-3, 100.0))
def test_clip_bounds_norm_and_keeps_direction(g, max_norm):
    (out,), _ = ad.clip_global_norm([g], max_norm)
    assert np.linalg.norm(out) <= max_norm + 1e-9
    scale = np.linalg.norm(out) / np.linalg.norm(g) if np.linalg.norm(g) else 1.0
    assert 0.0 <= scale <= 1.0 + 1e-12
    np.testing.assert_allclose(out, scale * g, atol=1e-9)


# ---------------------------------------------------------------- tensor basics

def test_precision_switch():
    with ad.precision("f32"):
        assert Tensor([1.0]).dtype == np.float32
    assert Tensor([1.0]).dtype == np.float64


def test_dropout_eval_is_identity_and_train_is_seeded():
    x = ad.as_tensor(np.ones((4, 5)))
    assert ad.dropout(x, 0.1, False, None) is x
    a = ad.dropout(x, 0.5, True, np.random.default_rng(1)).data
    b = ad.dropout(x, 0.5, True, np.random.default_rng(1)).data
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 2.0}
