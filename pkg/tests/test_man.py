import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmmqa import autodiff as ad
from mmmqa import gradsuite
from mmmqa.data.packing import Role
from mmmqa.errors import DegenerateInputError
from mmmqa.man import (FcnnClassifier, FcnnParameters, ManClassifier, ManParameters, attend, build_classifier,
                       build_memories, fcnn_logit, final_logit, init_state, man_forward, reasoning_step)

S, P, Q, PAD = Role.SPECIAL, Role.PASSAGE, Role.QO, Role.PAD


# ---------------------------------------------------------------- scalar oracles

def softmax_list(v):
    m = max(v)
    e = [math.exp(t - m) for t in v]
    return [t / sum(e) for t in e]


def sig(t):
    return 1.0 / (1.0 + math.exp(-t))


def matvec(W, v):
    return [sum(W[i][j] * v[j] for j in range(len(v))) for i in range(len(W))]


def gru_oracle(s, x, g):
    d = len(s)
    z = [sig(a + b + c) for a, b, c in zip(matvec(g["W_z"], x), matvec(g["U_z"], s), g["b_z"])]
    r = [sig(a + b + c) for a, b, c in zip(matvec(g["W_r"], x), matvec(g["U_r"], s), g["b_r"])]
    rs = [r[i] * s[i] for i in range(d)]
    h = [math.tanh(a + b + c) for a, b, c in zip(matvec(g["W_h"], x), matvec(g["U_h"], rs), g["b_h"])]
    return [(1 - z[i]) * s[i] + z[i] * h[i] for i in range(d)]


def columns(M):
    return [[M[r][c] for r in range(len(M))] for c in range(len(M[0]))]


def weighted(cols, w):
    return [sum(w[i] * cols[i][k] for i in range(len(cols))) for k in range(len(cols[0]))]


def init_oracle(HP, w1):
    cols = columns(HP)
    alpha = softmax_list([sum(a * b for a, b in zip(w1, c)) for c in cols])
    return weighted(cols, alpha), alpha


def attend_oracle(s, HQ, w2):
    cols = columns(HQ)
    beta = softmax_list([sum(a * b for a, b in zip(w2, s + c)) for c in cols])
    return weighted(cols, beta), beta


def logit_oracle(s, x, w3):
    feat = s + x + [abs(a - b) for a, b in zip(s, x)] + [a * b for a, b in zip(s, x)]
    return sum(a * b for a, b in zip(w3, feat))


def fixed_params(d, steps, seed=0):
    rng = np.random.default_rng(seed)
    params = ManParameters.init(d, steps, rng, std=0.7)
    raw = {n: getattr(params.gru, n).data.tolist() for n in ad.GRU_FIELDS}
    return params, raw


# ---------------------------------------------------------------- memories

def test_build_memories_selects_roles_in_order():
    H = ad.Tensor(np.arange(16.0).reshape(2, 8))
    mem = build_memories(H, [S, P, P, S, Q, Q, Q, S])
    np.testing.assert_array_equal(mem.H_P.data, H.data[:, [1, 2]])
    np.testing.assert_array_equal(mem.H_QO.data, H.data[:, [4, 5, 6]])


def test_build_memories_needs_both_memories():
    with pytest.raises(DegenerateInputError):
        build_memories(ad.Tensor(np.ones((2, 3))), [P, P, P])


def test_build_memories_ignores_pad_tail_order():
    rng = np.random.default_rng(0)
    H = rng.normal(size=(3, 8))
    roles = [S, P, S, Q, S, PAD, PAD, PAD]
    H2 = H.copy()
    H2[:, 5:] = H[:, [7, 5, 6]]
    a, b = build_memories(ad.Tensor(H), roles), build_memories(ad.Tensor(H2), roles)
    assert np.array_equal(a.H_P.data, b.H_P.data) and np.array_equal(a.H_QO.data, b.H_QO.data)


# ---------------------------------------------------------------- init state

def test_init_state_single_column():
    HP = ad.Tensor(np.array([[1.5], [-2.0]]))
    s0, alpha = init_state(HP, ad.Tensor(np.array([3.0, 1.0])))
    np.testing.assert_array_equal(s0.data, [1.5, -2.0])
    np.testing.assert_array_equal(alpha.data, [1.0])


def test_init_state_zero_weights_is_mean():
    HP = np.random.default_rng(1).normal(size=(3, 4))
    s0, alpha = init_state(ad.Tensor(HP), ad.Tensor(np.zeros(3)))
    np.testing.assert_allclose(s0.data, HP.mean(axis=1), atol=1e-15)
    np.testing.assert_allclose(alpha.data, 0.25, atol=1e-15)


def test_init_state_hand_case():
    HP = [[0.5, -1.0, 2.0], [1.0, 0.3, -0.4]]
    w1 = [0.7, -1.2]
    s0, alpha = init_state(ad.Tensor(np.array(HP)), ad.Tensor(np.array(w1)))
    want_s, want_a = init_oracle(HP, w1)
    np.testing.assert_allclose(s0.data, want_s, atol=1e-15)
    np.testing.assert_allclose(alpha.data, want_a, atol=1e-15)


# ---------------------------------------------------------------- reasoning step

def test_attend_single_column_ignores_w2():
    HQ = ad.Tensor(np.array([[0.2], [0.9]]))
    x, beta = attend(ad.Tensor(np.array([1.0, 2.0])), HQ, ad.Tensor(np.array([5.0, -3.0, 2.0, 7.0])))
    np.testing.assert_array_equal(x.data, [0.2, 0.9])
    np.testing.assert_array_equal(beta.data, [1.0])


def test_attend_zero_w2_is_mean():
    HQ = np.random.default_rng(2).normal(size=(2, 5))
    x, beta = attend(ad.Tensor(np.ones(2)), ad.Tensor(HQ), ad.Tensor(np.zeros(4)))
    np.testing.assert_allclose(x.data, HQ.mean(axis=1), atol=1e-15)
    np.testing.assert_allclose(beta.data, 0.2, atol=1e-15)


def test_reasoning_step_hand_case():
    params, raw = fixed_params(2, 2)
    s = [0.4, -0.3]
    HQ = [[1.0, -0.5], [0.2, 0.8]]
    s1, x1, beta = reasoning_step(ad.Tensor(np.array(s)), ad.Tensor(np.array(HQ)), params)
    want_x, want_b = attend_oracle(s, HQ, params.w2.data.tolist())
    np.testing.assert_allclose(x1.data, want_x, atol=1e-15)
    np.testing.assert_allclose(beta.data, want_b, atol=1e-15)
    np.testing.assert_allclose(s1.data, gru_oracle(s, want_x, raw), atol=1e-14)


# ---------------------------------------------------------------- final logit and fcnn

def test_final_logit_zero_weights():
    assert float(final_logit(ad.Tensor(np.ones(3)), ad.Tensor(np.arange(3.0)), ad.Tensor(np.zeros(12))).data) == 0.0


def test_final_logit_difference_block_vanishes_when_s_equals_x():
    s = ad.Tensor(np.array([0.3, -1.0]))
    w3 = np.zeros(8)
    w3[4:6] = 1e6
    assert float(final_logit(s, s, ad.Tensor(w3)).data) == 0.0


def test_final_logit_hand_case():
    s, x, w3 = [0.4, -1.1], [0.9, 0.5], [0.1, -0.2, 0.3, 0.7, -0.5, 0.25, 1.5, -0.8]
    got = float(final_logit(ad.Tensor(np.array(s)), ad.Tensor(np.array(x)), ad.Tensor(np.array(w3))).data)
    assert got == pytest.approx(logit_oracle(s, x, w3), abs=1e-15)


def fcnn(d, hw, hb, ow, ob):
    return FcnnParameters(ad.parameter(np.array(hw, dtype=float).reshape(d, d)), ad.parameter(np.array(hb, float)),
                          ad.parameter(np.array(ow, float)), ad.parameter(np.array(ob, float)))


def test_fcnn_zero_params():
    params = fcnn(2, [0] * 4, [0, 0], [0, 0], 0.0)
    assert float(fcnn_logit(ad.Tensor(np.array([3.0, -2.0])), params).data) == 0.0


def test_fcnn_zero_input_gives_out_bias():
    params = fcnn(2, [1, 2, 3, 4], [0, 0], [5, 6], 0.75)
    assert float(fcnn_logit(ad.Tensor(np.zeros(2)), params).data) == 0.75


def test_fcnn_hand_case():
    hw, hb, ow, ob = [[0.5, -1.0], [0.3, 0.8]], [0.1, -0.2], [1.5, -0.7], 0.05
    x = [0.6, -0.4]
    hidden = [math.tanh(v + b) for v, b in zip(matvec(hw, x), hb)]
    want = ob + sum(a * b for a, b in zip(ow, hidden))
    got = float(fcnn_logit(ad.Tensor(np.array(x)), fcnn(2, sum(hw, []), hb, ow, ob)).data)
    assert got == pytest.approx(want, abs=1e-15)


# ---------------------------------------------------------------- man_forward

ROLES = [S, P, P, S, Q, Q, S]


def test_k0_equals_fcnn_bitwise():
    rng = np.random.default_rng(3)
    H = rng.normal(size=(1, 7, 4))
    roles = np.array([ROLES])
    head = build_classifier("man", 4, 0, np.random.default_rng(9), dropout=0.0, std=0.5)
    assert isinstance(head, FcnnClassifier)
    ref = fcnn_logit(ad.Tensor(H[0, 0]), head.params)
    assert np.array_equal(head.logits(ad.Tensor(H), roles).data, np.reshape(ref.data, (1,)))
    single, trace = man_forward(ad.Tensor(H[0].T), ROLES, head.params)
    assert trace is None and np.array_equal(single.data, ref.data)


def test_logit_is_linear_in_w3():
    params, _ = fixed_params(3, 2, seed=4)
    H = ad.Tensor(np.random.default_rng(5).normal(size=(3, 7)))
    base = float(man_forward(H, ROLES, params)[0].data)
    params.w3.data *= 2.5
    assert float(man_forward(H, ROLES, params)[0].data) == pytest.approx(2.5 * base, rel=1e-14)


def test_k2_end_to_end_hand_case():
    params, raw = fixed_params(2, 2, seed=6)
    H = np.random.default_rng(7).normal(size=(2, 7))
    HP = H[:, [1, 2]].tolist()
    HQ = H[:, [4, 5]].tolist()
    s0, _ = init_oracle(HP, params.w1.data.tolist())
    x1, _ = attend_oracle(s0, HQ, params.w2.data.tolist())
    s1 = gru_oracle(s0, x1, raw)
    want = logit_oracle(s1, x1, params.w3.data.tolist())
    got, trace = man_forward(ad.Tensor(H), ROLES, params)
    assert float(got.data) == pytest.approx(want, abs=1e-14)
    assert len(trace.states) == 1


def test_k1_reads_once_without_update():
    params, _ = fixed_params(2, 1, seed=8)
    H = np.random.default_rng(9).normal(size=(2, 7))
    s0, _ = init_oracle(H[:, [1, 2]].tolist(), params.w1.data.tolist())
    x0, _ = attend_oracle(s0, H[:, [4, 5]].tolist(), params.w2.data.tolist())
    got, trace = man_forward(ad.Tensor(H), ROLES, params)
    assert float(got.data) == pytest.approx(logit_oracle(s0, x0, params.w3.data.tolist()), abs=1e-14)
    np.testing.assert_allclose(trace.states[0], s0, atol=1e-15)


@pytest.mark.parametrize("K, entries", [(1, 1), (2, 1), (3, 2), (5, 4)])
def test_trace_lengths(K, entries):
    params, _ = fixed_params(3, K)
    _, trace = man_forward(ad.Tensor(np.random.default_rng(K).normal(size=(3, 7))), ROLES, params)
    assert len(trace.betas) == len(trace.xs) == len(trace.states) == entries


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.floats(0.01, 20.0))
def test_attention_weights_and_convex_hull(seed, K, scale):
    rng = np.random.default_rng(seed)
    params = ManParameters.init(3, K, rng, std=scale)
    H = rng.normal(scale=scale, size=(3, 7))
    logit, trace = man_forward(ad.Tensor(H), ROLES, params)
    assert np.isfinite(logit.data).all()
    for w in [trace.alpha] + trace.betas:
        assert abs(w.sum() - 1.0) < 1e-9 and (w >= 0).all() and (w <= 1).all()
    s0, _ = init_state(ad.Tensor(H[:, [1, 2]]), params.w1)
    HP = H[:, [1, 2]]
    assert (HP.min(axis=1) - 1e-12 <= s0.data).all() and (s0.data <= HP.max(axis=1) + 1e-12).all()


@pytest.mark.parametrize("K", [1, 2, 5])
def test_batched_head_matches_per_sequence(K):
    rng = np.random.default_rng(K)
    params = ManParameters.init(4, K, rng, std=0.5)
    head = ManClassifier(params, dropout=0.0)
    H = rng.normal(size=(2, 8, 4))
    roles = np.array([[S, P, P, P, S, Q, S, PAD], [S, P, S, Q, Q, Q, S, PAD]])
    batched = head.logits(ad.Tensor(H), roles).data
    for b in range(2):
        single = float(man_forward(ad.Tensor(H[b].T), roles[b], params)[0].data)
        assert batched[b] == pytest.approx(single, abs=1e-12)


def test_zero_gradient_coordinates_really_vanish():
    # analytic side is exactly zero; the numeric side sits at the rounding floor
    assert gradsuite.zero_gradient_coordinates(0) < 1e-9


@pytest.mark.parametrize("K", [1, 2, 5])
def test_man_gradients_match_finite_differences(K):
    with ad.precision("f64"):
        case = gradsuite.man_case(K, 0)
    assert case.error < gradsuite.TOLERANCE, case


def test_fcnn_gradients_match_finite_differences():
    with ad.precision("f64"):
        assert gradsuite.fcnn_case(0).error < gradsuite.TOLERANCE
