import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qatlab import numerics as nx
from qatlab.numerics import ConfigError, DataError, NumericsError, Tensor


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def weighted_sum(out, w):
    """Scalar probe sum(out * w) built from existing ops: linear against a 1-row weight."""
    flat = nx.reshape(out, (1, out.data.size))
    return nx.reshape(nx.linear(flat, Tensor(w.reshape(1, -1))), ())


# -- rmsnorm ---------------------------------------------------------------

def test_rmsnorm_unit_vector_fixed_point():
    out = nx.rmsnorm(Tensor(np.ones(4)), Tensor(np.ones(4)))
    np.testing.assert_allclose(out.data, np.ones(4), atol=1e-6)


def test_rmsnorm_constant_vector_scales_to_one():
    out = nx.rmsnorm(Tensor(np.full(4, 2.0)), Tensor(np.ones(4)))
    np.testing.assert_allclose(out.data, np.ones(4), atol=1e-6)


def test_rmsnorm_matches_direct_formula(rng):
    x = rng.standard_normal((3, 8))
    g = rng.standard_normal(8)
    want = x / np.sqrt(np.mean(x ** 2, axis=-1, keepdims=True) + 1e-6) * g
    np.testing.assert_allclose(nx.rmsnorm(Tensor(x), Tensor(g)).data, want, rtol=1e-12)


def test_rmsnorm_gradients_match_finite_differences(rng):
    x, g, w = rng.standard_normal(8), rng.standard_normal(8), rng.standard_normal(8)
    assert nx.grad_check(lambda t: weighted_sum(nx.rmsnorm(t, Tensor(g)), w), x) < 1e-3
    assert nx.grad_check(lambda t: weighted_sum(nx.rmsnorm(Tensor(x), t), w), g) < 1e-7


def test_rmsnorm_rejects_bad_gain():
    with pytest.raises(ConfigError):
        nx.rmsnorm(Tensor(np.ones(4)), Tensor(np.ones(3)))


# -- relu2 -----------------------------------------------------------------

def test_relu2_values():
    np.testing.assert_array_equal(nx.relu2(Tensor(np.array([-1.0, 0.0, 2.0]))).data, [0, 0, 4])
    np.testing.assert_array_equal(nx.relu2(Tensor(np.array([3.0]))).data, [9])


def test_relu2_gradient():
    x = t64([2.0, -1.0])
    nx.backward(weighted_sum(nx.relu2(x), np.ones(2)))
    np.testing.assert_allclose(x.grad, [4.0, 0.0])
    assert nx.grad_check(lambda t: weighted_sum(nx.relu2(t), np.ones(2)), np.array([2.0, -1.0])) < 1e-7


# -- rope ------------------------------------------------------------------

def test_rope_position_zero_is_identity(rng):
    x = rng.standard_normal((1, 3, 8))
    np.testing.assert_allclose(nx.rope_apply(Tensor(x)).data, x, atol=0)


def test_rope_angles_head_dim_4():
    ang = nx.rope_angles(2, 4, 10000.0)
    np.testing.assert_allclose(ang[1], [1.0, 0.01], rtol=1e-15)


def test_rope_matches_explicit_rotation(rng):
    seq, heads, hd = 5, 2, 6
    x = rng.standard_normal((seq, heads, hd))
    out = nx.rope_apply(Tensor(x)).data
    for p in range(seq):
        for i in range(hd // 2):
            theta = p * 10000.0 ** (-2 * i / hd)
            a, b = x[p, :, i], x[p, :, i + hd // 2]
            np.testing.assert_allclose(out[p, :, i], a * math.cos(theta) - b * math.sin(theta), atol=1e-12)
            np.testing.assert_allclose(out[p, :, i + hd // 2], a * math.sin(theta) + b * math.cos(theta), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (7, 2, 8), elements=st.floats(-10, 10)))
def test_rope_preserves_pair_norms(x):
    out = nx.rope_apply(Tensor(x)).data
    before = np.hypot(x[..., :4], x[..., 4:])
    after = np.hypot(out[..., :4], out[..., 4:])
    np.testing.assert_allclose(after, before, atol=1e-6)


def test_rope_gradient(rng):
    x, w = rng.standard_normal((4, 2, 6)), rng.standard_normal(48)
    assert nx.grad_check(lambda t: weighted_sum(nx.rope_apply(t), w), x) < 1e-7


def test_rope_odd_head_dim_rejected():
    with pytest.raises(ConfigError):
        nx.rope_apply(Tensor(np.ones((2, 1, 5))))


# -- attention -------------------------------------------------------------

def _reference_attention(q, k, v):
    S, H, D = q.shape
    G = H // k.shape[1]
    out = np.zeros_like(q)
    for h in range(H):
        s = q[:, h] @ k[:, h // G].T / math.sqrt(D)
        s = s + np.triu(np.full((S, S), -np.inf), 1)
        p = np.exp(s - s.max(1, keepdims=True))
        out[:, h] = (p / p.sum(1, keepdims=True)) @ v[:, h // G]
    return out


def test_attention_single_position_returns_values(rng):
    q, k, v = rng.standard_normal((1, 8, 4)), rng.standard_normal((1, 4, 4)), rng.standard_normal((1, 4, 4))
    out = nx.gqa_attention(Tensor(q), Tensor(k), Tensor(v)).data
    np.testing.assert_allclose(out, np.repeat(v, 2, axis=1), atol=1e-12)


def test_attention_matches_loop_reference(rng):
    q, k, v = rng.standard_normal((6, 4, 3)), rng.standard_normal((6, 2, 3)), rng.standard_normal((6, 2, 3))
    np.testing.assert_allclose(nx.gqa_attention(Tensor(q), Tensor(k), Tensor(v)).data,
                               _reference_attention(q, k, v), atol=1e-12)


def test_attention_weights_rows_sum_to_one_and_are_causal(rng):
    q, k = rng.standard_normal((2, 9, 8, 4)).astype(np.float32), rng.standard_normal((2, 9, 4, 4)).astype(np.float32)
    p = nx.causal_attention_weights(q, k)
    assert p.shape == (2, 4, 2, 9, 9)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-6)
    assert np.all(np.triu(np.ones((9, 9)), 1)[None, None, None] * p == 0)


@pytest.mark.parametrize("which", [0, 1, 2])
def test_attention_gradient_seq3(rng, which):
    args = [rng.standard_normal((3, 2, 4)), rng.standard_normal((3, 1, 4)), rng.standard_normal((3, 1, 4))]
    w = rng.standard_normal(24)

    def f(t):
        a = [Tensor(x) for x in args]
        a[which] = t
        return weighted_sum(nx.gqa_attention(*a), w)

    assert nx.grad_check(f, args[which]) < 1e-3


def test_attention_indivisible_heads():
    with pytest.raises(ConfigError):
        nx.gqa_attention(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((2, 2, 4))), Tensor(np.ones((2, 2, 4))))


# -- cross entropy ---------------------------------------------------------

def test_cross_entropy_uniform_is_log_vocab():
    loss = nx.cross_entropy_nats(Tensor(np.zeros((5, 256))), np.arange(5))
    assert float(loss.data) == pytest.approx(math.log(256), abs=1e-6)


def test_cross_entropy_vanishes_with_margin():
    losses = []
    for margin in (1.0, 10.0, 50.0):
        logits = np.zeros((2, 8))
        logits[[0, 1], [3, 5]] = margin
        losses.append(float(nx.cross_entropy_nats(Tensor(logits), np.array([3, 5])).data))
    assert losses[0] > losses[1] > losses[2] and losses[2] < 1e-15


def test_cross_entropy_matches_logsumexp_reference(rng):
    from scipy.special import logsumexp
    logits, targets = rng.standard_normal((4, 8)), rng.integers(0, 8, 4)
    want = np.mean(logsumexp(logits, axis=1) - logits[np.arange(4), targets])
    assert float(nx.cross_entropy_nats(Tensor(logits), targets).data) == pytest.approx(want, abs=1e-6)


def test_cross_entropy_large_logits_stay_finite():
    loss = nx.cross_entropy_nats(Tensor(np.array([[1e4, 0.0], [0.0, 1e4]])), np.array([0, 0]))
    assert np.isfinite(loss.data) and float(loss.data) == pytest.approx(5e3)


def test_cross_entropy_gradient(rng):
    logits, targets = rng.standard_normal((4, 8)), rng.integers(0, 8, 4)
    assert nx.grad_check(lambda t: nx.cross_entropy_nats(t, targets), logits) < 1e-6


def test_cross_entropy_bad_target():
    with pytest.raises(DataError):
        nx.cross_entropy_nats(Tensor(np.zeros((2, 4))), np.array([0, 4]))


# -- embedding / linear / scale -------------------------------------------

def test_embedding_gradient_accumulates_repeats(rng):
    table = rng.standard_normal((5, 3))
    ids = np.array([[1, 1, 4]])
    w = rng.standard_normal(9)
    assert nx.grad_check(lambda t: weighted_sum(nx.embedding(t, ids), w), table) < 1e-7


def test_embedding_out_of_range():
    with pytest.raises(DataError):
        nx.embedding(Tensor(np.zeros((4, 2))), np.array([4]))


def test_linear_and_scale_gradients(rng):
    x, w, s = rng.standard_normal((2, 3, 4)), rng.standard_normal((5, 4)), np.array(0.7)
    probe = rng.standard_normal(30)
    assert nx.grad_check(lambda t: weighted_sum(nx.linear(t, Tensor(w)), probe), x) < 1e-7
    assert nx.grad_check(lambda t: weighted_sum(nx.linear(Tensor(x), t), probe), w) < 1e-7
    assert nx.grad_check(lambda t: weighted_sum(nx.scale(Tensor(x), t), probe[:24]), s) < 1e-7


# -- graph and grad_check --------------------------------------------------

def test_graph_visits_each_node_once_with_shared_subexpressions():
    x = t64([1.0, 2.0])
    y = nx.relu2(x)
    z = nx.add(y, y)  # y is consumed twice
    graph = nx.backward(weighted_sum(z, np.ones(2)))
    assert graph.visits == len(graph.nodes)
    assert len({id(n) for n in graph.nodes}) == len(graph.nodes)
    for i, parents in enumerate(graph.parents):
        assert all(p < i for p in parents)
    np.testing.assert_allclose(x.grad, [4.0, 8.0])


def test_grad_check_sum_of_squares(rng):
    def sumsq(t):
        row = nx.reshape(t, (1, t.data.size))
        return nx.reshape(nx.linear(row, row), ())  # x . x, with t feeding both operands

    assert nx.grad_check(sumsq, rng.standard_normal(6), h=1e-5) < 1e-9


def test_grad_check_constant_function():
    assert nx.grad_check(lambda t: Tensor(np.array(3.0)), np.ones(3)) == 0.0


def test_grad_check_rejects_non_finite():
    with pytest.raises(NumericsError):
        nx.grad_check(lambda t: Tensor(np.array(np.inf)), np.ones(2))


def test_forward_backward_deterministic(rng):
    q, k, v = (rng.standard_normal(s).astype(np.float32) for s in [(2, 5, 4, 4), (2, 5, 2, 4), (2, 5, 2, 4)])
    grads = []
    for _ in range(2):
        ts = [Tensor(a, requires_grad=True) for a in (q, k, v)]
        out = nx.gqa_attention(*ts)
        nx.backward(weighted_sum(out, np.ones(out.data.size, np.float32)))
        grads.append([t.grad.tobytes() for t in ts] + [out.data.tobytes()])
    assert grads[0] == grads[1]
