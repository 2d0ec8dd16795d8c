import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from fusionsearch.ops import (
    ConcatFC,
    LinearGLU,
    PrimitiveOpKind,
    attention_op,
    concat_fc_op,
    linear_glu_op,
    make_op,
    op_param_count,
    sum_op,
    zero_op,
)
from oracles import central_difference, naive_attention, naive_concat_fc, naive_linear_glu, rel_err

D = torch.float64


def r(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=D)


def test_pool_order_is_stable():
    assert [k.name for k in PrimitiveOpKind] == ["Zero", "Sum", "Attention", "LinearGLU", "ConcatFC"]


def test_zero_op():
    x, y = torch.ones(1, 2, 2, dtype=D), torch.ones(1, 2, 2, dtype=D)
    assert torch.equal(zero_op(x, y), torch.zeros(1, 2, 2, dtype=D))
    # constant output: not attached to the graph of x at all
    x = r(2, 3, 4).requires_grad_()
    assert not zero_op(x, r(2, 3, 4, seed=1)).requires_grad


def test_sum_op():
    x = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]], dtype=D)
    y = torch.tensor([[[5.0, 6.0], [7.0, 8.0]]], dtype=D)
    assert torch.equal(sum_op(x, y), torch.tensor([[[6.0, 8.0], [10.0, 12.0]]], dtype=D))
    assert torch.equal(sum_op(x, torch.zeros_like(x)), x)
    a, b = r(3, 4, 5), r(3, 4, 5, seed=1)
    assert torch.equal(sum_op(a, b), sum_op(b, a))


@pytest.mark.parametrize("op", [zero_op, sum_op, attention_op])
def test_shape_mismatch_rejected(op):
    with pytest.raises(ValueError):
        op(r(1, 2, 3), r(1, 2, 4))


def test_attention_singleton_sequence_returns_y():
    x, y = r(3, 4, 1), r(3, 4, 1, seed=1)
    assert torch.allclose(attention_op(x, y), y, atol=0, rtol=0)


def test_attention_zero_query_is_uniform():
    y = r(2, 3, 5)
    out = attention_op(torch.zeros_like(y), y)
    assert torch.allclose(out, y.mean(dim=-1, keepdim=True).expand_as(y), atol=1e-12)


def test_attention_hand_computed():
    x = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]], dtype=D)
    y = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]], dtype=D)
    # scores [[1, 2], [3, 4]] / sqrt(2); each row has gap 1/sqrt(2) -> weights (0.33024, 0.66976)
    expected = torch.tensor([[[1.6697615493266569, 1.6697615493266569],
                              [3.669761549326657, 3.669761549326657]]], dtype=D)
    assert torch.allclose(attention_op(x, y), expected, atol=1e-6)


def test_attention_matches_loop_reference():
    x, y = r(2, 3, 4), r(2, 3, 4, seed=1)
    assert np.allclose(attention_op(x, y).numpy(), naive_attention(x, y), atol=1e-12)


def test_attention_overflow_raises():
    x = torch.full((1, 2, 3), 1e200, dtype=D)
    with pytest.raises(FloatingPointError):
        attention_op(x, x)


def test_linear_glu_cases():
    x, y = r(2, 3, 4), r(2, 3, 4, seed=1)
    eye, zero = torch.eye(3, dtype=D), torch.zeros(3, 3, dtype=D)
    assert torch.allclose(linear_glu_op(x, y, eye, zero), 0.5 * x)
    w1, w2 = r(3, 3, seed=2), r(3, 3, seed=3)
    assert torch.equal(linear_glu_op(torch.zeros_like(x), y, w1, w2), torch.zeros_like(x))
    x, y = r(1, 3, 2, seed=4), r(1, 3, 2, seed=5)
    assert np.allclose(linear_glu_op(x, y, w1, w2).numpy(), naive_linear_glu(x, y, w1, w2), atol=1e-12)
    with pytest.raises(ValueError):
        linear_glu_op(x, y, r(2, 3), w2)


def test_concat_fc_cases():
    c = 2
    x, y = r(1, c, 3), r(1, c, 3, seed=1)
    assert torch.equal(concat_fc_op(x, y, torch.zeros(2 * c, c, dtype=D), torch.zeros(c, dtype=D)),
                       torch.zeros_like(x))
    w = torch.cat([torch.eye(c, dtype=D), torch.zeros(c, c, dtype=D)])
    xp = x.abs()
    assert torch.allclose(concat_fc_op(xp, y, w, torch.zeros(c, dtype=D)), xp)
    w, b = r(2 * c, c, seed=2), r(c, seed=3)
    assert np.allclose(concat_fc_op(x, y, w, b).numpy(), naive_concat_fc(x, y, w, b), atol=1e-12)
    with pytest.raises(ValueError):
        concat_fc_op(x, y, r(c, c), b)


@pytest.mark.parametrize("kind", list(PrimitiveOpKind))
def test_shape_preserved(kind):
    op = make_op(kind, 4, D)
    assert op(r(3, 4, 5), r(3, 4, 5, seed=1)).shape == (3, 4, 5)


def test_param_counts():
    assert op_param_count(PrimitiveOpKind.LinearGLU, 5) == 50 == sum(p.numel() for p in LinearGLU(5, D).parameters())
    assert op_param_count(PrimitiveOpKind.ConcatFC, 5) == 55 == sum(p.numel() for p in ConcatFC(5, D).parameters())
    assert op_param_count(PrimitiveOpKind.Attention, 5) == 0


def _fd_check(fn, tensors):
    """Compare autograd against central differences on every entry of every tensor."""
    for t in tensors:
        t.requires_grad_(True)
    loss = fn()
    grads = torch.autograd.grad(loss, tensors)
    for t, g in zip(tensors, grads):
        for idx in np.ndindex(*t.shape):
            num = central_difference(fn, t, idx)
            assert rel_err(g[idx].item(), num) < 1e-4, (idx, g[idx].item(), num)


@pytest.mark.parametrize("seed", range(3))
def test_gradients_against_finite_differences(seed):
    c, l = 3, 4
    probe = r(2, c, l, seed=100 + seed)
    x, y = r(2, c, l, seed=seed), r(2, c, l, seed=seed + 10)
    _fd_check(lambda: (sum_op(x, y) * probe).sum(), [x, y])
    _fd_check(lambda: (attention_op(x, y) * probe).sum(), [x, y])
    w1, w2 = r(c, c, seed=seed + 20), r(c, c, seed=seed + 21)
    _fd_check(lambda: (linear_glu_op(x, y, w1, w2) * probe).sum(), [x, y, w1, w2])
    w, b = r(2 * c, c, seed=seed + 30), r(c, seed=seed + 31)
    _fd_check(lambda: (concat_fc_op(x, y, w, b) * probe).sum(), [x, y, w, b])


def _in_hull(point, vertices):
    n = vertices.shape[1]
    res = linprog(np.zeros(n), A_eq=np.vstack([vertices, np.ones((1, n))]),
                  b_eq=np.concatenate([point, [1.0]]), bounds=[(0, None)] * n, method="highs")
    return res.status == 0


@settings(max_examples=120, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2 ** 31 - 1), st.floats(0.1, 5.0))
def test_attention_outputs_lie_in_convex_hull(c, l, seed, scale):
    x, y = scale * r(2, c, l, seed=seed), r(2, c, l, seed=seed + 1)
    out = attention_op(x, y).numpy()
    for b in range(2):
        for i in range(l):
            assert _in_hull(out[b, :, i], y[b].numpy())
