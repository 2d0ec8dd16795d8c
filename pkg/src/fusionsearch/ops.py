"""Bivariate fusion primitives over (N, C, L) tensors.

Every op maps two tensors of identical shape (N, C, L) to one tensor of that
shape.  Linear maps act on the channel axis independently at every sequence
position.
"""

import math
from enum import IntEnum

import torch
import torch.nn as nn


class PrimitiveOpKind(IntEnum):
    Zero = 0
    Sum = 1
    Attention = 2
    LinearGLU = 3
    ConcatFC = 4


NUM_OPS = len(PrimitiveOpKind)
PARAMETRIC_OPS = (PrimitiveOpKind.LinearGLU, PrimitiveOpKind.ConcatFC)


def _check_pair(x, y):
    if x.dim() != 3 or x.shape != y.shape:
        raise ValueError(f"ops expect two (N, C, L) tensors of equal shape, got {tuple(x.shape)} and {tuple(y.shape)}")


def zero_op(x, y):
    _check_pair(x, y)
    return torch.zeros_like(x)


def sum_op(x, y):
    _check_pair(x, y)
    return x + y


def attention_weights(x, y):
    """Row-stochastic (N, L, L) weights: query positions of x over key positions of y."""
    _check_pair(x, y)
    c = x.shape[1]
    scores = torch.bmm(x.transpose(1, 2), y) / math.sqrt(c)
    if not torch.isfinite(scores).all():
        raise FloatingPointError("non-finite attention scores")
    return torch.softmax(scores, dim=-1)


def attention_op(x, y):
    """Scaled dot-product attention with query x and key = value = y.

    Sequences run along L; C is the head dimension. Single head, no projections.
    """
    weights = attention_weights(x, y)
    out = torch.bmm(y, weights.transpose(1, 2))
    if not torch.isfinite(out).all():
        raise FloatingPointError("non-finite attention output")
    return out


def channel_map(x, w):
    """Apply a (C_in, C_out) matrix to the channel axis of an (N, C_in, L) tensor."""
    return torch.einsum("ncl,cd->ndl", x, w)


def linear_glu_op(x, y, w1, w2):
    _check_pair(x, y)
    c = x.shape[1]
    if w1.shape != (c, c) or w2.shape != (c, c):
        raise ValueError(f"LinearGLU weights must be ({c}, {c}), got {tuple(w1.shape)} and {tuple(w2.shape)}")
    return channel_map(x, w1) * torch.sigmoid(channel_map(y, w2))


def concat_fc_op(x, y, w, b):
    _check_pair(x, y)
    c = x.shape[1]
    if w.shape != (2 * c, c) or b.shape != (c,):
        raise ValueError(f"ConcatFC expects W ({2 * c}, {c}) and b ({c},), got {tuple(w.shape)} and {tuple(b.shape)}")
    z = channel_map(torch.cat([x, y], dim=1), w) + b[None, :, None]
    return torch.relu(z)


def _uniform_(t, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        t.uniform_(-bound, bound)
    return t


class LinearGLU(nn.Module):
    def __init__(self, channels, dtype=None):
        super().__init__()
        dtype = dtype or torch.get_default_dtype()
        self.w1 = nn.Parameter(_uniform_(torch.empty(channels, channels, dtype=dtype), channels))
        self.w2 = nn.Parameter(_uniform_(torch.empty(channels, channels, dtype=dtype), channels))

    def forward(self, x, y):
        return linear_glu_op(x, y, self.w1, self.w2)


class ConcatFC(nn.Module):
    def __init__(self, channels, dtype=None):
        super().__init__()
        dtype = dtype or torch.get_default_dtype()
        self.w = nn.Parameter(_uniform_(torch.empty(2 * channels, channels, dtype=dtype), 2 * channels))
        self.b = nn.Parameter(_uniform_(torch.empty(channels, dtype=dtype), 2 * channels))

    def forward(self, x, y):
        return concat_fc_op(x, y, self.w, self.b)


class _Stateless(nn.Module):
    def __init__(self, fn):
        super().__init__()
        self.fn = fn

    def forward(self, x, y):
        return self.fn(x, y)


def make_op(kind, channels, dtype=None):
    """Instantiate the module for ``kind`` with freshly initialized parameters."""
    kind = PrimitiveOpKind(kind)
    if kind == PrimitiveOpKind.LinearGLU:
        return LinearGLU(channels, dtype)
    if kind == PrimitiveOpKind.ConcatFC:
        return ConcatFC(channels, dtype)
    return _Stateless({PrimitiveOpKind.Zero: zero_op, PrimitiveOpKind.Sum: sum_op,
                       PrimitiveOpKind.Attention: attention_op}[kind])


def op_param_count(kind, channels):
    kind = PrimitiveOpKind(kind)
    if kind == PrimitiveOpKind.LinearGLU:
        return 2 * channels * channels
    if kind == PrimitiveOpKind.ConcatFC:
        return 2 * channels * channels + channels
    return 0
