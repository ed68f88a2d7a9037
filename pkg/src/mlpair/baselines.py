"""GCN and self-attention relation blocks for the same dual-path scaffold.

Both mix tokens along one axis (actors inside a frame, or frames of one actor)
and carry no positional encoding, so they are equivariant to permutations of
that axis. Sizes are the smallest ones that match the published complexity
table: the GCN block holds three D×D matrices, the attention block six.
"""

from __future__ import annotations

import numpy as np

from .autograd import (
    ShapeError,
    Tensor,
    add,
    affine,
    dropout,
    gelu,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    softmax,
    swapaxes,
)
from .modules import Module, param
from .relation import AXES, ModelConfig, RelationModel, mlp_unit


def _tokens_second_last(x: Tensor, axis: str) -> Tensor:
    return x if AXES[axis] == -2 else swapaxes(x, AXES[axis], -2)


def _check(x: Tensor, axis: str, dim: int) -> None:
    if x.ndim < 3 or x.shape[-1] != dim:
        raise ShapeError(f"expected [..., T, N, {dim}] input, got {x.shape}")
    if axis not in ("actor", "time"):
        raise ValueError(f"token axis must be 'actor' or 'time', got {axis!r}")


class GcnBlock(Module):
    """``x + ReLU(A·x·W_g)`` with ``A = row_softmax((x W_a)(x W_b)ᵀ / √D)`` over tokens."""

    def __init__(self, axis: str, dim: int, p: float, rng: np.random.Generator, zero_init: bool = False):
        self.axis = axis
        self.dim = dim
        self.p = p
        std = 1.0 / np.sqrt(dim)
        self.w_a = param(rng.normal(0.0, std, (dim, dim)))
        self.w_b = param(rng.normal(0.0, std, (dim, dim)))
        self.w_g = param(np.zeros((dim, dim)) if zero_init else rng.normal(0.0, std, (dim, dim)))

    def adjacency(self, x: Tensor) -> Tensor:
        _check(x, self.axis, self.dim)
        h = _tokens_second_last(x, self.axis)
        scores = matmul(matmul(h, self.w_a), swapaxes(matmul(h, self.w_b), -1, -2))
        return softmax(mul(scores, 1.0 / np.sqrt(self.dim)))

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        a = self.adjacency(x)
        h = _tokens_second_last(x, self.axis)
        h = relu(matmul(matmul(a, h), self.w_g))
        h = dropout(h, self.p, self.training, rng)
        return add(x, _tokens_second_last(h, self.axis))


class AttnBlock(Module):
    """Pre-LN multi-head self-attention plus a D→D→D GeLU feed-forward, both residual."""

    def __init__(self, axis: str, dim: int, heads: int, p: float, rng: np.random.Generator, zero_init: bool = False):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.axis = axis
        self.dim = dim
        self.heads = heads
        self.p = p
        bound = 1.0 / np.sqrt(dim)

        def w(zero=False):
            return param(np.zeros((dim, dim)) if zero else rng.uniform(-bound, bound, (dim, dim)))

        def b(zero=False):
            return param(np.zeros(dim) if zero else rng.uniform(-bound, bound, dim))

        self.ln1_gamma = param(np.ones(dim))
        self.ln1_beta = param(np.zeros(dim))
        self.w_q, self.b_q = w(), b()
        self.w_k, self.b_k = w(), b()
        self.w_v, self.b_v = w(), b()
        self.w_o, self.b_o = w(zero_init), b(zero_init)
        self.ln2_gamma = param(np.ones(dim))
        self.ln2_beta = param(np.zeros(dim))
        self.w1, self.b1 = w(), b()
        self.w2, self.b2 = w(zero_init), b(zero_init)

    def _split(self, t: Tensor) -> Tensor:
        lead, length = t.shape[:-2], t.shape[-2]
        t = reshape(t, (*lead, length, self.heads, self.dim // self.heads))
        return swapaxes(t, -3, -2)

    def _qkv(self, x: Tensor):
        h = layer_norm(_tokens_second_last(x, self.axis), self.ln1_gamma, self.ln1_beta)
        q = self._split(affine(h, self.w_q, self.b_q))
        k = self._split(affine(h, self.w_k, self.b_k))
        v = self._split(affine(h, self.w_v, self.b_v))
        return q, k, v

    def attention_weights(self, x: Tensor) -> Tensor:
        """Per-head attention rows, shape ``[..., heads, L, L]``."""
        _check(x, self.axis, self.dim)
        q, k, _ = self._qkv(x)
        scores = matmul(q, swapaxes(k, -1, -2))
        return softmax(mul(scores, 1.0 / np.sqrt(self.dim // self.heads)))

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        _check(x, self.axis, self.dim)
        q, k, v = self._qkv(x)
        attn = softmax(mul(matmul(q, swapaxes(k, -1, -2)), 1.0 / np.sqrt(self.dim // self.heads)))
        ctx = swapaxes(matmul(attn, v), -3, -2)
        ctx = reshape(ctx, (*ctx.shape[:-2], self.dim))
        out = dropout(affine(ctx, self.w_o, self.b_o), self.p, self.training, rng)
        h = add(_tokens_second_last(x, self.axis), out)
        f = gelu(affine(layer_norm(h, self.ln2_gamma, self.ln2_beta), self.w1, self.b1))
        f = dropout(affine(f, self.w2, self.b2), self.p, self.training, rng)
        return _tokens_second_last(add(h, f), self.axis)


def gcn_unit(kind: str, cfg: ModelConfig, rng: np.random.Generator) -> GcnBlock:
    axis = "actor" if kind == "spatial" else "time"
    return GcnBlock(axis, cfg.dim, cfg.dropout, rng, cfg.zero_init)


def attn_unit(kind: str, cfg: ModelConfig, rng: np.random.Generator) -> AttnBlock:
    axis = "actor" if kind == "spatial" else "time"
    return AttnBlock(axis, cfg.dim, cfg.heads, cfg.dropout, rng, cfg.zero_init)


UNITS = {"mlp": mlp_unit, "gcn": gcn_unit, "transformer": attn_unit}


def build_unified_model(method: str, config: ModelConfig) -> RelationModel:
    """Same paths, heads and pooling for every method; only the stage bodies differ."""
    if method not in UNITS:
        raise ValueError(f"unknown method {method!r}; expected one of {tuple(UNITS)}")
    if config.method != method:
        config = ModelConfig.from_dict({**config.to_dict(), "method": method})
    return RelationModel(config, UNITS[method])


def build_model(config: ModelConfig) -> RelationModel:
    return build_unified_model(config.method, config)
