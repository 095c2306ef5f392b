"""Transformer building blocks, Position Aware Self-Modulation and Dependency FFN.

All blocks use post-layer-norm placement: each sub-module's output is added
to its input and the sum is normalized.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

NEG_INF = -1e9


class Module:
    """Minimal parameter container.

    Parameters are trainable ``Tensor`` attributes; child modules and lists of
    child modules are discovered in attribute insertion order, which keeps
    parameter naming deterministic.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: stored shape {arr.shape} does not match {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)

    def to(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.d_in, self.d_out = d_in, d_out
        self.weight = parameter(glorot(rng, d_in, d_out))
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"Linear expects last axis {self.d_in}, got shape {x.shape}")
        lead = x.shape[:-1]
        y = T.matmul(x.reshape(-1, self.d_in), self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y.reshape(*lead, self.d_out)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis without an affine transform."""
    centered = x - T.mean(x, axis=-1, keepdims=True)
    var = T.mean(centered * centered, axis=-1, keepdims=True)
    return centered / T.sqrt(var + eps)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = parameter(np.ones(d))
        self.bias = parameter(np.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.eps) * self.gain + self.bias


def causal_mask(n: int, dtype=None) -> Tensor:
    """Additive mask: 0 on and below the diagonal, a large negative value above."""
    mask = np.triu(np.full((n, n), NEG_INF), k=1)
    return Tensor(mask, dtype=dtype)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"model dimension {d} is not divisible by head count {heads}")
        self.d, self.heads = d, heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self._last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.d // self.heads).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, mask: Tensor | None = None) -> Tensor:
        b, n, _ = x.shape
        dh = self.d // self.heads
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        if mask is not None:
            scores = scores + mask
        weights = T.softmax(scores, axis=-1)
        self._last_weights = weights.data
        ctx = T.matmul(weights, v).transpose(0, 2, 1, 3).reshape(b, n, self.d)
        return self.o(ctx)


class FeedForward(Module):
    """Position-wise ``GELU(x W1 + b1) W2 + b2``."""

    def __init__(self, d: int, d_ff: int, rng: np.random.Generator):
        self.inner = Linear(d, d_ff, rng)
        self.outer = Linear(d_ff, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.outer(T.gelu(self.inner(x)))


class DependencyFFN(Module):
    """Feed-forward layer that mixes the previous position's hidden state.

    ``s_t = GELU(x_t W_s + b_s)`` and ``o_t = s_{t-1} W_a + s_t W_b + b_o``
    with ``s_{-1} = 0``.
    """

    def __init__(self, d: int, d_ff: int, rng: np.random.Generator):
        self.d, self.d_ff = d, d_ff
        self.w_s = parameter(glorot(rng, d, d_ff))
        self.b_s = parameter(np.zeros(d_ff))
        self.w_a = parameter(glorot(rng, d_ff, d))
        self.w_b = parameter(glorot(rng, d_ff, d))
        self.b_o = parameter(np.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        if d != self.d:
            raise ShapeError(f"DependencyFFN expects last axis {self.d}, got shape {x.shape}")
        s = T.gelu(T.matmul(x.reshape(b * n, d), self.w_s) + self.b_s).reshape(b, n, self.d_ff)
        zero = T.zeros((b, 1, self.d_ff), dtype=x.dtype)
        s_prev = T.concat([zero, s[:, : n - 1, :]], axis=1) if n > 1 else zero
        cur = T.matmul(s.reshape(b * n, self.d_ff), self.w_b)
        prev = T.matmul(s_prev.reshape(b * n, self.d_ff), self.w_a)
        return (prev + cur + self.b_o).reshape(b, n, d)


class EncoderBlock(Module):
    """``a = LN(x + MHA(x))``, ``y = LN(a + FFN(a))``."""

    def __init__(self, d: int, heads: int, d_ff: int, rng: np.random.Generator,
                 dependency_ffn: bool = False, dropout: float = 0.1):
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln1 = LayerNorm(d)
        self.ffn = DependencyFFN(d, d_ff, rng) if dependency_ffn else FeedForward(d, d_ff, rng)
        self.ln2 = LayerNorm(d)
        self._dropout = dropout

    def forward(self, x: Tensor, mask: Tensor | None = None, rng: np.random.Generator | None = None) -> Tensor:
        a = self.ln1(x + T.dropout(self.attn(x, mask), self._dropout, rng))
        return self.ln2(a + T.dropout(self.ffn(a), self._dropout, rng))


def positional_encoding(n: int, d: int) -> np.ndarray:
    """Sinusoidal table: even dims ``sin(pos / 10000^(2k/d))``, odd dims cosine."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    k = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, k / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d // 2])
    return table


class PositionAwareSelfModulation(Module):
    """Latent-conditioned per-position scale and shift of normalized inputs.

    One shared MLP maps ``z`` to ``N`` hidden blocks; block ``i`` then goes
    through its own ``gamma_i`` and ``beta_i`` linear maps, so every position
    receives a distinct modulation.
    """

    def __init__(self, n: int, d_z: int, d: int, rng: np.random.Generator, d_h: int | None = None):
        d_h = d_h or d
        self.n, self.d_z, self.d, self.d_h = n, d_z, d, d_h
        self.mlp = Linear(d_z, n * d_h, rng)
        self.gamma_w = parameter(glorot(rng, d_h, d, shape=(n, d_h, d)))
        self.gamma_b = parameter(np.ones((n, d)))
        self.beta_w = parameter(glorot(rng, d_h, d, shape=(n, d_h, d)))
        self.beta_b = parameter(np.zeros((n, d)))

    def forward(self, z: Tensor, base: Tensor) -> Tensor:
        if base.shape != (self.n, self.d):
            raise ShapeError(f"PASM expects base of shape {(self.n, self.d)}, got {base.shape}")
        b = z.shape[0]
        hidden = T.gelu(self.mlp(z)).reshape(b, self.n, self.d_h).transpose(1, 0, 2)  # [N,B,dh]
        gamma = (T.matmul(hidden, self.gamma_w) + self.gamma_b.reshape(self.n, 1, self.d)).transpose(1, 0, 2)
        beta = (T.matmul(hidden, self.beta_w) + self.beta_b.reshape(self.n, 1, self.d)).transpose(1, 0, 2)
        return gamma * layer_norm(base) + beta


class SelfModulation(Module):
    """Plain self-modulation: one scale/shift shared by every position."""

    def __init__(self, d_z: int, d: int, rng: np.random.Generator, d_h: int | None = None):
        d_h = d_h or d
        self.mlp = Linear(d_z, d_h, rng)
        self.gamma = Linear(d_h, d, rng)
        self.gamma.bias.data = np.ones(d, dtype=self.gamma.bias.dtype)
        self.beta = Linear(d_h, d, rng)

    def forward(self, z: Tensor, base: Tensor) -> Tensor:
        hidden = T.gelu(self.mlp(z))
        b, d = hidden.shape[0], base.shape[-1]
        return self.gamma(hidden).reshape(b, 1, d) * layer_norm(base) + self.beta(hidden).reshape(b, 1, d)
