"""Parameter store and the transformer building blocks shared by embedding and encoder."""
from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from .tensor import Tensor, dropout, gelu, layer_normalize, linear, softmax_rows


class Params(OrderedDict):
    """Named trainable tensors, in creation order."""

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self[name] = t
        return t

    def subset(self, prefix: str) -> "Params":
        out = Params()
        for k, v in self.items():
            if k.startswith(prefix):
                out[k] = v
        return out

    def n_values(self) -> int:
        return sum(p.size for p in self.values())

    def zero_grad(self) -> None:
        for p in self.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self) - set(state)
        extra = set(state) - set(self)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, v in state.items():
            if self[k].shape != np.shape(v):
                raise ValueError(f"shape mismatch for {k}: {self[k].shape} vs {np.shape(v)}")
            self[k].data[...] = v


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class LinearLayer:
    def __init__(self, params: Params, name: str, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = params.add(f"{name}.weight", glorot(rng, n_in, n_out))
        self.bias = params.add(f"{name}.bias", np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, params: Params, name: str, width: int, eps: float = 1e-5):
        self.gain = params.add(f"{name}.gain", np.ones(width))
        self.offset = params.add(f"{name}.offset", np.zeros(width))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_normalize(x, self.gain, self.offset, self.eps)


class FeedForward:
    def __init__(self, params: Params, name: str, width: int, hidden: int, rng: np.random.Generator):
        self.fc1 = LinearLayer(params, f"{name}.fc1", width, hidden, rng)
        self.fc2 = LinearLayer(params, f"{name}.fc2", hidden, width, rng)

    def __call__(self, x: Tensor, drop: float = 0.0, rng=None) -> Tensor:
        return self.fc2(dropout(gelu(self.fc1(x)), drop, rng))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """``(..., P, d)`` -> ``(..., heads, P, d // heads)``."""
    *lead, p, d = x.shape
    nd = len(lead)
    y = x.reshape(*lead, p, heads, d // heads)
    return y.transpose(*range(nd), nd + 1, nd, nd + 2)


def merge_heads(x: Tensor) -> Tensor:
    """Inverse of :func:`split_heads`."""
    *lead, h, p, dh = x.shape
    nd = len(lead)
    y = x.transpose(*range(nd), nd + 1, nd, nd + 2)
    return y.reshape(*lead, p, h * dh)


class SelfAttention:
    """Multi-head scaled dot-product self-attention.

    ``qk_transform`` (if given) is applied to the full-width query and key
    streams before the heads are split; the embedding uses it for EMA.
    """

    def __init__(self, params: Params, name: str, width: int, heads: int, rng: np.random.Generator, with_values: bool = True):
        if width % heads:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.d_head = width // heads
        self.q = LinearLayer(params, f"{name}.q", width, width, rng)
        self.k = LinearLayer(params, f"{name}.k", width, width, rng)
        self.with_values = with_values
        if with_values:
            self.v = LinearLayer(params, f"{name}.v", width, width, rng)
            self.o = LinearLayer(params, f"{name}.o", width, width, rng)

    def scores(self, x: Tensor, qk_transform=None) -> Tensor:
        q, k = self.q(x), self.k(x)
        if qk_transform is not None:
            q, k = qk_transform(q), qk_transform(k)
        qh, kh = split_heads(q, self.heads), split_heads(k, self.heads)
        return softmax_rows(qh @ kh.swapaxes(-1, -2), temperature=math.sqrt(self.d_head))

    def __call__(self, x: Tensor, qk_transform=None, drop: float = 0.0, rng=None) -> tuple[Tensor, Tensor]:
        attn = self.scores(x, qk_transform)
        if not self.with_values:
            return None, attn
        vh = split_heads(self.v(x), self.heads)
        out = self.o(merge_heads(dropout(attn, drop, rng) @ vh))
        return out, attn
