"""Attention-weight embeddings of time-series windows.

Each window of ``W`` normalized values, prefixed with ``G`` landmark values
computed once from the whole lookback series, is treated as a sequence of
``G + W`` scalar tokens. Softmax mode runs a small stack of self-attention
layers over those tokens and keeps, from every layer and head, the attention
distribution of the last token; kernel modes replace the softmax score with an
RBF or polynomial kernel between the last query and all keys. The harvested
rows are concatenated and linearly projected to the model width.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nn import FeedForward, LayerNorm, LinearLayer, Params, SelfAttention
from .preprocess import n_windows, tokenize_tensor
from .tensor import Tensor, as_tensor, concat, conv1d_valid, exp, gelu, linear, matmul

__all__ = [
    "EmbedConfig",
    "AttentionBundle",
    "ema_matrix",
    "ema_smooth",
    "kernel_eval",
    "Landmarks",
    "AttentionEmbedding",
    "KernelEmbedding",
    "PatchEmbedding",
    "build_embedding",
    "embed_series",
]

MODES = ("softmax", "rbf", "poly", "patch")


@dataclass
class EmbedConfig:
    window_size: int = 10
    stride: int = 5
    landmark_kernel: int = 48
    landmark_stride: int = 48
    ema_alpha: float = 0.7
    embed_layers: int = 3
    embed_heads: int = 4
    embed_dim: int = 16
    out_dim: int = 128
    mode: str = "softmax"
    rbf_gamma: float | None = None  # None -> 1 / d_head
    poly_degree: int = 2
    poly_coef: float = 1.0
    use_ema: bool = True
    use_landmarks: bool = True
    ema_include_landmarks: bool = False
    normalize_kernel_rows: bool = False
    kernel_depth: int = 1
    tie_qk: bool = False

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        for name in ("window_size", "stride", "embed_layers", "embed_heads", "embed_dim", "out_dim", "kernel_depth"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.use_landmarks and (self.landmark_kernel < 1 or self.landmark_stride < 1):
            raise ConfigError("landmark_kernel", "landmark kernel and stride must be >= 1")
        if not (0.0 < self.ema_alpha <= 1.0):
            raise ConfigError("ema_alpha", f"must lie in (0, 1], got {self.ema_alpha}")
        if self.embed_dim % self.embed_heads:
            raise ConfigError("embed_dim", f"{self.embed_dim} is not divisible by embed_heads={self.embed_heads}")
        if self.rbf_gamma is not None and not self.rbf_gamma > 0:
            raise ConfigError("rbf_gamma", "must be > 0")
        if self.poly_degree < 1 or int(self.poly_degree) != self.poly_degree:
            raise ConfigError("poly_degree", "must be an integer >= 1")

    @property
    def d_head(self) -> int:
        return self.embed_dim // self.embed_heads

    @property
    def gamma(self) -> float:
        return self.rbf_gamma if self.rbf_gamma is not None else 1.0 / self.d_head

    def n_landmarks(self, lookback: int) -> int:
        if not self.use_landmarks:
            return 0
        if self.landmark_kernel > lookback:
            raise ConfigError("landmark_kernel", f"{self.landmark_kernel} exceeds lookback {lookback}")
        return (lookback - self.landmark_kernel) // self.landmark_stride + 1

    def n_tokens(self, lookback: int) -> int:
        return self.n_landmarks(lookback) + self.window_size

    def concat_width(self, lookback: int) -> int:
        """Width of the harvested attention rows before projection."""
        if self.mode == "patch":
            return self.window_size
        p = self.n_tokens(lookback)
        if self.mode == "softmax":
            return self.embed_layers * self.embed_heads * p
        return self.embed_heads * p


@dataclass
class AttentionBundle:
    """Attention matrices of every embedding layer, each ``(..., heads, P, P)``."""

    matrices: list[np.ndarray] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.matrices)

    def head(self, layer: int, head: int) -> np.ndarray:
        return self.matrices[layer][..., head, :, :]

    def max_row_error(self) -> float:
        return max(float(np.abs(a.sum(axis=-1) - 1.0).max()) for a in self.matrices)


def ema_matrix(n: int, alpha: float) -> np.ndarray:
    """Lower-triangular ``E`` with ``E @ x`` equal to the EMA of ``x`` (``y_1 = x_1``)."""
    if not (0.0 < alpha <= 1.0):
        raise ConfigError("ema_alpha", f"must lie in (0, 1], got {alpha}")
    t = np.arange(n)
    lag = t[:, None] - t[None, :]
    decay = (1.0 - alpha) ** np.clip(lag, 0, None)
    e = np.where(lag >= 0, alpha * decay, 0.0)
    e[:, 0] = (1.0 - alpha) ** t
    return e


def ema_smooth(x, alpha: float, axis: int = 0):
    """Exponential moving average along ``axis``; tensors stay differentiable."""
    if isinstance(x, Tensor):
        moved = x.swapaxes(axis, -2) if x.ndim > 1 else x.reshape(-1, 1)
        e = Tensor(ema_matrix(moved.shape[-2], alpha))
        out = matmul(e, moved)
        return out.swapaxes(axis, -2) if x.ndim > 1 else out.reshape(x.shape)
    arr = np.moveaxis(np.asarray(x, dtype=np.float64), axis, 0)
    e = ema_matrix(arr.shape[0], alpha)
    out = np.tensordot(e, arr, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def token_ema_matrix(cfg: EmbedConfig, n_landmarks: int) -> np.ndarray:
    """EMA over the token axis; landmark slots pass through unless configured otherwise."""
    p = n_landmarks + cfg.window_size
    if cfg.ema_include_landmarks or n_landmarks == 0:
        return ema_matrix(p, cfg.ema_alpha)
    m = np.eye(p)
    m[n_landmarks:, n_landmarks:] = ema_matrix(cfg.window_size, cfg.ema_alpha)
    return m


def kernel_eval(kind: str, u, v, gamma: float | None = None, degree: int = 2, coef: float = 1.0) -> float:
    """Scalar kernel between two vectors of equal length."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"vector shapes differ: {u.shape} vs {v.shape}")
    if kind == "rbf":
        g = 1.0 / u.size if gamma is None else gamma
        if not g > 0:
            raise ConfigError("rbf_gamma", "must be > 0")
        return float(np.exp(-g * np.sum((u - v) ** 2)))
    if kind == "poly":
        if degree < 1:
            raise ConfigError("poly_degree", "must be >= 1")
        return float((u @ v / math.sqrt(u.size) + coef) ** degree)
    raise ValueError(f"unknown kernel {kind!r}")


class Landmarks:
    """Learnable strided 1-D convolution over the whole lookback series.

    Initialized as mean pooling (weights ``1/k``, bias 0).
    """

    def __init__(self, params: Params, cfg: EmbedConfig, prefix: str = "embed.landmark"):
        k = cfg.landmark_kernel
        self.stride = cfg.landmark_stride
        self.weight = params.add(f"{prefix}.weight", np.full(k, 1.0 / k))
        self.bias = params.add(f"{prefix}.bias", np.zeros(()))

    def __call__(self, u: Tensor) -> Tensor:
        return conv1d_valid(u, self.weight, self.bias, self.stride)


class _TokenEmbeddingBase:
    """Shared window + landmark token assembly for the attention-style modes."""

    def __init__(self, cfg: EmbedConfig, lookback: int, params: Params):
        cfg.validate()
        self.cfg = cfg
        self.lookback = lookback
        self.n_windows = n_windows(lookback, cfg.window_size, cfg.stride)
        self.n_landmarks = cfg.n_landmarks(lookback)
        self.n_tokens = self.n_landmarks + cfg.window_size
        self.landmarks = Landmarks(params, cfg) if self.n_landmarks else None
        self.ema = Tensor(token_ema_matrix(cfg, self.n_landmarks)) if cfg.use_ema else None

    def tokens(self, u: Tensor) -> Tensor:
        """``(B, L)`` -> ``(B, N, G + W)`` scalar tokens."""
        windows = tokenize_tensor(u, self.cfg.window_size, self.cfg.stride)
        if self.landmarks is None:
            return windows
        lm = self.landmarks(u)  # (B, G)
        b = u.shape[0]
        lm = lm.reshape(b, 1, self.n_landmarks).broadcast_to((b, self.n_windows, self.n_landmarks))
        return concat([lm, windows], axis=-1)

    def smooth(self, x: Tensor) -> Tensor:
        return x if self.ema is None else matmul(self.ema, x)

    @property
    def concat_width(self) -> int:
        return self.cfg.concat_width(self.lookback)


class AttentionEmbedding(_TokenEmbeddingBase):
    """Softmax mode: harvested last rows of every layer's attention matrices."""

    def __init__(self, cfg: EmbedConfig, lookback: int, params: Params, rng: np.random.Generator):
        super().__init__(cfg, lookback, params)
        d, p = cfg.embed_dim, self.n_tokens
        self.lift_weight = params.add("embed.lift.weight", rng.normal(0.0, 1.0, size=d))
        # a zero bias would let the first layer norm reduce every token to +-lift_weight
        self.lift_bias = params.add("embed.lift.bias", rng.normal(0.0, 1.0, size=d))
        self.position = params.add("embed.position", rng.normal(0.0, 0.1, size=(p, d)))
        self.layers = []
        for i in range(cfg.embed_layers):
            last = i == cfg.embed_layers - 1
            norm1 = LayerNorm(params, f"embed.layer{i}.norm1", d)
            # the last layer only contributes its attention matrix
            attn = SelfAttention(params, f"embed.layer{i}.attn", d, cfg.embed_heads, rng, with_values=not last)
            norm2 = None if last else LayerNorm(params, f"embed.layer{i}.norm2", d)
            ffn = None if last else FeedForward(params, f"embed.layer{i}.ffn", d, 2 * d, rng)
            self.layers.append((norm1, attn, norm2, ffn))
        self.proj = LinearLayer(params, "embed.proj", self.concat_width, cfg.out_dim, rng)

    def lift(self, tokens: Tensor) -> Tensor:
        b, n, p = tokens.shape
        x = tokens.reshape(b, n, p, 1)
        return x * self.lift_weight + self.lift_bias + self.position

    def __call__(self, u: Tensor, keep_bundle: bool = False):
        x = self.lift(self.tokens(u))
        rows, bundle = [], AttentionBundle()
        for norm1, attn, norm2, ffn in self.layers:
            h = norm1(x)
            out, a = attn(h, qk_transform=self.smooth)
            rows.append(a[..., -1, :])  # (B, N, H, P)
            if keep_bundle:
                bundle.matrices.append(a.data.copy())
            if out is not None:
                x = x + out
                x = x + ffn(norm2(x))
        b, n = u.shape[0], self.n_windows
        a_cat = concat([r.reshape(b, n, -1) for r in rows], axis=-1)
        emb = self.proj(a_cat)
        return (emb, a_cat, bundle) if keep_bundle else emb


class KernelEmbedding(_TokenEmbeddingBase):
    """RBF / polynomial scoring of the last query against all keys, per head."""

    def __init__(self, cfg: EmbedConfig, lookback: int, params: Params, rng: np.random.Generator):
        super().__init__(cfg, lookback, params)
        d = cfg.embed_dim
        self.f_q = self._mlp(params, "embed.f_q", d, cfg.kernel_depth, rng)
        self.f_k = self.f_q if cfg.tie_qk else self._mlp(params, "embed.f_k", d, cfg.kernel_depth, rng)
        self.proj = LinearLayer(params, "embed.proj", self.concat_width, cfg.out_dim, rng)

    @staticmethod
    def _mlp(params: Params, name: str, d: int, depth: int, rng) -> list[LinearLayer]:
        layers = [LinearLayer(params, f"{name}.0", 1, d, rng)]
        for i in range(1, depth):
            layers.append(LinearLayer(params, f"{name}.{i}", d, d, rng))
        return layers

    @staticmethod
    def _apply(layers: list[LinearLayer], x: Tensor) -> Tensor:
        x = layers[0](x)
        for layer in layers[1:]:
            x = layer(gelu(x))
        return x

    def scores(self, u: Tensor) -> Tensor:
        """Kernel scores ``(B, N, H, P)`` of the last token's query against every key."""
        cfg = self.cfg
        tok = self.tokens(u)
        b, n, p = tok.shape
        x = tok.reshape(b, n, p, 1)
        q = self.smooth(self._apply(self.f_q, x))
        k = self.smooth(self._apply(self.f_k, x))
        h, dh = cfg.embed_heads, cfg.d_head
        kh = k.reshape(b, n, p, h, dh).transpose(0, 1, 3, 2, 4)  # (B, N, H, P, dh)
        q_last = q[:, :, -1, :].reshape(b, n, h, 1, dh)
        if cfg.mode == "rbf":
            diff = kh - q_last
            s = exp((diff * diff).sum(axis=-1) * (-cfg.gamma))
        else:
            dot = (kh * q_last).sum(axis=-1) * (1.0 / math.sqrt(dh))
            s = (dot + cfg.poly_coef) ** int(cfg.poly_degree)
        if cfg.normalize_kernel_rows:
            s = s / s.sum(axis=-1, keepdims=True)
        return s

    def __call__(self, u: Tensor, keep_bundle: bool = False):
        s = self.scores(u)
        b, n = u.shape[0], self.n_windows
        a_cat = s.reshape(b, n, -1)
        emb = self.proj(a_cat)
        return (emb, a_cat, AttentionBundle()) if keep_bundle else emb


class PatchEmbedding:
    """Baseline: one linear map from a raw window to the model width."""

    def __init__(self, cfg: EmbedConfig, lookback: int, params: Params, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.lookback = lookback
        self.n_windows = n_windows(lookback, cfg.window_size, cfg.stride)
        self.n_landmarks = 0
        self.proj = LinearLayer(params, "embed.patch", cfg.window_size, cfg.out_dim, rng)

    @property
    def concat_width(self) -> int:
        return self.cfg.window_size

    def embed_window(self, window) -> np.ndarray:
        return linear(as_tensor(window), self.proj.weight, self.proj.bias).data

    def __call__(self, u: Tensor, keep_bundle: bool = False):
        windows = tokenize_tensor(u, self.cfg.window_size, self.cfg.stride)
        emb = self.proj(windows)
        return (emb, windows, AttentionBundle()) if keep_bundle else emb


def build_embedding(cfg: EmbedConfig, lookback: int, params: Params, rng: np.random.Generator):
    cfg.validate()
    if cfg.mode == "softmax":
        return AttentionEmbedding(cfg, lookback, params, rng)
    if cfg.mode in ("rbf", "poly"):
        return KernelEmbedding(cfg, lookback, params, rng)
    return PatchEmbedding(cfg, lookback, params, rng)


def embed_series(u_norm, cfg: EmbedConfig, params: Params | None = None, embedding=None, seed: int = 0) -> np.ndarray:
    """Embed one normalized series (or a batch) into ``(..., N, D)`` window embeddings.

    Pass an existing ``embedding`` to reuse its parameters; otherwise one is
    built from ``seed``.
    """
    arr = np.asarray(u_norm.data if isinstance(u_norm, Tensor) else u_norm, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr.reshape(-1, arr.shape[-1])
    if embedding is None:
        embedding = build_embedding(cfg, batch.shape[-1], params if params is not None else Params(), np.random.default_rng(seed))
    out = embedding(Tensor(batch)).data
    return out[0] if single else out.reshape(arr.shape[:-1] + out.shape[-2:])

