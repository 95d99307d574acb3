"""End-to-end channel-independent forecaster and its checkpoint format."""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedding import AttentionBundle, EmbedConfig, build_embedding
from .errors import ConfigError, DimensionError
from .nn import FeedForward, LayerNorm, LinearLayer, Params, SelfAttention
from .preprocess import DEFAULT_EPS, instance_normalize
from .tensor import Tensor, dropout, linear

__all__ = [
    "ModelConfig",
    "ForecastOutput",
    "TransformerEncoder",
    "ForecastHead",
    "Forecaster",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class ModelConfig:
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    lookback: int = 96
    horizon: int = 96
    encoder_layers: int = 3
    encoder_heads: int = 8
    ffn_dim: int = 256
    dropout: float = 0.2
    norm_eps: float = DEFAULT_EPS
    norm_affine: bool = False
    seed: int = 0

    @property
    def d_model(self) -> int:
        return self.embed.out_dim

    @property
    def n_windows(self) -> int:
        return (self.lookback - self.embed.window_size) // self.embed.stride + 1

    def validate(self) -> None:
        self.embed.validate()
        if self.lookback < self.embed.window_size:
            raise ConfigError("lookback", f"{self.lookback} is shorter than window_size {self.embed.window_size}")
        if self.horizon < 1:
            raise ConfigError("horizon", "must be >= 1")
        if self.encoder_layers < 0:
            raise ConfigError("encoder_layers", "must be >= 0")
        if self.encoder_heads < 1 or self.d_model % self.encoder_heads:
            raise ConfigError("encoder_heads", f"model width {self.d_model} is not divisible by {self.encoder_heads}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout", "must lie in [0, 1)")
        self.embed.n_landmarks(self.lookback)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        embed = EmbedConfig(**d.pop("embed", {}))
        return cls(embed=embed, **d)


@dataclass
class ForecastOutput:
    predictions: np.ndarray  # (..., T), denormalized
    normalized: np.ndarray  # (..., T), before denormalization
    token_matrices: list[np.ndarray] = field(default_factory=list)  # per encoder layer, (..., N, D)
    bundle: AttentionBundle | None = None
    encoder_attention: list[np.ndarray] = field(default_factory=list)


class TransformerEncoder:
    """Pre-norm encoder over the window tokens with learned positions."""

    def __init__(self, params: Params, n_tokens: int, width: int, layers: int, heads: int, ffn_dim: int, rng):
        self.position = params.add("encoder.position", rng.normal(0.0, 0.02, size=(n_tokens, width)))
        self.layers = []
        for i in range(layers):
            self.layers.append(
                (
                    LayerNorm(params, f"encoder.layer{i}.norm1", width),
                    SelfAttention(params, f"encoder.layer{i}.attn", width, heads, rng),
                    LayerNorm(params, f"encoder.layer{i}.norm2", width),
                    FeedForward(params, f"encoder.layer{i}.ffn", width, ffn_dim, rng),
                )
            )

    def __call__(self, x: Tensor, drop: float = 0.0, rng=None, keep: bool = False):
        tokens, attns = [], []
        x = dropout(x + self.position, drop, rng)
        for norm1, attn, norm2, ffn in self.layers:
            out, a = attn(norm1(x))
            x = x + dropout(out, drop, rng)
            x = x + dropout(ffn(norm2(x), drop, rng), drop, rng)
            if keep:
                tokens.append(x.data.copy())
                attns.append(a.data.copy())
        return x, tokens, attns


class ForecastHead:
    """Flatten the ``N x D`` hidden states and map linearly to the horizon."""

    def __init__(self, params: Params, n_tokens: int, width: int, horizon: int, rng):
        self.n_tokens = n_tokens
        self.width = width
        self.proj = LinearLayer(params, "head", n_tokens * width, horizon, rng)

    def __call__(self, hidden: Tensor) -> Tensor:
        if hidden.shape[-2:] != (self.n_tokens, self.width):
            raise DimensionError(f"head expects (..., {self.n_tokens}, {self.width}) hidden states, got {hidden.shape}")
        flat = hidden.reshape(*hidden.shape[:-2], self.n_tokens * self.width)
        return self.proj(flat)


class Forecaster:
    """Instance norm -> window embedding -> encoder -> flatten head -> denorm.

    Channels are processed independently with shared parameters: any leading
    axes of the input are folded into one batch axis.
    """

    def __init__(self, cfg: ModelConfig, params: Params | None = None):
        cfg.validate()
        self.cfg = cfg
        self.params = Params()
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
        self.embedding = build_embedding(cfg.embed, cfg.lookback, self.params, rng)
        n, d = self.embedding.n_windows, cfg.d_model
        self.encoder = TransformerEncoder(self.params, n, d, cfg.encoder_layers, cfg.encoder_heads, cfg.ffn_dim, rng)
        self.head = ForecastHead(self.params, n, d, cfg.horizon, rng)
        if cfg.norm_affine:
            self.params.add("norm.gain", np.ones(()))
            self.params.add("norm.bias", np.zeros(()))
        if params is not None:
            self.params.load_state({k: v.data if isinstance(v, Tensor) else v for k, v in params.items()})

    @property
    def n_windows(self) -> int:
        return self.embedding.n_windows

    def forward_normalized(self, u_norm: Tensor, train_rng=None, keep: bool = False):
        """Forecast in normalized space from a ``(B, L)`` normalized batch."""
        if u_norm.shape[-1] != self.cfg.lookback:
            raise DimensionError(f"expected lookback {self.cfg.lookback}, got {u_norm.shape[-1]}")
        drop = self.cfg.dropout if train_rng is not None else 0.0
        if self.cfg.norm_affine:
            u_norm = u_norm * self.params["norm.gain"] + self.params["norm.bias"]
        if keep:
            emb, _, bundle = self.embedding(u_norm, keep_bundle=True)
        else:
            emb, bundle = self.embedding(u_norm), None
        hidden, tokens, attns = self.encoder(emb, drop, train_rng, keep)
        y = self.head(hidden)
        if self.cfg.norm_affine:
            y = (y - self.params["norm.bias"]) / (self.params["norm.gain"] + 1e-10)
        return y, tokens, attns, bundle

    def __call__(self, x, keep: bool = False) -> ForecastOutput:
        """Forecast raw lookback values of shape ``(..., L)``."""
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape[-1] != self.cfg.lookback:
            raise DimensionError(f"expected lookback {self.cfg.lookback}, got {arr.shape[-1]}")
        lead = arr.shape[:-1]
        flat = arr.reshape(-1, self.cfg.lookback)
        u, stats = instance_normalize(flat, self.cfg.norm_eps)
        y, tokens, attns, bundle = self.forward_normalized(Tensor(u), keep=keep)
        pred = y.data * stats.std + stats.mean
        horizon = self.cfg.horizon
        return ForecastOutput(
            predictions=pred.reshape(lead + (horizon,)),
            normalized=y.data.reshape(lead + (horizon,)),
            token_matrices=tokens,
            bundle=bundle,
            encoder_attention=attns,
        )

    def predict(self, x) -> np.ndarray:
        return self(x).predictions


_MAGIC = b"ATEMBCK1"


def save_checkpoint(model: Forecaster, path: str | Path, extra: dict | None = None) -> None:
    """Write ``magic | u64 header length | JSON header | float64 LE payload``."""
    entries, offset = [], 0
    blobs = []
    for name, t in model.params.items():
        blob = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(blob)})
        offset += len(blob)
        blobs.append(blob)
    header = {"format": "attnembed-checkpoint", "version": 1, "config": model.cfg.to_dict(), "tensors": entries}
    if extra:
        header["extra"] = extra
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path} is not an attnembed checkpoint")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n].decode("utf-8"))
    base = 16 + n
    state = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        arr = np.frombuffer(data[start : start + e["nbytes"]], dtype="<f8").reshape(e["shape"])
        state[e["name"]] = arr.astype(np.float64)
    return header, state


def load_checkpoint(path: str | Path) -> Forecaster:
    header, state = read_checkpoint(path)
    model = Forecaster(ModelConfig.from_dict(header["config"]))
    model.params.load_state(state)
    return model
