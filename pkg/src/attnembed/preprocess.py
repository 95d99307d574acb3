"""Instance normalization, channel independence and window tokenization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SeriesDataset
from .tensor import Tensor, as_tensor

__all__ = [
    "InstanceStats",
    "WindowBatch",
    "instance_normalize",
    "denormalize",
    "channel_split",
    "channel_merge",
    "n_windows",
    "window_indices",
    "window_tokenize",
]

DEFAULT_EPS = 1e-5


@dataclass
class InstanceStats:
    mean: np.ndarray
    std: np.ndarray


def instance_normalize(x, eps: float = DEFAULT_EPS) -> tuple[np.ndarray, InstanceStats]:
    """Standardize along the last (time) axis with the population std.

    The std is floored at ``eps`` so constant inputs map to zeros. Rows are
    processed contiguously so a channel normalized alone is bit-identical to
    the same channel inside a batch.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.ascontiguousarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    mean = mean + (x - mean).mean(axis=-1, keepdims=True)  # second pass removes rounding in the mean
    const = (x.max(axis=-1, keepdims=True) == x.min(axis=-1, keepdims=True)) if x.shape[-1] else np.zeros_like(mean, bool)
    mean = np.where(const, x[..., :1] if x.shape[-1] else mean, mean)
    centered = x - mean
    std = np.maximum(np.sqrt((centered * centered).mean(axis=-1, keepdims=True)), eps)
    return centered / std, InstanceStats(mean, std)


def denormalize(y_norm, stats: InstanceStats):
    """Inverse of :func:`instance_normalize`; accepts arrays or tensors."""
    if isinstance(y_norm, Tensor):
        return y_norm * stats.std + stats.mean
    return np.asarray(y_norm, dtype=np.float64) * stats.std + stats.mean


def channel_split(ds: SeriesDataset) -> list[np.ndarray]:
    return [ds.values[:, i].copy() for i in range(ds.n_channels)]


def channel_merge(series: list[np.ndarray]) -> np.ndarray:
    return np.stack(series, axis=1)


def n_windows(length: int, window: int, stride: int) -> int:
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    if window > length:
        raise ValueError(f"window {window} exceeds series length {length}")
    return (length - window) // stride + 1


def window_indices(length: int, window: int, stride: int) -> np.ndarray:
    n = n_windows(length, window, stride)
    return np.arange(n)[:, None] * stride + np.arange(window)[None, :]


@dataclass
class WindowBatch:
    windows: np.ndarray  # (..., N, W)
    window_size: int
    stride: int
    length: int

    @property
    def n(self) -> int:
        return self.windows.shape[-2]


def window_tokenize(u, window: int, stride: int) -> WindowBatch:
    """Cut the last axis of ``u`` into ``N = (L - W) // S + 1`` windows; the tail is dropped."""
    arr = u.data if isinstance(u, Tensor) else np.asarray(u, dtype=np.float64)
    length = arr.shape[-1]
    idx = window_indices(length, window, stride)
    return WindowBatch(arr[..., idx], window, stride, length)


def tokenize_tensor(u: Tensor, window: int, stride: int) -> Tensor:
    """Differentiable counterpart of :func:`window_tokenize`."""
    u = as_tensor(u)
    idx = window_indices(u.shape[-1], window, stride)
    return u[..., idx]
