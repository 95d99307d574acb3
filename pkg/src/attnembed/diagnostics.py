"""Rank-collapse measurement on encoder token matrices."""
from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forecaster import Forecaster, ModelConfig

__all__ = ["RankProfile", "relative_residual", "residual_profile", "rank_report", "write_rank_csv"]

RANK_MODES = ("patch", "softmax", "rbf", "poly")


def relative_residual(x: np.ndarray) -> np.ndarray:
    """``||X - 1 xbar^T||_F / ||X||_F`` over the last two axes (0 where ``X = 0``).

    ``xbar`` is the column mean over tokens, the Frobenius-optimal rank-one
    ``1 x^T`` approximation, so the value always lies in ``[0, 1]``.
    """
    x = np.asarray(x, dtype=np.float64)
    res = x - x.mean(axis=-2, keepdims=True)
    num = np.sqrt((res**2).sum(axis=(-2, -1)))
    den = np.sqrt((x**2).sum(axis=(-2, -1)))
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, np.minimum(num / safe, 1.0), 0.0)


@dataclass
class RankProfile:
    values: list[float]
    mode: str = ""
    depth: int = 0
    trained: bool = False
    per_sample: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def n_layers(self) -> int:
        return len(self.values)


def residual_profile(token_matrices, mode: str = "", trained: bool = False) -> RankProfile:
    """One relative residual norm per layer; batched matrices are averaged over samples."""
    if len(token_matrices) == 0:
        raise ValueError("need at least one recorded layer")
    values, per = [], []
    for x in token_matrices:
        r = np.atleast_1d(relative_residual(x))
        per.append(r)
        values.append(float(r.mean()))
    return RankProfile(values, mode, len(values), trained, per)


def rank_report(
    base: ModelConfig,
    batch: np.ndarray,
    depths=(3, 6),
    modes=RANK_MODES,
    train_fn=None,
) -> dict[tuple[str, int], RankProfile]:
    """Profiles for every (mode, encoder depth) on the same raw lookback ``batch``.

    Models share ``base.seed``. ``train_fn(model)``, if given, trains each model
    in place first (e.g. to its best-validation checkpoint); otherwise profiles
    describe the initialized architecture.
    """
    out = {}
    for mode in modes:
        for depth in depths:
            cfg = copy.deepcopy(base)
            cfg.embed.mode = mode
            cfg.encoder_layers = depth
            cfg.dropout = 0.0 if train_fn is None else cfg.dropout
            model = Forecaster(cfg)
            if train_fn is not None:
                train_fn(model)
            fc = model(batch, keep=True)
            out[(mode, depth)] = residual_profile(fc.token_matrices, mode, train_fn is not None)
    return out


def write_rank_csv(profiles: dict[tuple[str, int], RankProfile], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "depth", "layer_index", "relative_residual_norm"])
        for (mode, depth), prof in profiles.items():
            for i, v in enumerate(prof.values):
                w.writerow([mode, depth, i, repr(v)])
