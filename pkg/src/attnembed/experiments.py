"""Multi-run experiments: embedding comparison, parameter scans, gradient checks."""
from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbedConfig
from .forecaster import Forecaster, ModelConfig
from .preprocess import instance_normalize
from .tensor import GradCheckReport, Tensor, finite_difference_check
from .training import Metrics, TrainConfig, train_and_evaluate

__all__ = [
    "tiny_config",
    "gradcheck_model",
    "CompareReport",
    "compare_embeddings",
    "scan_grid",
    "set_dotted",
]


def tiny_config(mode: str = "softmax", horizon: int = 4) -> ModelConfig:
    """Smallest complete model: L=24, W=S=6, two landmarks, one layer everywhere."""
    embed = EmbedConfig(
        window_size=6,
        stride=6,
        landmark_kernel=12,
        landmark_stride=12,
        ema_alpha=0.7,
        embed_layers=1,
        embed_heads=2,
        embed_dim=8,
        out_dim=16,
        mode=mode,
    )
    return ModelConfig(embed=embed, lookback=24, horizon=horizon, encoder_layers=1, encoder_heads=2, ffn_dim=32, dropout=0.0)


def gradcheck_model(cfg: ModelConfig, n_samples: int = 3, seed: int = 0, step: float = 1e-5) -> GradCheckReport:
    """Central-difference check of the normalized-space MSE over every parameter."""
    cfg = copy.deepcopy(cfg)
    cfg.dropout = 0.0
    cfg.seed = seed
    model = Forecaster(cfg)
    rng = np.random.default_rng(seed)
    series = rng.normal(size=(n_samples, cfg.lookback + cfg.horizon)).cumsum(axis=1)
    u, stats = instance_normalize(series[:, : cfg.lookback], cfg.norm_eps)
    target = (series[:, cfg.lookback :] - stats.mean) / stats.std
    x = Tensor(u)

    def loss():
        pred, *_ = model.forward_normalized(x)
        d = pred - target
        return (d * d).mean()

    return finite_difference_check(loss, model.params, step=step)


@dataclass
class CompareReport:
    seeds: list[int]
    metrics: dict[str, list[Metrics]] = field(default_factory=dict)
    epochs: dict[str, list[int]] = field(default_factory=dict)

    def ratios(self, mode: str = "softmax", baseline: str = "patch") -> list[float]:
        return [a.mse / b.mse for a, b in zip(self.metrics[mode], self.metrics[baseline])]

    def median_ratio(self, mode: str = "softmax", baseline: str = "patch") -> float:
        return float(np.median(self.ratios(mode, baseline)))

    def worst_ratio(self, mode: str = "softmax", baseline: str = "patch") -> float:
        return float(np.max(self.ratios(mode, baseline)))

    def rows(self) -> list[dict]:
        out = []
        for mode, ms in self.metrics.items():
            for seed, m, ep in zip(self.seeds, ms, self.epochs[mode]):
                row = {"mode": mode, "seed": seed, "epochs": ep}
                row.update({k: v for k, v in m.to_dict().items() if k != "per_horizon_mse"})
                out.append(row)
        return out


def compare_embeddings(base: ModelConfig, tcfg: TrainConfig, splits, seeds=(0, 1, 2), modes=("softmax", "patch")) -> CompareReport:
    """Train each embedding mode on the same splits under the same seeds and budget."""
    report = CompareReport(list(seeds))
    for mode in modes:
        cfg = copy.deepcopy(base)
        cfg.embed.mode = mode
        report.metrics[mode], report.epochs[mode] = [], []
        for s in seeds:
            metrics, result, _ = train_and_evaluate(cfg, tcfg, splits, s)
            report.metrics[mode].append(metrics)
            report.epochs[mode].append(len(result.history))
    return report


def set_dotted(cfg: ModelConfig, key: str, value) -> None:
    *parents, last = key.split(".")
    obj = cfg
    for p in parents:
        obj = getattr(obj, p)
    if not hasattr(obj, last):
        raise KeyError(key)
    setattr(obj, last, value)


def scan_grid(base: ModelConfig, tcfg: TrainConfig, splits, grid: dict[str, list], seeds=(0,), product: bool = True) -> list[dict]:
    """Train one model per grid point; returns one row per point with seed-averaged metrics.

    ``product`` takes the Cartesian product of the value lists; otherwise each
    key is varied alone around ``base``.
    """
    if product:
        keys = list(grid)
        points = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    else:
        points = [{k: v} for k, vs in grid.items() for v in vs]
    rows = []
    for point in points:
        cfg = copy.deepcopy(base)
        for k, v in point.items():
            set_dotted(cfg, k, v)
        cfg.validate()
        ms = [train_and_evaluate(cfg, tcfg, splits, s)[0] for s in seeds]
        row = dict(point)
        row["mse"] = float(np.mean([m.mse for m in ms]))
        row["mae"] = float(np.mean([m.mae for m in ms]))
        row["mse_normalized"] = float(np.mean([m.mse_normalized for m in ms]))
        rows.append(row)
    return rows
