"""Loss, Adam, training with early stopping, evaluation and the ablation runner."""
from __future__ import annotations

import copy
import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import SeriesDataset, SplitSpec, chronological_split, make_supervised_pairs
from .errors import ConfigError, DimensionError, NumericError
from .forecaster import Forecaster, ModelConfig
from .preprocess import instance_normalize
from .tensor import Tensor, backward

__all__ = [
    "TrainConfig",
    "Metrics",
    "PairSet",
    "TrainResult",
    "AblationReport",
    "mse",
    "mae",
    "AdamState",
    "adam_step",
    "build_pairs",
    "prepare_splits",
    "train_model",
    "evaluate_model",
    "run_ablation",
]

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    pair_stride: int = 1
    eval_batch_size: int = 256

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", "must be > 0")
        if self.patience < 0:
            raise ConfigError("patience", "must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs", "must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1", "moment coefficients must lie in [0, 1)")


def _check_shapes(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"prediction shape {p.shape} != target shape {t.shape}")
    return p, t


def mse(pred, target) -> float:
    p, t = _check_shapes(pred, target)
    return float(np.mean((p - t) ** 2))


def mae(pred, target) -> float:
    p, t = _check_shapes(pred, target)
    return float(np.mean(np.abs(p - t)))


@dataclass
class Metrics:
    mse: float
    mae: float
    mse_normalized: float | None = None
    mae_normalized: float | None = None
    per_horizon_mse: list[float] | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, t: int, cfg: TrainConfig):
    """One bias-corrected Adam update; ``params`` arrays are updated in place.

    Returns ``(params, state)``.
    """
    if t < 1:
        raise ValueError("step counter t must be >= 1")
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    state.t = t
    return params, state


@dataclass
class PairSet:
    """Univariate supervised pairs pooled over channels."""

    inputs: np.ndarray  # (n, L)
    targets: np.ndarray  # (n, T)
    channels: np.ndarray  # (n,) source channel index

    def __len__(self) -> int:
        return len(self.inputs)


def build_pairs(ds: SeriesDataset, lookback: int, horizon: int, stride: int = 1, context: int = 0) -> PairSet:
    """Channel-independent pairs; targets never start inside the first ``context`` rows."""
    xs, ys, cs = [], [], []
    for c in range(ds.n_channels):
        pairs = make_supervised_pairs(ds.values[:, c], lookback, horizon, stride, first_target=context)
        xs.append(pairs.inputs)
        ys.append(pairs.targets)
        cs.append(np.full(len(pairs), c))
    return PairSet(np.concatenate(xs), np.concatenate(ys), np.concatenate(cs))


def prepare_splits(ds: SeriesDataset, lookback: int, horizon: int, split: SplitSpec | None = None, stride: int = 1):
    train, val, test = chronological_split(ds, split, lookback)
    return tuple(build_pairs(seg.data, lookback, horizon, stride, seg.context) for seg in (train, val, test))


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mse: float = float("inf")
    stopped_early: bool = False
    seconds: float = 0.0

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "val_mse"])
            for row in self.history:
                w.writerow([row["epoch"], repr(row["train_mse"]), repr(row["val_mse"])])


def _normalized_batch(x: np.ndarray, y: np.ndarray, eps: float):
    u, stats = instance_normalize(x, eps)
    return u, (y - stats.mean) / stats.std


def _loss(model: Forecaster, u: np.ndarray, y_norm: np.ndarray, rng=None) -> Tensor:
    pred, *_ = model.forward_normalized(Tensor(u), train_rng=rng)
    d = pred - y_norm
    return (d * d).mean()


def normalized_mse(model: Forecaster, pairs: PairSet, batch_size: int = 256) -> float:
    total, count = 0.0, 0
    for s in range(0, len(pairs), batch_size):
        u, y = _normalized_batch(pairs.inputs[s : s + batch_size], pairs.targets[s : s + batch_size], model.cfg.norm_eps)
        pred, *_ = model.forward_normalized(Tensor(u))
        total += float(((pred.data - y) ** 2).sum())
        count += y.size
    return total / count


def train_model(model: Forecaster, train: PairSet, val: PairSet | None, cfg: TrainConfig | None = None, progress=None) -> TrainResult:
    """Minimize normalized-space MSE with Adam; keep the best-validation parameters.

    Training stops once more than ``patience`` consecutive epochs fail to
    improve the validation MSE. Shuffling and dropout draw from child streams
    of ``cfg.seed``.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    if len(train) == 0:
        raise ValueError("training split has no supervised pairs")
    shuffle_rng, drop_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    state = AdamState()
    arrays = {k: p.data for k, p in model.params.items()}
    result = TrainResult()
    best_state = model.params.state()
    bad_epochs, step = 0, 0
    t0 = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train))
        total, count = 0.0, 0
        for b, s in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[s : s + cfg.batch_size]
            u, y = _normalized_batch(train.inputs[idx], train.targets[idx], model.cfg.norm_eps)
            model.params.zero_grad()
            loss = _loss(model, u, y, drop_rng if model.cfg.dropout > 0 else None)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch {b}")
            backward(loss)
            step += 1
            grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
            adam_step(arrays, grads, state, step, cfg)
            total += value * len(idx)
            count += len(idx)
        train_mse = total / count
        val_mse = normalized_mse(model, val, cfg.eval_batch_size) if val is not None and len(val) else train_mse
        result.history.append({"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse})
        if progress is not None:
            progress(epoch, train_mse, val_mse)
        log.info("epoch %d train %.5f val %.5f", epoch, train_mse, val_mse)
        if val_mse < result.best_val_mse:
            result.best_val_mse = val_mse
            result.best_epoch = epoch
            best_state = model.params.state()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                result.stopped_early = True
                break
    model.params.load_state(best_state)
    result.seconds = time.perf_counter() - t0
    return result


def evaluate_model(model: Forecaster, test: PairSet, batch_size: int = 256) -> Metrics:
    """MSE/MAE of denormalized forecasts against raw targets, plus normalized-space values."""
    if len(test) == 0:
        raise ValueError("test split has no supervised pairs")
    preds, norm_preds, norm_targets = [], [], []
    for s in range(0, len(test), batch_size):
        x = test.inputs[s : s + batch_size]
        out = model(x)
        u, stats = instance_normalize(x, model.cfg.norm_eps)
        preds.append(out.predictions)
        norm_preds.append(out.normalized)
        norm_targets.append((test.targets[s : s + batch_size] - stats.mean) / stats.std)
    pred = np.concatenate(preds)
    resid = pred - test.targets
    return Metrics(
        mse=float(np.mean(resid**2)),
        mae=float(np.mean(np.abs(resid))),
        mse_normalized=mse(np.concatenate(norm_preds), np.concatenate(norm_targets)),
        mae_normalized=mae(np.concatenate(norm_preds), np.concatenate(norm_targets)),
        per_horizon_mse=np.mean(resid**2, axis=0).tolist(),
    )


@dataclass
class AblationReport:
    entries: dict[str, Metrics]
    per_seed: dict[str, list[Metrics]]
    concat_widths: dict[str, int]
    seeds: list[int]

    def rows(self) -> list[dict]:
        out = []
        for name, m in self.entries.items():
            row = {"variant": name, "concat_width": self.concat_widths[name]}
            row.update(m.to_dict())
            row.pop("per_horizon_mse", None)
            out.append(row)
        return out

    def to_json(self) -> str:
        return json.dumps({"seeds": self.seeds, "rows": self.rows()}, indent=2, sort_keys=True)


ABLATION_VARIANTS = ("full", "no_ema", "no_landmark")


def ablation_configs(base: ModelConfig) -> dict[str, ModelConfig]:
    if not (base.embed.use_ema and base.embed.use_landmarks):
        raise ValueError("ablation base config must enable both EMA and landmarks")
    out = {}
    for name in ABLATION_VARIANTS:
        cfg = copy.deepcopy(base)
        if name == "no_ema":
            cfg.embed.use_ema = False
        elif name == "no_landmark":
            cfg.embed.use_landmarks = False
        out[name] = cfg
    return out


def _mean_metrics(ms: list[Metrics]) -> Metrics:
    return Metrics(
        mse=float(np.mean([m.mse for m in ms])),
        mae=float(np.mean([m.mae for m in ms])),
        mse_normalized=float(np.mean([m.mse_normalized for m in ms])),
        mae_normalized=float(np.mean([m.mae_normalized for m in ms])),
    )


def train_and_evaluate(cfg: ModelConfig, tcfg: TrainConfig, splits, seed: int) -> tuple[Metrics, TrainResult, Forecaster]:
    cfg = copy.deepcopy(cfg)
    cfg.seed = seed
    tcfg = copy.deepcopy(tcfg)
    tcfg.seed = seed
    model = Forecaster(cfg)
    train, val, test = splits
    result = train_model(model, train, val, tcfg)
    return evaluate_model(model, test, tcfg.eval_batch_size), result, model


def run_ablation(base: ModelConfig, tcfg: TrainConfig, data, seeds=(0,)) -> AblationReport:
    """Train the full model and its no-EMA / no-landmark variants under shared seeds.

    ``data`` is either a dataset (split with default ratios) or a
    ``(train, val, test)`` tuple of :class:`PairSet`.
    """
    splits = prepare_splits(data, base.lookback, base.horizon, stride=tcfg.pair_stride) if isinstance(data, SeriesDataset) else data
    entries, per_seed, widths = {}, {}, {}
    for name, cfg in ablation_configs(base).items():
        runs = [train_and_evaluate(cfg, tcfg, splits, s)[0] for s in seeds]
        per_seed[name] = runs
        entries[name] = _mean_metrics(runs)
        widths[name] = cfg.embed.concat_width(cfg.lookback)
    return AblationReport(entries, per_seed, widths, list(seeds))
