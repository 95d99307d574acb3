"""Run configuration: JSON file + ``--set`` overrides + defaults, fully validated.

Layout of a config file (every key optional)::

    {
      "experiment": "name",
      "seed": null,                  # when set, overrides every sub-seed
      "output_dir": "runs/name",
      "data":    {"path": null, "kind": "f2", "synthetic": {...}, "split": {...}},
      "model":   {"lookback": 96, "horizon": 96, ..., "embed": {...}},
      "embed":   {...},              # shorthand for model.embed
      "train":   {"learning_rate": 1e-4, ...},
      "theory":  {"m": 4, "d": 128, "s": 64, "K": 50, "trials": 200, ...},
      "rank":    {"depths": [3, 6], "modes": [...], "trained": true, ...},
      "compare": {"seeds": [0, 1, 2], "modes": ["softmax", "patch"]},
      "ablate":  {"seeds": [0]},
      "scan":    {"grid": {"embed.ema_alpha": [0.3, 0.5, 0.7, 0.9]}, "seeds": [0]},
      "eval":    {"checkpoint": null},
      "gradcheck": {"modes": ["softmax", "rbf", "poly"], "tolerance": 1e-4}
    }
"""
from __future__ import annotations

import copy
import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import SplitSpec, SyntheticParams
from .embedding import EmbedConfig
from .errors import ConfigError
from .forecaster import ModelConfig
from .theory import ClusterSpec
from .training import TrainConfig

__all__ = ["RunConfig", "load_config", "resolve_config", "apply_override", "SEED_ENV"]

SEED_ENV = "ATTNEMBED_SEED"


@dataclass
class DataSection:
    path: str | None = None
    kind: str = "f2"
    synthetic: SyntheticParams = field(default_factory=SyntheticParams)
    split: SplitSpec = field(default_factory=SplitSpec)
    channels: list[str] | None = None


@dataclass
class TheorySection:
    m: int = 4
    d: int = 128
    s: float = 64.0
    K: int = 50
    seed: int = 0
    trials: int = 200
    lam: float | None = None
    exclude_pair: bool = True

    def spec(self) -> ClusterSpec:
        return ClusterSpec(self.m, self.d, self.s, self.K, self.seed)


@dataclass
class RankSection:
    depths: list[int] = field(default_factory=lambda: [3, 6])
    modes: list[str] = field(default_factory=lambda: ["patch", "softmax", "rbf", "poly"])
    trained: bool = True
    batch_size: int = 32


@dataclass
class CompareSection:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    modes: list[str] = field(default_factory=lambda: ["softmax", "patch"])


@dataclass
class AblateSection:
    seeds: list[int] = field(default_factory=lambda: [0])


@dataclass
class ScanSection:
    grid: dict[str, list] = field(default_factory=lambda: {"embed.ema_alpha": [0.3, 0.5, 0.7, 0.9]})
    seeds: list[int] = field(default_factory=lambda: [0])
    product: bool = True


@dataclass
class EvalSection:
    checkpoint: str | None = None


@dataclass
class GradcheckSection:
    modes: list[str] = field(default_factory=lambda: ["softmax", "rbf", "poly"])
    tolerance: float = 1e-4
    step: float = 1e-5
    samples: int = 3


@dataclass
class RunConfig:
    experiment: str = "attnembed"
    seed: int | None = None
    output_dir: str | None = None
    data: DataSection = field(default_factory=DataSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    theory: TheorySection = field(default_factory=TheorySection)
    rank: RankSection = field(default_factory=RankSection)
    compare: CompareSection = field(default_factory=CompareSection)
    ablate: AblateSection = field(default_factory=AblateSection)
    scan: ScanSection = field(default_factory=ScanSection)
    eval: EvalSection = field(default_factory=EvalSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        self.data.synthetic.validate()
        if self.data.kind not in ("f1", "f2"):
            raise ConfigError("data.kind", "must be 'f1' or 'f2'")
        if self.data.path is not None and not Path(self.data.path).exists():
            raise ConfigError("data.path", f"file not found: {self.data.path}")
        if self.eval.checkpoint is not None and not Path(self.eval.checkpoint).exists():
            raise ConfigError("eval.checkpoint", f"file not found: {self.eval.checkpoint}")
        try:
            self.theory.spec().validate()
        except ValueError as exc:
            raise ConfigError("theory", str(exc)) from None
        if self.theory.trials < 30:
            raise ConfigError("theory.trials", "must be >= 30")
        if self.gradcheck.tolerance <= 0:
            raise ConfigError("gradcheck.tolerance", "must be > 0")
        for key in self.scan.grid:
            _lookup_field(self.model, key.split("."), f"scan.grid.{key}")


def _lookup_field(obj, parts: list[str], label: str):
    for p in parts:
        if not dataclasses.is_dataclass(obj) or p not in {f.name for f in dataclasses.fields(obj)}:
            raise ConfigError(label, f"unknown key {p!r}")
        obj = getattr(obj, p)
    return obj


def _build(cls, data, path: str):
    """Instantiate dataclass ``cls`` from a plain dict, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", f"expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        label = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(label, "unknown key")
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, label)
        else:
            kwargs[key] = _coerce(value, hint, label)
    return cls(**kwargs)


def _coerce(value, hint, label):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if value is None:
        if type(None) in args or hint is typing.Any:
            return None
        raise ConfigError(label, "may not be null")
    if origin is typing.Union or (origin is not None and type(None) in args):
        non_null = [a for a in args if a is not type(None)]
        for a in non_null:
            try:
                return _coerce(value, a, label)
            except ConfigError:
                continue
        raise ConfigError(label, f"invalid value {value!r}")
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(label, f"expected a list, got {value!r}")
        return origin(value)
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(label, "expected an object")
        return dict(value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(label, f"expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(label, f"expected an integer, got {value!r}")
        return int(value)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(label, f"expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(label, f"expected a string, got {value!r}")
        return value
    return value


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def apply_override(raw: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value`` (value parsed as JSON, else kept as a string)."""
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like key=value")
    key, text = assignment.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = {}
    cursor = node
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cursor[p] = {}
        cursor = cursor[p]
    cursor[parts[-1]] = value
    return _deep_merge(raw, node)


def resolve_config(raw: dict | None = None, overrides=(), env: dict | None = None) -> RunConfig:
    """Defaults <- ``raw`` <- ``overrides``; then the seed env var wins over everything."""
    raw = dict(raw or {})
    for item in overrides:
        raw = apply_override(raw, item)
    if "embed" in raw:
        raw = _deep_merge(raw, {"model": {"embed": raw.pop("embed")}})
    cfg = _build(RunConfig, raw, "")
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg.seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(SEED_ENV, f"not an integer: {env[SEED_ENV]!r}") from None
    if cfg.seed is not None:
        cfg.model.seed = cfg.seed
        cfg.train.seed = cfg.seed
        cfg.data.synthetic.seed = cfg.seed
        cfg.theory.seed = cfg.seed
    cfg.validate()
    return cfg


def load_config(path: str | Path | None = None, overrides=(), env: dict | None = None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from exc
        try:
            raw = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return resolve_config(raw, overrides, env)


def write_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
