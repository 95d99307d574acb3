"""Attention-map token embeddings for channel-independent time series forecasting."""
from .config import RunConfig, load_config, resolve_config
from .data import SeriesDataset, SyntheticParams, gen_synthetic, load_csv, save_csv
from .diagnostics import rank_report, relative_residual
from .embedding import EmbedConfig, build_embedding, embed_series
from .errors import AttnEmbedError, ConfigError, ContractError, DimensionError, NumericError, ParseError
from .experiments import compare_embeddings, gradcheck_model, tiny_config
from .forecaster import Forecaster, ModelConfig, load_checkpoint, save_checkpoint
from .preprocess import denormalize, instance_normalize
from .tensor import Tensor
from .theory import ClusterSpec, separation_report
from .training import TrainConfig, evaluate_model, prepare_splits, run_ablation, train_model

__version__ = "0.1.0"

__all__ = [
    "AttnEmbedError",
    "ClusterSpec",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "EmbedConfig",
    "Forecaster",
    "ModelConfig",
    "NumericError",
    "ParseError",
    "RunConfig",
    "SeriesDataset",
    "SyntheticParams",
    "Tensor",
    "TrainConfig",
    "build_embedding",
    "compare_embeddings",
    "denormalize",
    "embed_series",
    "evaluate_model",
    "gen_synthetic",
    "gradcheck_model",
    "instance_normalize",
    "load_checkpoint",
    "load_config",
    "load_csv",
    "prepare_splits",
    "rank_report",
    "relative_residual",
    "resolve_config",
    "run_ablation",
    "save_checkpoint",
    "save_csv",
    "separation_report",
    "tiny_config",
    "train_model",
]
