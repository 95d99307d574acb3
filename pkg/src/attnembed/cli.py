"""``attnembed`` command line entry point.

Every run writes ``resolved_config.json``, the subcommand's outputs and a
``run.json`` manifest (seed, metrics, SHA-256 of each artifact) into ``--out``.
Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import RunConfig, load_config, write_config
from .diagnostics import rank_report, write_rank_csv
from .errors import ConfigError, NumericError, ParseError
from .experiments import compare_embeddings, gradcheck_model, scan_grid, tiny_config
from .forecaster import Forecaster, load_checkpoint, save_checkpoint
from .theory import separation_report
from .training import evaluate_model, prepare_splits, run_ablation, train_model

SUBCOMMANDS = ("synth", "train", "eval", "compare", "ablate", "scan", "theory", "rank", "gradcheck")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("attnembed")


class RunContext:
    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.artifacts: list[Path] = []
        self.metrics: dict = {}

    def path(self, name: str) -> Path:
        p = self.out / name
        self.artifacts.append(p)
        return p

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default), encoding="utf-8")
        return p

    def write_rows(self, name: str, rows: list[dict]) -> Path:
        p = self.path(name)
        with p.open("w", newline="", encoding="utf-8") as fh:
            if rows:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                w.writeheader()
                w.writerows(rows)
        return p

    def finish(self, status: str = "ok") -> None:
        hashes = {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in self.artifacts if p.exists()}
        manifest = {
            "experiment": self.cfg.experiment,
            "seed": self.cfg.seed,
            "model_seed": self.cfg.model.seed,
            "train_seed": self.cfg.train.seed,
            "status": status,
            "metrics": self.metrics,
            "artifacts": hashes,
        }
        (self.out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _dataset(cfg: RunConfig) -> data_mod.SeriesDataset:
    if cfg.data.path:
        ds = data_mod.load_csv(cfg.data.path)
        if cfg.data.channels:
            missing = [c for c in cfg.data.channels if c not in ds.channel_names]
            if missing:
                raise ConfigError("data.channels", f"unknown channels {missing}")
            cols = [ds.channel_names.index(c) for c in cfg.data.channels]
            ds = data_mod.SeriesDataset(ds.values[:, cols], list(cfg.data.channels), ds.timestamps)
        return ds
    return data_mod.gen_synthetic(cfg.data.kind, cfg.data.synthetic)


def _splits(cfg: RunConfig):
    m = cfg.model
    return prepare_splits(_dataset(cfg), m.lookback, m.horizon, cfg.data.split, cfg.train.pair_stride)


def cmd_synth(ctx: RunContext) -> None:
    ds = data_mod.gen_synthetic(ctx.cfg.data.kind, ctx.cfg.data.synthetic)
    p = ctx.path(f"synthetic_{ctx.cfg.data.kind}.csv")
    data_mod.save_csv(ds, p)
    ctx.metrics = {"rows": ds.n_rows, "channels": ds.n_channels}
    print(f"wrote {ds.n_rows} rows to {p}")


def cmd_train(ctx: RunContext) -> None:
    cfg = ctx.cfg
    train, val, test = _splits(cfg)
    model = Forecaster(cfg.model)
    result = train_model(model, train, val, cfg.train)
    result.write_csv(ctx.path("loss_history.csv"))
    save_checkpoint(model, ctx.path("model.ckpt"), extra={"best_epoch": result.best_epoch})
    metrics = evaluate_model(model, test, cfg.train.eval_batch_size)
    ctx.metrics = {
        "best_epoch": result.best_epoch,
        "best_val_mse": result.best_val_mse,
        "epochs": len(result.history),
        "test": metrics.to_dict(),
    }
    ctx.write_json("metrics.json", ctx.metrics)
    print(f"test mse={metrics.mse:.6g} mae={metrics.mae:.6g} (best epoch {result.best_epoch})")


def cmd_eval(ctx: RunContext) -> None:
    cfg = ctx.cfg
    if not cfg.eval.checkpoint:
        raise ConfigError("eval.checkpoint", "required for eval")
    try:
        model = load_checkpoint(cfg.eval.checkpoint)
    except (ValueError, KeyError) as exc:
        raise OSError(f"unreadable checkpoint {cfg.eval.checkpoint}: {exc}") from exc
    m = model.cfg
    _, _, test = prepare_splits(_dataset(cfg), m.lookback, m.horizon, cfg.data.split, cfg.train.pair_stride)
    metrics = evaluate_model(model, test, cfg.train.eval_batch_size)
    ctx.metrics = {"test": metrics.to_dict()}
    ctx.write_json("metrics.json", ctx.metrics)
    print(f"test mse={metrics.mse:.6g} mae={metrics.mae:.6g}")


def cmd_compare(ctx: RunContext) -> None:
    cfg = ctx.cfg
    report = compare_embeddings(cfg.model, cfg.train, _splits(cfg), cfg.compare.seeds, cfg.compare.modes)
    ctx.write_rows("compare.csv", report.rows())
    summary = {"seeds": report.seeds}
    if "softmax" in report.metrics and "patch" in report.metrics:
        summary["mse_ratio_per_seed"] = report.ratios()
        summary["median_ratio"] = report.median_ratio()
        summary["worst_ratio"] = report.worst_ratio()
    ctx.metrics = summary
    ctx.write_json("compare.json", summary)
    for row in report.rows():
        print(f"{row['mode']:>8} seed={row['seed']} mse={row['mse']:.6g}")


def cmd_ablate(ctx: RunContext) -> None:
    cfg = ctx.cfg
    report = run_ablation(cfg.model, cfg.train, _splits(cfg), cfg.ablate.seeds)
    rows = report.rows()
    ctx.write_rows("ablation.csv", rows)
    ctx.metrics = {"rows": rows, "seeds": report.seeds}
    ctx.write_json("ablation.json", ctx.metrics)
    for row in rows:
        print(f"{row['variant']:>12} width={row['concat_width']} mse={row['mse']:.6g} mae={row['mae']:.6g}")


def cmd_scan(ctx: RunContext) -> None:
    cfg = ctx.cfg
    rows = scan_grid(cfg.model, cfg.train, _splits(cfg), cfg.scan.grid, cfg.scan.seeds, cfg.scan.product)
    ctx.write_rows("scan.csv", rows)
    ctx.metrics = {"rows": rows}
    ctx.write_json("scan.json", ctx.metrics)
    for row in rows:
        print(" ".join(f"{k}={v}" for k, v in row.items()))


def cmd_theory(ctx: RunContext) -> None:
    t = ctx.cfg.theory
    report = separation_report(t.spec(), t.lam, t.trials, t.exclude_pair)
    report.to_json(ctx.path("separation.json"))
    report.write_trials_csv(ctx.path("separation_trials.csv"))
    ctx.metrics = report.summary()
    print(
        f"raw within={report.raw_within_mean:.4g} between={report.raw_between_mean:.4g} "
        f"gap={report.relative_gap:.4g} (lower95 {report.relative_gap_lower95:.4g}) "
        f"misorder raw={report.raw_misorder_rate:.4f} repr={report.repr_misorder_rate:.4f}"
    )


def cmd_rank(ctx: RunContext) -> None:
    cfg = ctx.cfg
    train, val, test = _splits(cfg)
    rng = np.random.default_rng(cfg.model.seed)
    pick = rng.choice(len(test), size=min(cfg.rank.batch_size, len(test)), replace=False)
    batch = test.inputs[np.sort(pick)]
    train_fn = (lambda model: train_model(model, train, val, cfg.train)) if cfg.rank.trained else None
    profiles = rank_report(cfg.model, batch, cfg.rank.depths, cfg.rank.modes, train_fn)
    write_rank_csv(profiles, ctx.path("rank.csv"))
    ctx.metrics = {f"{m}/{d}": p.values for (m, d), p in profiles.items()}
    for (mode, depth), prof in profiles.items():
        print(f"{mode:>8} depth={depth} " + " ".join(f"{v:.4f}" for v in prof.values))


def cmd_gradcheck(ctx: RunContext) -> None:
    g = ctx.cfg.gradcheck
    results = {}
    for mode in g.modes:
        rep = gradcheck_model(tiny_config(mode), g.samples, ctx.cfg.model.seed, g.step)
        results[mode] = {"max_relative_error": rep.max_relative_error, "worst_parameter": rep.worst_parameter}
        print(f"{mode}: max relative error {rep.max_relative_error:.3e} ({rep.worst_parameter})")
    ctx.metrics = results
    ctx.write_json("gradcheck.json", results)
    worst = max(r["max_relative_error"] for r in results.values())
    if not worst <= g.tolerance:
        raise NumericError(f"gradient check failed: max relative error {worst:.3e} > {g.tolerance:g}")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "ablate": cmd_ablate,
    "scan": cmd_scan,
    "theory": cmd_theory,
    "rank": cmd_rank,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attnembed", description="Attention-as-embedding forecasting lab")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config key (dotted path; JSON value)")
    parser.add_argument("--out", help="output directory (default: config output_dir or runs/<experiment>)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print("error: " + json.dumps({"code": code, "kind": kind, "message": message}), file=sys.stderr)
    return code


def run(subcommand: str, cfg: RunConfig, out: str | Path) -> int:
    """Execute one subcommand against a resolved config; returns the exit code."""
    if subcommand not in COMMANDS:
        return _fail(EXIT_CONFIG, "usage", f"unknown subcommand {subcommand!r}")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        ctx = RunContext(cfg, out)
        write_config(cfg, ctx.path("resolved_config.json"))
        COMMANDS[subcommand](ctx)
        ctx.finish()
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (NumericError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    except ParseError as exc:
        return _fail(EXIT_IO, "parse", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    out = args.out or cfg.output_dir or f"runs/{cfg.experiment}"
    return run(args.subcommand, cfg, out)


if __name__ == "__main__":
    sys.exit(main())
