"""Command-line entry point: gen-data, train, eval, analyze, bench.

Exit codes: 0 success, 2 configuration or usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import secrets
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import numerics as nx
from .analytics import (
    analyze,
    render_boxplots,
    write_embeddings_csv,
    write_errors_csv,
    write_report_json,
    write_summaries_csv,
)
from .config import RunConfig, load_config
from .data import Dataset, generate_synthetic, load_dataset, save_csv, save_dataset, split
from .errors import ConfigError, DimensionError, RuntimeDataError, UsageError
from .evaluation import evaluate
from .model import EmbeddingDimWarning, init_model, load_checkpoint, save_checkpoint
from .seeding import derive_int
from .training import fit, write_history_csv, write_timing_csv

logger = logging.getLogger("quadnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3
BENCH_BATCH_SIZES = (2, 5, 16, 32, 64)
CHECKPOINT_NAME = "model.qnm"


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    synth = cfg.synth
    overrides = {
        "num_classes": args.classes,
        "input_dim": args.dim,
        "samples_per_class": args.per_class,
        "outlier_count": args.outliers,
        "cluster_sigma": args.sigma,
        "min_center_separation": args.separation,
        "outlier_law": args.outlier_law,
    }
    synth = dataclasses.replace(synth, **{k: v for k, v in overrides.items() if v is not None})
    if args.seed is not None:
        root_seed = args.seed
    elif args.config is not None:
        root_seed = cfg.seed
    else:
        root_seed = secrets.randbits(32)
    synth.seed = derive_int(root_seed, "data")
    synth.validate()
    ds = generate_synthetic(synth)
    out = Path(args.out or cfg.paths.data or "fixture.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    manifest = {
        "command": "gen-data",
        "version": __version__,
        "seed": root_seed,
        "synth": dataclasses.asdict(synth),
        "n": ds.n,
        "sha256": ds.digest(),
        "file": out.name,
    }
    _write_json(out.with_name(out.name + ".manifest.json"), manifest)
    print(f"wrote {ds.n} samples to {out} (seed {root_seed})")
    return EXIT_OK


# ---------------------------------------------------------------- train


def _apply_train_flags(cfg: RunConfig, args) -> None:
    if args.epochs is not None:
        cfg.train.max_epochs = args.epochs
    if args.patience is not None:
        cfg.train.patience = args.patience
    if args.lr is not None:
        cfg.train.lr = args.lr
    if args.batch_size is not None:
        cfg.sampler.batch_size = args.batch_size
    if args.embed_dim is not None:
        cfg.model.embed_dim = args.embed_dim


def cmd_train(args) -> int:
    cfg = _resolve(args)
    _apply_train_flags(cfg, args)
    cfg.validate()
    data_path = args.data or cfg.paths.data
    if not data_path:
        raise ConfigError("no dataset given (--data or paths.data)", "paths.data")
    out = _out_dir(args.out or cfg.paths.out or "run")
    ds = load_dataset(data_path)
    train_ds, val_ds, test_ds = split(ds, cfg.split.ratios, cfg.split_seed(), cfg.split.stratified)
    for name, piece in (("train", train_ds), ("val", val_ds), ("test", test_ds)):
        save_csv(piece, out / f"{name}.csv")
    model_cfg = cfg.model_config(ds.input_dim, ds.num_classes)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmbeddingDimWarning)
        model = init_model(model_cfg)
    for w in caught:
        logger.warning("%s", w.message)
    model, history = fit(model, train_ds, val_ds, cfg.train_config())
    save_checkpoint(model, out / CHECKPOINT_NAME)
    write_history_csv(history, out / "history.csv")
    write_timing_csv(history, out / "timing.csv")
    summary = {
        "best_epoch": history.best_epoch,
        "best_val_balanced_accuracy": history.best_metric,
        "epochs_run": len(history),
        "stopped_early": history.stopped_early,
        "dataset_sha256": ds.digest(),
        "sizes": {"train": train_ds.n, "val": val_ds.n, "test": test_ds.n},
    }
    _write_json(out / "summary.json", summary)
    _write_json(out / "manifest.json", {"command": "train", "version": __version__, "config": cfg.to_dict(),
                                        "model": dataclasses.asdict(model_cfg)})
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- eval / analyze


def _load_for_inference(args, cfg: RunConfig):
    ckpt = Path(args.checkpoint or cfg.paths.checkpoint or "")
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint {str(ckpt)!r} not found", "paths.checkpoint")
    model = load_checkpoint(ckpt)
    data_path = args.data or cfg.paths.data or (ckpt.parent / f"{args.split}.csv")
    ds = load_dataset(data_path)
    if ds.input_dim != model.config.input_dim:
        raise DimensionError(f"dataset has {ds.input_dim} features, model expects {model.config.input_dim}")
    if ds.num_classes > model.config.num_classes:
        raise DimensionError(f"dataset has {ds.num_classes} classes, model knows {model.config.num_classes}")
    # the file may not contain the highest class; keep the model's label range
    ds = Dataset(ds.features, ds.labels, ds.ids, model.config.num_classes)
    return model, ds, Path(data_path)


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    k = args.k if args.k is not None else cfg.k
    model, ds, data_path = _load_for_inference(args, cfg)
    report = evaluate(model, ds, k)
    payload = {**report.to_dict(), "seed": cfg.seed, "dataset": str(data_path), "dataset_sha256": ds.digest()}
    out = Path(args.out) if args.out else None
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_json(out, payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _resolve(args)
    alpha = args.alpha if args.alpha is not None else cfg.alpha
    beta = args.beta if args.beta is not None else cfg.beta
    model, ds, data_path = _load_for_inference(args, cfg)
    out = _out_dir(args.out or cfg.paths.out or "analysis")
    model.eval()
    emb = model.embed(nx.Tensor(ds.features)).data
    report = analyze(emb, ds.labels, alpha, beta)
    write_report_json(report, out / "analysis.json", dataset=str(data_path), dataset_sha256=ds.digest())
    write_errors_csv(report, out / "errors.csv")
    write_summaries_csv(report.intra + report.inter, out / "distances.csv")
    if report.intra:
        (out / "intra.svg").write_text(render_boxplots(report.intra, "Intra-class distances"))
    if report.inter:
        (out / "inter.svg").write_text(render_boxplots(report.inter, "Inter-class distances"))
    write_embeddings_csv(ds.ids, ds.labels, emb, out / "embeddings.csv")
    print(f"{len(report.errors)} error estimates, {len(report.skipped)} skipped; written to {out}")
    for s in report.skipped:
        print(f"skipped class {s['class']} ({s['table']}): {s['reason']}")
    return EXIT_OK


# ---------------------------------------------------------------- bench


def bench(model, batch_sizes=BENCH_BATCH_SIZES, repeats: int = 10, warmup: int = 2, seed: int = 0) -> list[dict]:
    """Mean and sample standard deviation of eval-mode forward time per batch, in ms."""
    rng = np.random.default_rng(seed)
    model.eval()
    rows = []
    for b in batch_sizes:
        x = nx.Tensor(rng.normal(size=(b, model.config.input_dim)))
        for _ in range(warmup):
            nx.softmax(model.forward(x)[1])
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            nx.softmax(model.forward(x)[1])
            times.append((time.perf_counter() - t0) * 1e3)
        t = np.array(times)
        rows.append({"batch_size": b, "mean_ms": float(t.mean()), "std_ms": float(t.std(ddof=1)) if repeats > 1 else 0.0})
    return rows


def cmd_bench(args) -> int:
    cfg = _resolve(args)
    ckpt = args.checkpoint or cfg.paths.checkpoint
    if not ckpt or not Path(ckpt).is_file():
        raise ConfigError(f"checkpoint {ckpt!r} not found", "paths.checkpoint")
    model = load_checkpoint(ckpt)
    rows = bench(model, repeats=args.repeats, warmup=args.warmup, seed=cfg.seed)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out), {"rows": rows, "repeats": args.repeats, "warmup": args.warmup})
    print(f"{'batch':>6} {'mean ms':>10} {'std ms':>10}")
    for r in rows:
        print(f"{r['batch_size']:>6} {r['mean_ms']:>10.3f} {r['std_ms']:>10.3f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--seed", type=int, help="root seed (overrides the config)")
        p.add_argument("--out", help=out_help)
        return p

    g = common(sub.add_parser("gen-data", help="write a synthetic cluster dataset"), "dataset path (.csv or .bin)")
    g.add_argument("--classes", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--per-class", type=int)
    g.add_argument("--outliers", type=int)
    g.add_argument("--sigma", type=float)
    g.add_argument("--separation", type=float, help="minimum centre distance in units of sigma")
    g.add_argument("--outlier-law", choices=("uniform_box", "shifted_gaussians"))
    g.set_defaults(func=cmd_gen_data)

    t = common(sub.add_parser("train", help="split a dataset and fit a model"), "run directory")
    t.add_argument("--data")
    t.add_argument("--epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--embed-dim", type=int)
    t.set_defaults(func=cmd_train)

    for name, func, out_help in (
        ("eval", cmd_eval, "metrics JSON path"),
        ("analyze", cmd_analyze, "output directory"),
    ):
        p = common(sub.add_parser(name), out_help)
        p.add_argument("--checkpoint")
        p.add_argument("--data", help="dataset file; defaults to <checkpoint dir>/<split>.csv")
        p.add_argument("--split", default="test", choices=("train", "val", "test"))
        if name == "eval":
            p.add_argument("--k", type=int)
        else:
            p.add_argument("--alpha", type=float)
            p.add_argument("--beta", type=float)
        p.set_defaults(func=func)

    b = common(sub.add_parser("bench", help="time eval-mode forward passes"), "timing JSON path")
    b.add_argument("--checkpoint")
    b.add_argument("--repeats", type=int, default=10)
    b.add_argument("--warmup", type=int, default=2)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeDataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
