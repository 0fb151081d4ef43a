"""Command-line entry point: train, eval, bench, count, schedule.

Exit codes: 0 success, 1 configuration or usage error, 2 data or
checkpoint error, 3 numeric failure (non-finite values).
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bench, checkpoint, complexity, hwsched
from .data import DataError, Dataset, load_idx, load_pgm_dir
from .model import ConfigError, GeccoModel, ModelConfig, cxr_config, mstar_config
from .runconfig import RunConfig, load_run_config
from .tensor import NonFiniteError
from .train import evaluate, train_loop

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

PROFILES = {"mnist": ModelConfig, "mstar": mstar_config, "cxr": cxr_config}


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _require_file(path: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    return path


def _load_split(cfg: RunConfig, split: str) -> Dataset | None:
    directory = getattr(cfg, f"{split}_dir")
    images, labels = getattr(cfg, f"{split}_images"), getattr(cfg, f"{split}_labels")
    if directory:
        return load_pgm_dir(_require_file(directory), size=(cfg.image_h, cfg.image_w), method=cfg.resize)
    if images or labels:
        if not (images and labels):
            raise ConfigError(f"{split}_images and {split}_labels must be given together")
        ds = load_idx(_require_file(images), _require_file(labels))
        return ds.resized(cfg.image_h, cfg.image_w, cfg.resize)
    return None


def _align_classes(ds: Dataset, class_names) -> Dataset:
    class_names = tuple(class_names)
    if ds.class_names == class_names:
        return ds
    if not set(ds.class_names) <= set(class_names):
        raise DataError(f"dataset classes {ds.class_names} do not match the model's {class_names}")
    # dataset may lack some classes; label indices follow the model's table
    lookup = np.array([class_names.index(n) for n in ds.class_names], dtype=np.int64)
    return Dataset(ds.images, lookup[ds.labels], class_names)


def cmd_train(args) -> int:
    cfg, defaulted = load_run_config(args.config)
    for key in defaulted:
        print(f"notice: {key} not set, using default {getattr(cfg, key)!r}", file=sys.stderr)
    train = _load_split(cfg, "train")
    if train is None:
        raise ConfigError("no training data: set train_dir or train_images/train_labels")
    if len(train) == 0:
        raise DataError("training set is empty")
    evald = _load_split(cfg, "eval")
    model_cfg = cfg.model_config()
    if train.num_classes > model_cfg.num_classes:
        raise DataError(f"dataset has {train.num_classes} classes, config says {model_cfg.num_classes}")
    class_names = tuple(train.class_names) + tuple(
        str(i) for i in range(train.num_classes, model_cfg.num_classes))
    if evald is not None:
        evald = _align_classes(evald, class_names)
    model = GeccoModel.init(model_cfg, cfg.seed)

    if not args.quiet:
        print(f"{'epoch':>5} {'loss':>10} {'train_acc':>10} {'eval_acc':>10} {'seconds':>8}")

    def log(epoch, report):
        if args.quiet:
            return
        ev = report.eval_accuracy[-1]
        ev = f"{ev:10.4f}" if ev is not None else f"{'-':>10}"
        print(f"{epoch:>5} {report.loss[-1]:10.4f} {report.train_accuracy[-1]:10.4f} {ev} {report.seconds[-1]:8.2f}")

    train_loop(model, train, evald, epochs=cfg.epochs, seed=cfg.seed, lr=cfg.lr, log=log)
    checkpoint.save(args.out_checkpoint, model, class_names)
    print(f"wrote {args.out_checkpoint}")
    return EXIT_OK


def _eval_dataset(args, model_cfg: ModelConfig, class_names) -> Dataset:
    size = (model_cfg.image_h, model_cfg.image_w)
    if args.pgm_dir:
        # directory names are matched against the checkpoint's class table
        return _align_classes(load_pgm_dir(_require_file(args.pgm_dir), size=size), class_names)
    # IDX labels are indices into the checkpoint's class table
    images, labels = args.idx
    return load_idx(_require_file(images), _require_file(labels), class_names).resized(*size)


def cmd_eval(args) -> int:
    model, class_names = checkpoint.load(_require_file(args.checkpoint))
    ds = _eval_dataset(args, model.config, class_names)
    if len(ds) == 0:
        raise DataError("evaluation set is empty")
    acc, preds = evaluate(model, ds, args.batch_size)
    print(f"top-1 accuracy {acc:.4f} ({int(round(acc * len(ds)))}/{len(ds)})")
    for i, name in enumerate(class_names):
        mask = ds.labels == i
        if mask.any():
            print(f"  class {name:<12} {float((preds[mask] == i).mean()):.4f}  (n={int(mask.sum())})")
    return EXIT_OK


def _model_config_from_args(args) -> ModelConfig:
    if getattr(args, "config", None):
        cfg = load_run_config(args.config)[0].model_config()
    else:
        cfg = PROFILES[args.profile]()
    overrides = {}
    if getattr(args, "batch_size", None):
        overrides["batch_size"] = args.batch_size
    if getattr(args, "gcn_layers", None) is not None:
        overrides["gcn_layers"] = args.gcn_layers
    if getattr(args, "d_out", None):
        overrides["d_out"] = args.d_out
    if getattr(args, "no_gcn", False):
        overrides["use_gcn"] = False
    if getattr(args, "no_attention", False):
        overrides["use_attention"] = False
    return cfg.replace(**overrides) if overrides else cfg


def cmd_count(args) -> int:
    cfg = _model_config_from_args(args)
    report = complexity.complexity_report(cfg)
    print(report.to_csv() if args.csv else report.to_text(), end="\n" if not args.csv else "")
    if not args.csv and cfg.image_h == 128 and cfg.image_w == 128 and cfg.d_out == 86:
        print()
        print(complexity.published_comparison(report))
    return EXIT_OK


def cmd_schedule(args) -> int:
    cfg = _model_config_from_args(args)
    sched = hwsched.emit_schedule(cfg)
    mem = hwsched.estimate_single_load_memory(cfg, budget_bytes=args.budget_bytes)
    if args.csv:
        print(sched.to_csv(), end="")
    else:
        print(sched.to_text())
        print()
        print(mem.to_text())
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.runs < 2:
        raise UsageError("--runs must be at least 2 (a standard deviation needs two samples)")
    if args.warmup < 1:
        raise UsageError("--warmup must be at least 1")
    if args.checkpoint:
        model, _ = checkpoint.load(_require_file(args.checkpoint))
        base = model.config
    else:
        base = _model_config_from_args(args)
        model = None
    sizes = args.batch_sizes or [base.batch_size]
    reports = []
    for b in sizes:
        cfg = base.replace(batch_size=b)
        m = model if model is not None else GeccoModel.init(cfg, args.seed)
        m.eval()
        reports.append(bench.bench_inference(m, bench.random_images(cfg, b, args.seed), args.warmup, args.runs))
    if args.csv:
        print(bench.to_csv(reports), end="")
    else:
        for r in reports:
            print(r.to_text())
    return EXIT_OK


def _add_model_flags(p, with_batch=True):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="run config file (key = value)")
    src.add_argument("--profile", choices=sorted(PROFILES), default="mnist",
                     help="built-in architecture profile (default: mnist, 28x28 D=86)")
    if with_batch:
        p.add_argument("--batch-size", type=int, help="override the batch size")
    p.add_argument("--gcn-layers", type=int, help="override the number of graph convolution layers")
    p.add_argument("--d-out", type=int, help="override the FC feature length")
    p.add_argument("--no-gcn", action="store_true", help="disable the graph path")
    p.add_argument("--no-attention", action="store_true", help="disable batch attention and its residual")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gecco", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config and write a checkpoint")
    p.add_argument("config", help="run config file (key = value)")
    p.add_argument("out_checkpoint", help="checkpoint path to write")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch rows")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="report top-1 and per-class accuracy of a checkpoint")
    p.add_argument("checkpoint")
    data = p.add_mutually_exclusive_group(required=True)
    data.add_argument("--idx", nargs=2, metavar=("IMAGES", "LABELS"), help="IDX image and label files")
    data.add_argument("--pgm-dir", help="directory with one subdirectory of P5 PGMs per class")
    p.add_argument("--batch-size", type=int, help="inference batch size (default: the model's)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time batched inference (latency ms, throughput imgs/ms)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="benchmark a trained checkpoint")
    src.add_argument("--random-weights", action="store_true", help="benchmark a seeded untrained model")
    _add_model_flags(p, with_batch=False)
    p.add_argument("--batch-sizes", type=int, nargs="+", help="batch sizes to sweep")
    p.add_argument("--warmup", type=int, default=3, help="discarded warmup runs (>= 1)")
    p.add_argument("--runs", type=int, default=20, help="timed runs (>= 2)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", action="store_true", help="CSV output")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("count", help="MACs, parameters, model size and layer count")
    _add_model_flags(p)
    p.add_argument("--csv", action="store_true", help="CSV output")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("schedule", help="kernel-unit schedule and single-load memory estimate")
    _add_model_flags(p)
    p.add_argument("--budget-bytes", type=int, default=hwsched.DEFAULT_BUDGET_BYTES,
                   help="on-chip memory budget in bytes (default 35 MB)")
    p.add_argument("--csv", action="store_true", help="CSV output (schedule records only)")
    p.set_defaults(func=cmd_schedule)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except (DataError, checkpoint.CheckpointError, OSError) as exc:
        _err(str(exc))
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as exc:
        _err(f"numeric failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
