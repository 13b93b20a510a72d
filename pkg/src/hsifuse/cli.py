"""``hsifuse`` command line: synth, split, train, eval, map, sweep, gradcheck."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .data import (
    FRACTION_PRESETS,
    CubeFormatError,
    load_cube,
    load_split,
    make_disjoint_split,
    make_synthetic,
    normalize_bands,
    save_cube,
    save_split,
)
from .data.patches import PatchSpec, candidate_mask
from .fusion import MODES, FusionModel
from .gradsuite import format_suite, run_suite
from .metrics import MetricsReport, emit_map
from .sst import SstConfig
from .training import (
    SWEEP_AXES,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    format_table,
    model_config,
    model_from_checkpoint,
    predict,
    prepare_data,
    sweep,
    train,
)


class CliError(Exception):
    pass


def _fractions(text: str) -> tuple[float, float, float]:
    if text in FRACTION_PRESETS:
        return FRACTION_PRESETS[text]
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"fractions must be f,f,f or a preset, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("fractions need three comma-separated values")
    return parts


def _need(path, what: str) -> Path:
    if path is None:
        raise CliError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} file not found: {p}")
    return p


def _load_cube(args):
    cube, labels = load_cube(_need(args.cube, "cube"))
    return normalize_bands(cube), labels


def _train_config(args, patch_size=None) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch,
        learning_rate=args.lr,
        decay=args.decay,
        epochs=args.epochs,
        seed=args.seed,
        patch_size=patch_size or args.patch_size,
        heads=args.heads,
    )


def _data_for(args, cube, labels, patch_size):
    split = load_split(_need(args.split, "split"))
    if split.shape != labels.shape:
        raise CliError(f"split raster {split.shape} does not match cube {labels.shape}")
    return prepare_data(cube, labels, patch_size, split.fractions, split.seed, split=split)


def cmd_synth(args) -> int:
    out = Path(args.out or "synthetic.hsc")
    cube, labels = make_synthetic(args.rows, args.cols, args.bands, args.classes, args.seed,
                                   noise=args.noise, blobs_per_class=args.blobs)
    save_cube(out, cube, labels)
    counts = labels.class_counts()
    print(f"wrote {out}: {args.rows}x{args.cols}x{args.bands}, classes {counts}")
    return 0


def cmd_split(args) -> int:
    _, labels = load_cube(_need(args.cube, "cube"))
    fractions = FRACTION_PRESETS[args.preset] if args.preset else args.fractions
    eligible = candidate_mask(labels.shape, PatchSpec(args.patch_size))
    split = make_disjoint_split(labels, fractions, args.seed, eligible=eligible)
    out = Path(args.out or "split.json")
    save_split(out, split)
    print(f"wrote {out}: train {split.train.size}, val {split.val.size}, test {split.test.size}")
    return 0


def cmd_train(args) -> int:
    cube, labels = _load_cube(args)
    data = _data_for(args, cube, labels, args.patch_size)
    cfg = _train_config(args)
    mc = model_config(cube.B, labels.n_classes, cfg, args.mode, sst=SstConfig(tokens=args.tokens))
    model = FusionModel(mc, seed=args.seed)
    ckpt = Path(args.checkpoint or "model.hsck")
    log_path = Path(args.out or ckpt.with_suffix(".log.jsonl"))
    try:
        result = train(model, data, cfg, log_path=log_path, deterministic=args.deterministic)
    except TrainingDiverged as exc:
        save_checkpoint(ckpt, exc.checkpoint)
        raise CliError(f"training diverged ({exc}); last good checkpoint written to {ckpt}") from None
    save_checkpoint(ckpt, result.best)
    best = max(result.log, key=lambda r: r["val_kappa"])
    print(f"wrote {ckpt} (epoch {result.best.epoch}, val kappa {best['val_kappa']:.4f}) and {log_path}")
    return 0


def _model_and_data(args):
    ck = load_checkpoint(_need(args.checkpoint, "checkpoint"))
    model = model_from_checkpoint(ck)
    cube, labels = _load_cube(args)
    if cube.B != model.config.n_bands:
        raise CliError(f"checkpoint expects {model.config.n_bands} bands, cube has {cube.B}")
    return model, _data_for(args, cube, labels, model.config.patch_size)


def cmd_eval(args) -> int:
    model, data = _model_and_data(args)
    report = MetricsReport.from_matrix(evaluate(model, data, args.role, args.batch), args.role)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    print(report.to_text())
    return 0


def cmd_map(args) -> int:
    model, data = _model_and_data(args)
    idx = data.role(args.role)
    pred = predict(model, data.patches, idx, args.batch) + 1 if idx.size else np.zeros(0, np.int64)
    out = Path(args.out or f"{args.role}_map.ppm")
    emit_map(out, data.patches.labels.shape, idx, idx, pred, data.n_classes)
    print(f"wrote {out}: {idx.size} {args.role} pixels")
    return 0


def cmd_sweep(args) -> int:
    cube, labels = _load_cube(args)
    values = [float(v) if args.axis == "train_fraction" else int(v) for v in args.values.split(",")] \
        if args.values else list(SWEEP_AXES[args.axis])
    rows = sweep(args.axis, values, cube, labels, _train_config(args), args.fractions,
                 sst=SstConfig(tokens=args.tokens))
    table = format_table(rows, args.axis)
    if args.out:
        Path(args.out).write_text(table)
    sys.stdout.write(table)
    return 0


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    results = run_suite(seed=args.seed)
    print(format_suite(results))
    if not args.deterministic:
        print(f"elapsed {time.perf_counter() - t0:.1f}s")
    if args.out:
        Path(args.out).write_text(json.dumps([r.__dict__ for r in results], indent=2) + "\n")
    bad = [r.name for r in results if not r.ok]
    if bad:
        raise CliError(f"gradient check failed for: {', '.join(bad)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--cube")
    common.add_argument("--split")
    common.add_argument("--checkpoint")
    common.add_argument("--out")
    common.add_argument("--patch-size", type=int, default=8)
    common.add_argument("--tokens", type=int, default=64)
    common.add_argument("--heads", type=int, default=None)
    common.add_argument("--epochs", type=int, default=50)
    common.add_argument("--batch", type=int, default=56)
    common.add_argument("--lr", type=float, default=1e-4)
    common.add_argument("--decay", type=float, default=1e-6)
    common.add_argument("--fractions", type=_fractions, default=FRACTION_PRESETS["default"])
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--deterministic", action="store_true")

    parser = argparse.ArgumentParser(prog="hsifuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="write a synthetic labelled cube")
    p.add_argument("--rows", type=int, default=32)
    p.add_argument("--cols", type=int, default=32)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.03)
    p.add_argument("--blobs", type=int, default=1, help="contiguous blobs per class")
    p.set_defaults(func=cmd_synth)
    p = sub.add_parser("split", parents=[common], help="write a disjoint train/val/test split")
    p.add_argument("--preset", choices=sorted(FRACTION_PRESETS))
    p.set_defaults(func=cmd_split)
    p = sub.add_parser("train", parents=[common], help="train and keep the best-val-kappa checkpoint")
    p.add_argument("--mode", choices=MODES, default="fused")
    p.set_defaults(func=cmd_train)
    for name, func, help_ in (("eval", cmd_eval, "metrics report for a role"),
                              ("map", cmd_map, "PPM class map of a role")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--role", choices=("train", "val", "test"), default="test")
        p.set_defaults(func=func)
    p = sub.add_parser("sweep", parents=[common], help="kappa table over one hyperparameter")
    p.add_argument("--axis", choices=sorted(SWEEP_AXES), required=True)
    p.add_argument("--values", help="comma-separated values (default: the standard axis)")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every op")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, CubeFormatError, CheckpointFormatError, FileNotFoundError, ValueError,
            FloatingPointError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"hsifuse {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
