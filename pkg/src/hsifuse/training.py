"""Loss, Adam, the seeded training/evaluation loops and hyperparameter sweeps."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .data import (
    HsiCube,
    LabelRaster,
    PatchSet,
    PatchSpec,
    SplitAssignment,
    batch_iterator,
    extract_patches,
    make_disjoint_split,
    validate_split,
)
from .fusion import FusionModel, ModelConfig
from .metrics import ConfusionMatrix, MetricsReport, oa_aa, kappa
from .nn import Module
from .sst import SstConfig
from .swin3d import Swin3dConfig
from .tensor import Tensor, backward, clip_min, log, mean, no_grad, pick, scale

# ---------------------------------------------------------------------------
# loss and optimizer


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean of ``-log p[i, label_i]`` with probabilities clamped at 1e-12."""
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ValueError(f"need (batch, C) probabilities and batch labels, got {probs.shape}, {labels.shape}")
    C = probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"label outside [0, {C})")
    return scale(mean(log(clip_min(pick(probs, labels), 1e-12))), -1.0)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def lr_at(lr: float, decay: float, step: int) -> float:
    """Learning rate for the update taken after ``step`` earlier updates."""
    return lr / (1.0 + decay * step)


def adam_step(params: dict, grads: dict, state: AdamState, lr_t: float) -> None:
    """Bias-corrected Adam update of ``params`` (name -> array) in place.

    Every gradient is checked before anything is touched, so a non-finite
    gradient leaves parameters and moments unchanged.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ValueError(f"{name}: gradient/moment shape disagrees with parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam: non-finite gradient for {name}; step aborted")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr_t * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    state.step = t


class Adam:
    """Adam over a module's named parameters with ``1/(1 + decay * step)`` scheduling."""

    def __init__(self, named_params, lr: float = 1e-4, decay: float = 1e-6):
        self.params = dict(named_params)
        self.lr, self.decay = lr, decay
        self.state = AdamState.zeros_like({k: p.data for k, p in self.params.items()})

    @property
    def current_lr(self) -> float:
        return lr_at(self.lr, self.decay, self.state.step)

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step({k: p.data for k, p in self.params.items()}, grads, self.state, self.current_lr)


# ---------------------------------------------------------------------------
# configuration and data bundle


@dataclass
class TrainConfig:
    batch_size: int = 56
    learning_rate: float = 1e-4
    decay: float = 1e-6
    epochs: int = 50
    seed: int = 0
    patch_size: int = 8
    heads: int | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be at least 1")
        if not self.learning_rate > 0 or self.decay < 0:
            raise ValueError("learning rate must be positive and decay nonnegative")
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")
        if self.heads is not None and self.heads < 1:
            raise ValueError("heads must be positive")


@dataclass
class TrainData:
    patches: PatchSet
    split: SplitAssignment

    @property
    def n_classes(self) -> int:
        return self.patches.labels.n_classes

    def role(self, name: str) -> np.ndarray:
        return self.split.role(name)


def prepare_data(cube: HsiCube, labels: LabelRaster, patch_size: int, fractions, seed: int,
                 split: SplitAssignment | None = None) -> TrainData:
    """Patches of side ``patch_size`` plus a split restricted to full-window centres."""
    patches = extract_patches(cube, labels, PatchSpec(patch_size))
    if split is None:
        split = make_disjoint_split(labels, fractions, seed, eligible=patches.center_mask)
    bad = validate_split(split, labels)
    if bad:
        raise ValueError(f"invalid split: {bad[0].kind}: {bad[0].detail}")
    outside = ~patches.contains(np.concatenate([split.train, split.val, split.test]))
    if outside.any():
        raise ValueError(f"{int(outside.sum())} split pixels have no full patch window")
    return TrainData(patches, split)


def scaled_width(width: int, heads: int) -> int:
    """Smallest multiple of ``heads`` that is at least ``width``."""
    return -(-width // heads) * heads


def model_config(n_bands: int, n_classes: int, config: TrainConfig, mode: str = "fused",
                 swin: Swin3dConfig | None = None, sst: SstConfig | None = None,
                 fused_dim: int = 96) -> ModelConfig:
    """Model configuration for a patch size and optional uniform head count.

    A head count that does not divide the token widths rounds them up to the
    next multiple (e.g. 10 heads give width 100).
    """
    swin = swin or Swin3dConfig()
    sst = sst or SstConfig()
    if config.heads is not None:
        h = config.heads
        swin = replace(swin, embed_dim=scaled_width(swin.embed_dim, h),
                       heads_per_stage=(h,) * len(swin.stage_depths))
        sst = replace(sst, dim=scaled_width(sst.dim, h), heads=h)
        fused_dim = scaled_width(fused_dim, h)
    swin = swin.fit_to_patch(config.patch_size)
    return ModelConfig(n_bands, config.patch_size, n_classes, mode, swin, sst, fused_dim)


# ---------------------------------------------------------------------------
# evaluation


def predict(model: Module, patches: PatchSet, indices, batch_size: int = 56) -> np.ndarray:
    """Zero-based class predictions for the given centre pixels, in order."""
    was = model.training
    model.eval()
    out = []
    try:
        with no_grad():
            for x, _ in batch_iterator(patches, indices, batch_size, dtype=_model_dtype(model)):
                out.append(np.argmax(model(x).data, axis=1))
    finally:
        model.train(was)
    return np.concatenate(out)


def evaluate(model: Module, data: TrainData, role: str, batch_size: int = 56) -> ConfusionMatrix:
    """Confusion matrix of ``role`` under frozen (eval-mode) statistics."""
    idx = data.role(role)
    if idx.size == 0:
        raise ValueError(f"role {role!r} is empty")
    pred = predict(model, data.patches, idx, batch_size)
    return ConfusionMatrix.from_labels(data.patches.label_of(idx) - 1, pred, data.n_classes)


def _model_dtype(model: Module):
    ps = model.parameters()
    return ps[0].dtype if ps else None


# ---------------------------------------------------------------------------
# checkpoints of live state


def snapshot(model: Module, opt: Adam | None, config: dict, epoch: int, rng_state) -> Checkpoint:
    return Checkpoint(
        config=config,
        epoch=epoch,
        step=opt.state.step if opt else 0,
        rng_state=rng_state,
        params={k: p.data.copy() for k, p in model.named_parameters()},
        buffers={k: b.copy() for k, b in model.named_buffers()},
        adam_m={k: a.copy() for k, a in opt.state.m.items()} if opt else {},
        adam_v={k: a.copy() for k, a in opt.state.v.items()} if opt else {},
    )


def restore(model: Module, ck: Checkpoint, opt: Adam | None = None) -> None:
    """Copy checkpoint arrays into ``model`` (and ``opt``) in place."""
    params = dict(model.named_parameters())
    if set(params) != set(ck.params):
        missing = sorted(set(params) ^ set(ck.params))
        raise ValueError(f"checkpoint parameters do not match model: {missing[:3]}")
    for k, p in params.items():
        if p.shape != ck.params[k].shape:
            raise ValueError(f"{k}: checkpoint shape {ck.params[k].shape} vs model {p.shape}")
        p.data[...] = ck.params[k]
    for k, b in model.named_buffers():
        b[...] = ck.buffers[k]
    if opt is not None and ck.adam_m:
        for k in opt.state.m:
            opt.state.m[k][...] = ck.adam_m[k]
            opt.state.v[k][...] = ck.adam_v[k]
        opt.state.step = ck.step


def model_from_checkpoint(ck: Checkpoint) -> FusionModel:
    model = FusionModel(ModelConfig.from_dict(ck.config["model"]))
    restore(model, ck)
    return model


# ---------------------------------------------------------------------------
# training loop


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainResult:
    log: list
    best: Checkpoint
    final: Checkpoint
    steps: int = 0
    train_accuracy: list = field(default_factory=list)


def _log_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def train(
    model: FusionModel,
    data: TrainData,
    config: TrainConfig,
    log_path=None,
    deterministic: bool = False,
    max_steps: int | None = None,
    resume: Checkpoint | None = None,
    validate: bool = True,
) -> TrainResult:
    """Seeded mini-batch training with per-epoch validation.

    Each epoch shuffles the train role with a generator seeded by
    ``config.seed`` whose state is carried across epochs and stored in every
    checkpoint. The checkpoint with the best validation kappa (first one on
    ties) is returned as ``best`` and loaded into ``model`` at the end.
    ``deterministic`` writes 0 for wall-clock seconds so logs are comparable
    byte for byte. ``max_steps`` stops after that many updates.
    """
    train_idx = data.role("train")
    if train_idx.size == 0:
        raise ValueError("train role is empty")
    if validate and data.role("val").size == 0:
        raise ValueError("val role is empty")
    meta = {"model": model.config.to_dict(), "train": asdict(config)}
    opt = Adam(model.named_parameters(), config.learning_rate, config.decay)
    rng = np.random.default_rng(config.seed)
    first_epoch = 1
    if resume is not None:
        restore(model, resume, opt)
        rng.bit_generator.state = resume.rng_state
        first_epoch = resume.epoch + 1
    dtype = _model_dtype(model)
    last_good = snapshot(model, opt, meta, first_epoch - 1, rng.bit_generator.state)
    best, best_kappa = None, -math.inf
    records, train_acc = [], []
    sink = open(log_path, "a" if resume is not None else "w") if log_path else None
    try:
        for epoch in range(first_epoch, config.epochs + 1):
            t0 = time.perf_counter()
            model.train()
            order = train_idx[rng.permutation(train_idx.size)]
            loss_sum, correct, seen = 0.0, 0, 0
            for x, y in batch_iterator(data.patches, order, config.batch_size, dtype=dtype):
                try:
                    probs = model(x)
                    loss = cross_entropy(probs, y)
                    model.zero_grad()
                    backward(loss)
                    opt.step()
                except FloatingPointError as exc:
                    restore(model, last_good, opt)
                    raise TrainingDiverged(f"epoch {epoch}: {exc}", last_good) from None
                loss_sum += float(loss.data) * y.size
                correct += int((np.argmax(probs.data, axis=1) == y).sum())
                seen += y.size
                if max_steps is not None and opt.state.step >= max_steps:
                    break
            record = {"epoch": epoch, "loss": loss_sum / seen}
            train_acc.append(correct / seen)
            state = snapshot(model, opt, meta, epoch, rng.bit_generator.state)
            if validate:
                cm = evaluate(model, data, "val", config.batch_size)
                oa, aa, _ = oa_aa(cm)
                k = kappa(cm)
                record.update(val_oa=oa, val_aa=aa, val_kappa=k)
                if k > best_kappa:
                    best, best_kappa = state, k
            else:
                best = state
            record["wall_seconds"] = 0.0 if deterministic else round(time.perf_counter() - t0, 3)
            records.append(record)
            if sink:
                sink.write(_log_line(record) + "\n")
                sink.flush()
            last_good = state
            if max_steps is not None and opt.state.step >= max_steps:
                break
    finally:
        if sink:
            sink.close()
    final = last_good
    if best is None:
        best = final
    restore(model, best)
    return TrainResult(records, best, final, opt.state.step, train_acc)


def fit(cube: HsiCube, labels: LabelRaster, config: TrainConfig, fractions, mode: str = "fused",
        split_seed: int | None = None, **model_kwargs) -> tuple[FusionModel, TrainData, TrainResult]:
    """Build data and model from scratch, train, and return all three."""
    data = prepare_data(cube, labels, config.patch_size, fractions,
                        config.seed if split_seed is None else split_seed)
    mc = model_config(cube.B, labels.n_classes, config, mode, **model_kwargs)
    model = FusionModel(mc, seed=config.seed)
    return model, data, train(model, data, config, deterministic=True)


# ---------------------------------------------------------------------------
# sweeps

SWEEP_AXES = {
    "patch_size": (2, 4, 6, 8, 10),
    "train_fraction": (0.025, 0.05, 0.1, 0.15, 0.2, 0.25),
    "heads": (2, 4, 6, 8, 10, 12),
}


def _check_value(axis: str, v) -> None:
    if axis == "patch_size":
        if int(v) != v or not 2 <= v <= 10 or v % 2:
            raise ValueError(f"patch sizes must be even in [2, 10], got {v}")
    elif axis == "heads":
        if int(v) != v or not 2 <= v <= 12:
            raise ValueError(f"heads must lie in [2, 12], got {v}")
    elif axis == "train_fraction":
        if not 0 < v < 0.5:
            raise ValueError(f"train fraction must lie in (0, 0.5), got {v}")
    else:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")


def sweep(axis: str, values, cube: HsiCube, labels: LabelRaster, config: TrainConfig,
          fractions=(0.05, 0.45, 0.50), **model_kwargs) -> list[dict]:
    """One train+test run per value with the seed and split protocol held fixed.

    ``train_fraction`` value ``f`` uses fractions ``(f, 0.5 - f, 0.5)``. Rows
    come back sorted by value.
    """
    values = sorted(set(values))
    if not values:
        raise ValueError("sweep needs at least one value")
    for v in values:
        _check_value(axis, v)
    rows = []
    for v in values:
        cfg, fr = config, tuple(fractions)
        if axis == "patch_size":
            cfg = replace(config, patch_size=int(v))
        elif axis == "heads":
            cfg = replace(config, heads=int(v))
        else:
            fr = (float(v), 0.5 - float(v), 0.5)
        model, data, result = fit(cube, labels, cfg, fr, **model_kwargs)
        report = MetricsReport.from_matrix(evaluate(model, data, "test", cfg.batch_size), "test")
        rows.append({axis: v, "kappa": report.kappa, "oa": report.oa, "aa": report.aa,
                     "best_val_kappa": max(r["val_kappa"] for r in result.log)})
    return rows


def format_table(rows: list[dict], axis: str, sep: str = "\t") -> str:
    cols = [axis, "kappa", "oa", "aa", "best_val_kappa"]
    lines = [sep.join(cols)]
    for r in rows:
        lines.append(sep.join(str(r[axis]) if c == axis else f"{r[c]:.6f}" for c in cols))
    return "\n".join(lines) + "\n"


def write_log(path, records: list[dict]) -> None:
    Path(path).write_text("".join(_log_line(r) + "\n" for r in records))
