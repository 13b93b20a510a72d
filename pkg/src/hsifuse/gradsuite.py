"""Finite-difference corpus over every differentiable op and tiny end-to-end models.

Each case builds its inputs in 64-bit and reduces the op output against a
fixed random weight tensor, so every output entry contributes to the loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .fusion import FusionModel, ModelConfig, attentional_fuse
from .nn import MultiHeadSelfAttention
from .sst import SstBranch, SstConfig
from .swin3d import ConvStem, Swin3dBranch, Swin3dConfig
from .tensor import Conv3dKernel, Tensor, check_tensors, precision
from .training import cross_entropy


def _leaf(rng, *shape, lo=None):
    v = rng.normal(size=shape)
    if lo is not None:
        v = np.abs(v) + lo
    return Tensor(v, requires_grad=True, dtype=np.float64)


def _weighted(rng, f):
    """Loss ``sum(f() * w)`` with ``w`` fixed on the first call."""
    holder = {}

    def loss():
        y = f()
        if "w" not in holder:
            holder["w"] = Tensor(rng.normal(size=y.shape), dtype=np.float64)
        return T.tsum(T.mul(y, holder["w"]))

    return loss


def _op_cases(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
    yield "add", _weighted(rng, lambda: T.add(a, b)), {"a": a, "b": b}
    a2, b2 = _leaf(rng, 2, 3, 4), _leaf(rng, 3, 4)
    yield "sub", _weighted(rng, lambda: T.sub(a2, b2)), {"a": a2, "b": b2}
    m1, m2 = _leaf(rng, 2, 3, 4), _leaf(rng, 3, 4)
    yield "mul", _weighted(rng, lambda: T.mul(m1, m2)), {"a": m1, "b": m2}
    s = _leaf(rng, 5)
    yield "scale", _weighted(rng, lambda: T.scale(s, -1.7)), {"x": s}
    p, q = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
    yield "matmul", _weighted(rng, lambda: T.matmul(p, q)), {"a": p, "b": q}
    p3, q3 = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 2)
    yield "matmul_batched", _weighted(rng, lambda: T.matmul(p3, q3)), {"a": p3, "b": q3}
    for name, fn in (("relu", T.relu), ("sigmoid", T.sigmoid), ("gelu", T.gelu), ("exp", T.exp)):
        x = _leaf(rng, 3, 5)
        yield name, _weighted(rng, lambda fn=fn, x=x: fn(x)), {"x": x}
    lx = _leaf(rng, 3, 4, lo=0.2)
    yield "log", _weighted(rng, lambda: T.log(lx)), {"x": lx}
    cx = _leaf(rng, 4, 4)
    yield "clip_min", _weighted(rng, lambda: T.clip_min(cx, 0.1)), {"x": cx}
    sx = _leaf(rng, 2, 3, 4)
    yield "sum", _weighted(rng, lambda: T.tsum(sx, axis=1)), {"x": sx}
    yield "mean", _weighted(rng, lambda: T.mean(sx, axis=(0, 2))), {"x": sx}
    yield "softmax", _weighted(rng, lambda: T.softmax(sx, axis=-1)), {"x": sx}
    lnx, g, be = _leaf(rng, 3, 6), _leaf(rng, 6), _leaf(rng, 6)
    yield "layer_norm", _weighted(rng, lambda: T.layer_norm(lnx, g, be)), {"x": lnx, "gamma": g, "beta": be}
    rx = _leaf(rng, 2, 3, 4)
    yield "reshape", _weighted(rng, lambda: T.reshape(rx, (4, 6))), {"x": rx}
    yield "permute", _weighted(rng, lambda: T.permute(rx, (2, 0, 1))), {"x": rx}
    c1, c2 = _leaf(rng, 2, 3), _leaf(rng, 2, 2)
    yield "concat", _weighted(rng, lambda: T.concat([c1, c2], axis=1)), {"a": c1, "b": c2}
    yield "getitem", _weighted(rng, lambda: rx[:, 1:, ::2]), {"x": rx}
    yield "pad", _weighted(rng, lambda: T.pad(rx, [(0, 1), (1, 0), (0, 2)])), {"x": rx}
    yield "roll", _weighted(rng, lambda: T.roll(rx, (1, -2), (1, 2))), {"x": rx}
    px = _leaf(rng, 4, 3)
    yield "pick", _weighted(rng, lambda: T.pick(px, np.array([0, 2, 1, 2]))), {"x": px}
    gx = _leaf(rng, 2, 3, 3, 2)
    rows = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, 1]], dtype=float)
    cols = np.array([[0.5, 0.5, 0], [0, 0, 1]], dtype=float)
    yield "resample_grid", _weighted(rng, lambda: T.resample_grid(gx, rows, cols)), {"x": gx}
    vx, w, bias = _leaf(rng, 2, 2, 3, 4, 3), _leaf(rng, 3, 2, 3, 1, 3), _leaf(rng, 3)
    yield "conv3d", _weighted(rng, lambda: T.conv3d(vx, Conv3dKernel(w, bias), activation=None)), \
        {"x": vx, "weight": w, "bias": bias}
    mx = _leaf(rng, 2, 3, 5)
    yield "max_pool_axis", _weighted(rng, lambda: T.max_pool_axis(mx, axis=2)), {"x": mx}
    bx, bg, bb = _leaf(rng, 4, 3, 2, 2), _leaf(rng, 3), _leaf(rng, 3)
    rm, rv = np.zeros(3), np.ones(3)
    yield "batch_norm", _weighted(rng, lambda: T.batch_norm(bx, bg, bb, rm, rv, True)), \
        {"x": bx, "gamma": bg, "beta": bb}
    f1, f2 = _leaf(rng, 2, 4, 6), _leaf(rng, 2, 4, 6)
    yield "attentional_fuse", _weighted(rng, lambda: attentional_fuse(f1, f2)[0]), {"h_l": f1, "h_lp": f2}


def _params(module, rng):
    """Named parameters, jittered away from the near-uniform-attention init.

    At init scale the query/key gradients sit near 1e-7, where central
    differences at h = 1e-5 are dominated by roundoff.
    """
    out = dict(module.named_parameters())
    for p in out.values():
        p.data += rng.normal(0.0, 0.3, size=p.shape)
    return out


def _model_cases(rng):
    x = Tensor(rng.normal(size=(3, 1, 4, 4, 4)), dtype=np.float64)
    stem = ConvStem(3, rng)
    yield "stem", _weighted(rng, lambda: stem(x)), _params(stem, rng)
    attn = MultiHeadSelfAttention(4, 2, rng)
    ax = _leaf(rng, 2, 3, 4)
    mask = np.where(rng.random((1, 3, 3)) < 0.3, -1e9, 0.0)
    mask[:, np.arange(3), np.arange(3)] = 0.0
    yield "attention", _weighted(rng, lambda: attn(ax, mask)), {"x": ax, **_params(attn, rng)}
    feats = _leaf(rng, 2, 4, 2, 4, 4)
    swin = Swin3dBranch(Swin3dConfig(4, (2, 2), (1, 2), (2, 2, 2), (1,), 2.0), rng)
    yield "swin3d_branch", _weighted(rng, lambda: swin(feats)), {"features": feats, **_params(swin, rng)}
    sst = SstBranch(SstConfig(tokens=4, dim=4, layers=1, heads=2, mlp_ratio=2.0), 4 * 2, rng)
    yield "sst_branch", _weighted(rng, lambda: sst(feats)), {"features": feats, **_params(sst, rng)}
    cfg = ModelConfig(4, 4, 3, swin=Swin3dConfig(4, (1, 1), (1, 2), (2, 2, 2), (1,), 2.0),
                      sst=SstConfig(tokens=4, dim=4, layers=1, heads=2, mlp_ratio=2.0), fused_dim=4)
    model = FusionModel(cfg, seed=1)
    y = np.array([0, 2, 1])
    yield "fusion_model_loss", lambda: cross_entropy(model(x), y), _params(model, rng)


@dataclass
class SuiteResult:
    name: str
    max_rel_error: float
    checked: int
    ok: bool
    failure: str | None = None


def run_suite(h: float = 1e-5, tol: float = 1e-4, max_entries: int = 24, seed: int = 0,
              include_models: bool = True) -> list[SuiteResult]:
    """Run every case at 64-bit; each tensor probes at most ``max_entries`` entries."""
    out = []
    with precision(np.float64):
        rng = np.random.default_rng(seed)
        cases = list(_op_cases(rng))
        if include_models:
            cases += list(_model_cases(rng))
        for name, loss_fn, tensors in cases:
            rep = check_tensors(loss_fn, tensors, h=h, tol=tol, max_entries=max_entries, seed=seed)
            out.append(SuiteResult(name, rep.max_rel_error, rep.checked, rep.ok, rep.failure))
    return out


def format_suite(results: list[SuiteResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  max_rel_err {r.max_rel_error:.3e}  entries {r.checked:4d}  "
             f"{'ok' if r.ok else 'FAIL'}" + (f"  ({r.failure})" if r.failure else "") for r in results]
    return "\n".join(lines)


if __name__ == "__main__":
    t0 = time.perf_counter()
    res = run_suite()
    print(format_suite(res))
    print(f"{time.perf_counter() - t0:.1f}s")
