"""Central finite-difference checks of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .core import Tensor, backward, no_grad, precision


TENSOR_SCALE_FLOOR = 1e-3


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    checked: int
    flagged: list = field(default_factory=list)
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None and not self.flagged and self.max_rel_error <= self.tol


def _rel_err(a: np.ndarray, n: np.ndarray, floor: float) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _scalar(f, *args) -> float:
    out = f(*args)
    v = float(np.asarray(out.data).reshape(-1)[0])
    if not np.isfinite(v):
        raise FloatingPointError("function value is not finite")
    return v


def check_tensors(
    loss_fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic and central-difference gradients of ``loss_fn()``.

    ``tensors`` are leaves that ``loss_fn`` closes over; they are perturbed in
    place and restored. ``max_entries`` caps the number of probed entries per
    tensor (chosen at random with ``seed``). The relative error per entry is
    ``|a - n| / max(|a|, |n|, floor_t)`` with ``floor_t = max(floor, 1e-3 *
    max|a_t|)`` per tensor. Entries far below their tensor's gradient scale
    (e.g. key biases, whose gradient is exactly zero) get a numeric value
    that is pure difference-quotient roundoff; the scaled floor keeps them
    from dominating while an O(1) mistake on them is still caught.
    """
    rng = np.random.default_rng(seed)
    for t in tensors.values():
        t.grad = None
        t.requires_grad = True
    try:
        loss = loss_fn()
        backward(loss)
    except (FloatingPointError, ValueError) as exc:
        return GradCheckReport(float("nan"), tol, 0, failure=f"forward/backward failed: {exc}")
    worst, checked, flagged = 0.0, 0, []
    for name, t in tensors.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        try:
            with no_grad():
                for j, i in enumerate(idx):
                    orig = flat[i]
                    flat[i] = orig + h
                    up = _scalar(loss_fn)
                    flat[i] = orig - h
                    down = _scalar(loss_fn)
                    flat[i] = orig
                    numeric[j] = (up - down) / (2 * h)
        except FloatingPointError as exc:
            return GradCheckReport(float("nan"), tol, checked, failure=f"{name}: {exc}")
        a = analytic.reshape(-1)[idx]
        scale = float(np.abs(analytic).max()) if analytic.size else 0.0
        err = _rel_err(a, numeric, max(floor, TENSOR_SCALE_FLOOR * scale))
        checked += idx.size
        if err.size:
            worst = max(worst, float(err.max()))
        for i, e in zip(idx[err > tol], err[err > tol]):
            flagged.append((name, np.unravel_index(i, t.shape), float(e)))
    return GradCheckReport(worst, tol, checked, flagged)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor | np.ndarray,
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Check the gradient of a scalar function of one tensor at 64-bit precision."""
    with precision(np.float64):
        xt = Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True, dtype=np.float64)
        if not np.all(np.isfinite(xt.data)):
            return GradCheckReport(float("nan"), tol, 0, failure="input is not finite")
        return check_tensors(lambda: f(xt), {"x": xt}, h=h, tol=tol, floor=floor)
