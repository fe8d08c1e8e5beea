"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .ops import NonFiniteError
from .tensor import Graph, Tensor

Params = Union[Mapping[str, Tensor], Sequence[Tensor]]


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)
    n_checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def _named(params: Params) -> list[tuple[str, Tensor]]:
    if isinstance(params, Mapping):
        return list(params.items())
    return [(p.name or f"param{k}", p) for k, p in enumerate(params)]


def _scalar(loss: Tensor) -> float:
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteError(f"grad_check: non-finite loss {value}")
    return value


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Params,
    step: float = 1e-4,
    tol: float = 1e-4,
    n_samples: int = 50,
    seed: int = 0,
    min_scale: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with ``(f(θ+h) - f(θ-h)) / 2h``.

    Parameters are promoted to float64 for the duration of the check and
    restored afterwards. Up to ``n_samples`` coordinates per parameter are
    sampled (all of them for smaller tensors). The relative error of a
    coordinate is ``|a - n| / max(|a|, |n|, min_scale)``; the floor keeps
    coordinates with vanishing gradient from dividing rounding noise by zero.
    """
    if not 1e-4 <= step <= 1e-2:
        raise ValueError(f"grad_check: step must lie in [1e-4, 1e-2], got {step}")
    named = _named(params)
    saved = [(p, p.data, p.grad) for _, p in named]
    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_rel_error=0.0, tol=tol)
    try:
        for _, p in named:
            p.data = p.data.astype(np.float64)
            p.grad = None
        with Graph() as graph:
            loss = loss_fn()
            _scalar(loss)
            graph.backward(loss)
        for name, p in named:
            analytic = np.zeros_like(p.data) if p.grad is None else p.grad
            flat = p.data.reshape(-1)
            if flat.size <= n_samples:
                coords = np.arange(flat.size)
            else:
                coords = rng.choice(flat.size, size=n_samples, replace=False)
            worst = 0.0
            for k in coords:
                orig = flat[k]
                flat[k] = orig + step
                f_plus = _scalar(loss_fn())
                flat[k] = orig - step
                f_minus = _scalar(loss_fn())
                flat[k] = orig
                numeric = (f_plus - f_minus) / (2.0 * step)
                a = float(analytic.reshape(-1)[k])
                err = abs(a - numeric) / max(abs(a), abs(numeric), min_scale)
                worst = max(worst, err)
            report.per_param[name] = worst
            report.n_checked += len(coords)
            report.max_rel_error = max(report.max_rel_error, worst)
    finally:
        for p, data, grad in saved:
            p.data = data
            p.grad = grad
    return report
