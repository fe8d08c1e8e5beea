"""1-D loss slices ``f(alpha) = L(theta* + alpha * delta)`` around a trained point."""

from __future__ import annotations

import copy
import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .model import BiaffineNER
from .ops import NonFiniteError
from .smoothing import TargetMode
from .training import Item, mean_loss

DIRECTION_MODES = ("per_weight", "per_tensor")


@dataclass
class Direction:
    arrays: dict[str, np.ndarray]
    seed: int
    mode: str


def sample_direction(params: Mapping[str, np.ndarray], seed: int, mode: str = "per_weight") -> Direction:
    """Draw a standard-normal direction and normalize it against ``params``.

    Draws happen tensor by tensor in the mapping's order from one generator
    seeded with ``seed``. ``per_weight`` sets every coordinate to
    ``sign(delta_i) * |theta_i|`` (zero where the weight is zero);
    ``per_tensor`` rescales each tensor to the norm of its weights.
    """
    if mode not in DIRECTION_MODES:
        raise ValueError(f"direction mode must be one of {DIRECTION_MODES}, got {mode!r}")
    rng = np.random.default_rng(seed)
    out = {}
    for name, theta in params.items():
        theta = np.asarray(theta, dtype=np.float64)
        delta = rng.standard_normal(theta.shape)
        if mode == "per_weight":
            delta = np.sign(delta) * np.abs(theta)
        else:
            dn = np.linalg.norm(delta)
            delta = delta * (np.linalg.norm(theta) / dn) if dn > 0 else np.zeros_like(theta)
        out[name] = delta
    return Direction(out, seed, mode)


def alpha_grid(n_points: int = 51) -> np.ndarray:
    if n_points < 3 or n_points % 2 == 0:
        raise ValueError(f"n_points must be odd and >= 3 so that alpha = 0 is sampled, got {n_points}")
    half = n_points // 2
    # integer numerators keep -1, 0 and 1 exact
    return np.arange(-half, half + 1, dtype=np.float64) / half


def landscape_1d(
    model: BiaffineNER,
    direction: Direction,
    items: Sequence[Item],
    mode: TargetMode,
    n_points: int = 51,
    max_sentences: Optional[int] = None,
) -> list[tuple[float, float]]:
    """Eval-mode mean sentence loss at each grid point.

    Evaluation runs on a private copy of the model, so ``model`` is never
    touched. A point whose forward overflows is reported as NaN.
    """
    alphas = alpha_grid(n_points)
    if set(direction.arrays) != set(model.params):
        raise ValueError("direction and model parameter names differ")
    if max_sentences is not None:
        items = items[:max_sentences]
    if not items:
        raise ValueError("landscape needs at least one sentence")
    work = copy.deepcopy(model)
    base = {k: p.data.astype(np.float64) for k, p in model.params.items()}
    out = []
    with np.errstate(over="ignore", invalid="ignore"):
        for a in alphas:
            for k, p in work.params.items():
                p.data = (base[k] + a * direction.arrays[k]).astype(p.data.dtype)
            try:
                loss = mean_loss(work, items, mode)
            except NonFiniteError:
                loss = math.nan
            out.append((float(a), loss))
    return out


def landscape_csv(curves: Mapping[str, Iterable[tuple[float, float]]]) -> str:
    """``alpha,split,loss`` rows sorted by (split, alpha)."""
    rows = sorted((split, a, loss) for split, pts in curves.items() for a, loss in pts)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "split", "loss"])
    for split, a, loss in rows:
        w.writerow([repr(float(a)), split, repr(float(loss))])
    return buf.getvalue()


def parse_landscape_csv(text: str) -> dict[str, list[tuple[float, float]]]:
    out: dict[str, list[tuple[float, float]]] = {}
    for r in csv.DictReader(io.StringIO(text)):
        out.setdefault(r["split"], []).append((float(r["alpha"]), float(r["loss"])))
    return out
