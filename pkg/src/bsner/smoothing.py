"""Per-sentence span classification targets: hard, boundary-smoothed, label-smoothed.

A :class:`TargetMatrix` is a dense ``(T, T, c)`` float64 array in which only
the upper triangle ``i <= j`` is meaningful (the lower triangle stays zero).
Channel 0 is the non-entity type.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .corpus import Span, validate_spans

RING_MODES = ("valid", "nominal")


@dataclass
class TargetMatrix:
    T: int
    c: int
    probs: np.ndarray

    def cell(self, i: int, j: int) -> np.ndarray:
        if not 0 <= i <= j < self.T:
            raise IndexError(f"({i}, {j}) is not a valid span for T={self.T}")
        return self.probs[i, j]

    def cells(self):
        for i in range(self.T):
            for j in range(i, self.T):
                yield i, j, self.probs[i, j]


@dataclass(frozen=True)
class TargetMode:
    """How gold spans become training targets.

    ``kind`` is ``hard``, ``boundary_smooth`` (uses ``epsilon``, ``D`` and
    ``ring_mode``) or ``label_smooth`` (uses ``alpha``).
    """

    kind: str = "hard"
    epsilon: float = 0.0
    D: int = 1
    alpha: float = 0.0
    ring_mode: str = "valid"

    def __post_init__(self) -> None:
        if self.kind not in ("hard", "boundary_smooth", "label_smooth"):
            raise ValueError(f"unknown target mode {self.kind!r}")
        if self.kind == "boundary_smooth":
            _check_smoothing(self.epsilon, self.D, self.ring_mode)
        if self.kind == "label_smooth" and not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")

    def to_dict(self) -> dict:
        if self.kind == "boundary_smooth":
            return {"kind": self.kind, "epsilon": self.epsilon, "D": self.D, "ring_mode": self.ring_mode}
        if self.kind == "label_smooth":
            return {"kind": self.kind, "alpha": self.alpha}
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetMode":
        return cls(**d)


def _check_smoothing(epsilon: float, D, ring_mode: str = "valid") -> None:
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must be in [0, 1), got {epsilon}")
    if int(D) != D or D < 1:
        raise ValueError(f"smoothing size D must be an integer >= 1, got {D}")
    if ring_mode not in RING_MODES:
        raise ValueError(f"ring_mode must be one of {RING_MODES}, got {ring_mode!r}")


def _check_entities(entities: Sequence[Span], T: int, c: int) -> None:
    validate_spans(entities, T)
    for s in entities:
        if not 1 <= int(s.type) < c:
            raise ValueError(f"entity type id {s.type} outside [1, {c})")


def upper_mask(T: int) -> np.ndarray:
    return np.triu(np.ones((T, T), dtype=bool))


def hard_targets(entities: Sequence[Span], T: int, c: int) -> TargetMatrix:
    """One-hot targets: gold spans on their type, every other span on non-entity."""
    _check_entities(entities, T, c)
    probs = np.zeros((T, T, c), dtype=np.float64)
    probs[..., 0] = upper_mask(T)
    for s in entities:
        probs[s.start, s.end, 0] = 0.0
        probs[s.start, s.end, int(s.type)] = 1.0
    return TargetMatrix(T, c, probs)


def smooth_targets(
    entities: Sequence[Span],
    T: int,
    c: int,
    epsilon: float,
    D: int,
    sizes: Optional[Sequence[int]] = None,
    ring_mode: str = "valid",
) -> TargetMatrix:
    """Boundary-smoothed targets.

    Each gold span keeps ``1 - epsilon``; the spans at Manhattan distance
    ``d`` (1 <= d <= D) share ``epsilon / D`` on the gold type. In ``valid``
    ring mode the share is split over the in-sentence ring members and an
    empty ring hands its share back to the gold span; ``nominal`` mode
    splits over all ``4d`` lattice positions and drops the out-of-range
    ones. Leftover mass goes to non-entity; a span whose entity mass exceeds
    one (overlapping regions) is rescaled to sum to one.

    ``sizes`` overrides ``D`` per entity.
    """
    _check_smoothing(epsilon, D, ring_mode)
    _check_entities(entities, T, c)
    n = len(entities)
    if sizes is None:
        sizes = [D] * n
    elif len(sizes) != n:
        raise ValueError(f"got {len(sizes)} smoothing sizes for {n} entities")
    for size in sizes:
        _check_smoothing(epsilon, size)
    probs = kernels.smooth_fill(
        np.array([s.start for s in entities], dtype=np.int64),
        np.array([s.end for s in entities], dtype=np.int64),
        np.array([int(s.type) for s in entities], dtype=np.int64),
        np.array(sizes, dtype=np.int64),
        T, c, float(epsilon), ring_mode == "nominal",
    )
    return TargetMatrix(T, c, probs)


def label_smooth_targets(entities: Sequence[Span], T: int, c: int, alpha: float) -> TargetMatrix:
    """Mix every span's one-hot vector with the uniform distribution: ``(1-a) v + a/c``."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    hard = hard_targets(entities, T, c)
    if alpha == 0.0:
        return hard
    probs = (1.0 - alpha) * hard.probs + alpha / c
    probs *= upper_mask(T)[..., None]
    return TargetMatrix(T, c, probs)


def build_targets(entities: Sequence[Span], T: int, c: int, mode: TargetMode) -> TargetMatrix:
    if mode.kind == "boundary_smooth":
        return smooth_targets(entities, T, c, mode.epsilon, mode.D, ring_mode=mode.ring_mode)
    if mode.kind == "label_smooth":
        return label_smooth_targets(entities, T, c, mode.alpha)
    return hard_targets(entities, T, c)


def targets_csv(rows: Iterable[tuple[int, TargetMatrix]], type_names: Sequence[str]) -> str:
    """Debug dump ``sentence_id,i,j,type,prob`` listing every non-zero target entry."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sentence_id", "i", "j", "type", "prob"])
    for sid, tm in rows:
        for i, j, vec in tm.cells():
            for t in np.flatnonzero(vec):
                writer.writerow([sid, i, j, type_names[t], repr(float(vec[t]))])
    return buf.getvalue()
