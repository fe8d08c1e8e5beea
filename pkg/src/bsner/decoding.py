"""Turning span probabilities into entity sets, and exact-match scoring."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import kernels
from .corpus import Span

MODES = ("flat", "nested")


@dataclass(frozen=True)
class PredictedEntity:
    span: Span
    confidence: float
    sentence_id: int = 0

    @property
    def key(self) -> tuple:
        return tuple(self.span)


@dataclass
class EvalReport:
    true_positives: int
    predicted_count: int
    gold_count: int

    @property
    def precision(self) -> float:
        return self.true_positives / self.predicted_count if self.predicted_count else 0.0

    @property
    def recall(self) -> float:
        return self.true_positives / self.gold_count if self.gold_count else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


def clash(a: Span, b: Span, mode: str = "flat") -> bool:
    """Flat: the token ranges intersect. Nested: they intersect and neither contains the other."""
    if mode not in MODES:
        raise ValueError(f"decode mode must be one of {MODES}, got {mode!r}")
    if not (a.start <= b.end and b.start <= a.end):
        return False
    if mode == "flat":
        return True
    a_in_b = b.start <= a.start and a.end <= b.end
    b_in_a = a.start <= b.start and b.end <= a.end
    return not (a_in_b or b_in_a)


def decode(
    probs: np.ndarray,
    mode: str = "flat",
    valid: Optional[np.ndarray] = None,
    min_confidence: float = 0.0,
    sentence_id: int = 0,
) -> list[PredictedEntity]:
    """Greedy clash-free decoding of one sentence's ``(T, T, c)`` probabilities.

    Cells whose argmax is non-entity are dropped; the rest are visited by
    (confidence desc, start, end, type) and accepted unless they clash with
    an already accepted span.
    """
    if mode not in MODES:
        raise ValueError(f"decode mode must be one of {MODES}, got {mode!r}")
    T = probs.shape[0]
    if valid is None:
        valid = np.triu(np.ones((T, T), dtype=bool))
    starts, ends, types, confs = kernels.candidates(probs, valid, float(min_confidence))
    order = np.lexsort((types, ends, starts, -confs))
    starts, ends, types, confs = starts[order], ends[order], types[order], confs[order]
    kept = kernels.greedy(starts, ends, mode == "nested")
    return [
        PredictedEntity(Span(int(starts[k]), int(ends[k]), int(types[k])), float(confs[k]), sentence_id)
        for k in kept
    ]


Aligned = Union[Mapping[int, Iterable], Sequence[Iterable]]


def _as_mapping(x: Aligned) -> dict[int, set]:
    items = x.items() if isinstance(x, Mapping) else enumerate(x)
    out = {}
    for sid, ents in items:
        out[sid] = {e.key if isinstance(e, PredictedEntity) else tuple(e) for e in ents}
    return out


def evaluate(pred: Aligned, gold: Aligned) -> EvalReport:
    """Micro precision/recall/F1 over exact (start, end, type) matches."""
    p, g = _as_mapping(pred), _as_mapping(gold)
    if set(p) != set(g):
        raise ValueError(f"prediction and gold sentence ids differ: {sorted(set(p) ^ set(g))[:10]}")
    tp = sum(len(p[k] & g[k]) for k in g)
    return EvalReport(tp, sum(len(v) for v in p.values()), sum(len(v) for v in g.values()))


def predictions_jsonl(preds: Iterable[PredictedEntity], type_names: Sequence[str]) -> str:
    """Prediction dump; ``end`` is exclusive as in the JSONL corpus format."""
    lines = []
    for e in preds:
        lines.append(json.dumps({
            "sentence_id": e.sentence_id,
            "start": e.span.start,
            "end": e.span.end + 1,
            "type": type_names[e.span.type] if isinstance(e.span.type, int) else e.span.type,
            "confidence": e.confidence,
        }))
    return "".join(line + "\n" for line in lines)


def parse_predictions(text: str) -> list[PredictedEntity]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            s, e = int(obj["start"]), int(obj["end"])
            if e <= s or s < 0:
                raise ValueError(f"invalid span [{s}, {e})")
            out.append(PredictedEntity(Span(s, e - 1, str(obj["type"])), float(obj["confidence"]),
                                       int(obj["sentence_id"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return out
