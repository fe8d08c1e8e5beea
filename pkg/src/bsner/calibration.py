"""Reliability-diagram bins and expected calibration error over predicted entities."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .decoding import PredictedEntity


@dataclass
class CalibrationBin:
    k: int
    lower: float
    upper: float
    count: int
    precision: Optional[float]
    avg_confidence: Optional[float]


def bin_index(p: float, K: int) -> int:
    """``k`` such that ``p`` lies in ``((k-1)/K, k/K]``."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"confidence must lie in (0, 1], got {p}")
    k = min(max(math.ceil(p * K), 1), K)
    # p*K can round across an edge (0.3*10 = 3.0000000000000004)
    while k > 1 and p <= (k - 1) / K:
        k -= 1
    while k < K and p > k / K:
        k += 1
    return k


def bin_outcomes(confidences: Sequence[float], correct: Sequence[bool], K: int = 10) -> list[CalibrationBin]:
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    counts = [0] * K
    hits = [0] * K
    conf_sum = [0.0] * K
    for p, ok in zip(confidences, correct):
        k = bin_index(float(p), K) - 1
        counts[k] += 1
        hits[k] += bool(ok)
        conf_sum[k] += float(p)
    bins = []
    for k in range(K):
        n = counts[k]
        bins.append(CalibrationBin(
            k + 1, k / K, (k + 1) / K, n,
            hits[k] / n if n else None,
            conf_sum[k] / n if n else None,
        ))
    return bins


def bin_entities(
    preds: Sequence[PredictedEntity],
    gold: Mapping[int, set],
    K: int = 10,
) -> list[CalibrationBin]:
    """Group predictions by confidence; a prediction is correct iff its
    (start, end, type) is in the gold set of its sentence."""
    correct = [e.key in gold.get(e.sentence_id, ()) for e in preds]
    return bin_outcomes([e.confidence for e in preds], correct, K)


def ece(bins: Sequence[CalibrationBin]) -> float:
    total = sum(b.count for b in bins)
    if total == 0:
        raise ValueError("ECE is undefined for zero predictions")
    return sum(b.count / total * abs(b.precision - b.avg_confidence) for b in bins if b.count)


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else repr(x)


def reliability_csv(bins: Sequence[CalibrationBin]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "lower", "upper", "count", "precision", "avg_confidence"])
    for b in bins:
        w.writerow([b.k, repr(b.lower), repr(b.upper), b.count, _fmt(b.precision), _fmt(b.avg_confidence)])
    return buf.getvalue()


def parse_reliability_csv(text: str) -> list[CalibrationBin]:
    rows = csv.DictReader(io.StringIO(text))
    out = []
    for r in rows:
        out.append(CalibrationBin(
            int(r["bin"]), float(r["lower"]), float(r["upper"]), int(r["count"]),
            float(r["precision"]) if r["precision"] else None,
            float(r["avg_confidence"]) if r["avg_confidence"] else None,
        ))
    return out
