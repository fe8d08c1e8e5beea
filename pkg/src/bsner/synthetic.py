"""Seeded synthetic NER corpora.

``separable``: every entity is a run of 1-3 tokens drawn from a lexicon
owned by its type, and entities are separated by at least one filler
token, so gold spans are a deterministic function of the tokens.

``noisy``: the same sentences, but each gold span has its start or end
moved by one token with probability ``noise`` (kept only if the result
stays inside the sentence and does not overlap another entity).
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np

from .corpus import Sentence, Span, emit_jsonl

TYPES = ("LOC", "ORG", "PER")
LEXICON_SIZE = 12
FILLER_SIZE = 60
SPLITS = {"train": 1000, "dev": 150, "test": 150}


def _sentence(rng: np.random.Generator) -> Sentence:
    n_ent = int(rng.integers(1, 4))
    tokens: list[str] = []
    spans: list[Span] = []
    for k in range(n_ent):
        gap = int(rng.integers(0 if k == 0 else 1, 4))
        tokens += [f"w{int(x)}" for x in rng.integers(0, FILLER_SIZE, size=gap)]
        kind = TYPES[int(rng.integers(0, len(TYPES)))]
        width = int(rng.integers(1, 4))
        start = len(tokens)
        tokens += [f"{kind.lower()}{int(x)}" for x in rng.integers(0, LEXICON_SIZE, size=width)]
        spans.append(Span(start, start + width - 1, kind))
    tail = int(rng.integers(0, 4))
    tokens += [f"w{int(x)}" for x in rng.integers(0, FILLER_SIZE, size=tail)]
    return Sentence(tokens, spans)


def _perturb(sent: Sentence, rng: np.random.Generator, noise: float) -> Sentence:
    T = sent.T
    spans = list(sent.entities)
    for k, s in enumerate(spans):
        if rng.random() >= noise:
            continue
        moves = [(s.start - 1, s.end), (s.start + 1, s.end), (s.start, s.end - 1), (s.start, s.end + 1)]
        start, end = moves[int(rng.integers(0, 4))]
        others = spans[:k] + spans[k + 1:]
        if not 0 <= start <= end < T:
            continue
        if any(start <= o.end and o.start <= end for o in others):
            continue
        spans[k] = Span(start, end, s.type)
    return Sentence(list(sent.tokens), spans)


def generate(kind: str = "separable", seed: int = 13, noise: float = 0.15,
             sizes: dict[str, int] = SPLITS) -> dict[str, list[Sentence]]:
    if kind not in ("separable", "noisy"):
        raise ValueError(f"unknown synthetic corpus kind {kind!r}")
    rng = np.random.default_rng(seed)
    data = {split: [_sentence(rng) for _ in range(n)] for split, n in sizes.items()}
    if kind == "noisy":
        noise_rng = np.random.default_rng([seed, 1])
        data = {split: [_perturb(s, noise_rng, noise) for s in sents] for split, sents in data.items()}
    return data


def write_corpus(out_dir: Union[str, Path], kind: str = "separable", seed: int = 13,
                 noise: float = 0.15) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split, sents in generate(kind, seed, noise).items():
        paths[split] = out / f"{split}.jsonl"
        paths[split].write_text(emit_jsonl(sents), encoding="utf-8")
    return paths
