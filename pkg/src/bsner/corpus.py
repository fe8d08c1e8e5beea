"""Corpus readers (CoNLL columns, JSONL spans), vocabularies and encoding.

Spans are inclusive ``(start, end)`` token indices internally. The JSONL
format stores ``end`` exclusive; conversion happens only in
:func:`parse_jsonl` / :func:`emit_jsonl`.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np

PAD_ID = 0
UNK_ID = 1
NON_ENTITY = "O"


class CorpusError(ValueError):
    pass


class Span(NamedTuple):
    """Inclusive token range plus entity type (a name, or an id once encoded)."""

    start: int
    end: int
    type: Union[str, int]


@dataclass
class Sentence:
    tokens: list[str]
    entities: list[Span] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.entities = [Span(*e) for e in self.entities]
        validate_spans(self.entities, len(self.tokens))

    @property
    def T(self) -> int:
        return len(self.tokens)


def validate_spans(entities: Sequence[Span], T: int) -> None:
    """Reject out-of-range spans, duplicates and two types on one span."""
    if T < 1:
        raise CorpusError("sentence must contain at least one token")
    seen: dict[tuple[int, int], Union[str, int]] = {}
    for s in entities:
        if not 0 <= s.start <= s.end < T:
            raise CorpusError(f"span ({s.start}, {s.end}) outside sentence of length {T}")
        key = (s.start, s.end)
        if key in seen:
            if seen[key] == s.type:
                raise CorpusError(f"duplicate entity {tuple(s)}")
            raise CorpusError(f"span {key} annotated with two types: {seen[key]!r} and {s.type!r}")
        seen[key] = s.type


def parse_conll(text: str, lenient: bool = True) -> list[Sentence]:
    """Read whitespace-separated columns: first = token, last = BIO tag.

    An ``I-X`` that does not continue a run of type ``X`` opens a new span
    when ``lenient`` (the default); otherwise it is an error.
    """
    sentences: list[Sentence] = []
    tokens: list[str] = []
    tags: list[tuple[str, int]] = []

    def flush() -> None:
        if tokens:
            sentences.append(_bio_to_sentence(tokens, tags, lenient))
        tokens.clear()
        tags.clear()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("-DOCSTART-"):
            continue
        if not line:
            flush()
            continue
        cols = line.split()
        if len(cols) < 2:
            raise CorpusError(f"line {lineno}: expected token and tag columns, got {line!r}")
        tag = cols[-1]
        if not (tag == "O" or (len(tag) > 2 and tag[:2] in ("B-", "I-"))):
            raise CorpusError(f"line {lineno}: malformed tag {tag!r}")
        tokens.append(cols[0])
        tags.append((tag, lineno))
    flush()
    return sentences


def _bio_to_sentence(tokens: list[str], tags: list[tuple[str, int]], lenient: bool) -> Sentence:
    spans: list[Span] = []
    start, label = None, None
    for k, (tag, lineno) in enumerate(tags):
        if tag == "O":
            if label is not None:
                spans.append(Span(start, k - 1, label))
            start, label = None, None
            continue
        prefix, kind = tag[:2], tag[2:]
        if prefix == "I-" and label == kind:
            continue
        if prefix == "I-" and not lenient:
            raise CorpusError(f"line {lineno}: {tag} does not continue a {kind} span")
        if label is not None:
            spans.append(Span(start, k - 1, label))
        start, label = k, kind
    if label is not None:
        spans.append(Span(start, len(tags) - 1, label))
    return Sentence(list(tokens), spans)


def parse_jsonl(text: str, types: Optional[Iterable[str]] = None) -> list[Sentence]:
    """One ``{"tokens": [...], "entities": [{"start", "end", "type"}]}`` per line, ``end`` exclusive."""
    closed = None if types is None else set(types)
    sentences = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            tokens = [str(t) for t in obj["tokens"]]
            spans = []
            for ent in obj.get("entities", []):
                s, e, kind = int(ent["start"]), int(ent["end"]), str(ent["type"])
                if e <= s or s < 0 or e > len(tokens):
                    raise CorpusError(f"invalid span [{s}, {e}) for {len(tokens)} tokens")
                if closed is not None and kind not in closed:
                    raise CorpusError(f"unknown entity type {kind!r}")
                spans.append(Span(s, e - 1, kind))
            sentences.append(Sentence(tokens, spans))
        except (CorpusError, KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"line {lineno}: {exc}") from None
    return sentences


def emit_jsonl(sentences: Iterable[Sentence]) -> str:
    lines = []
    for sent in sentences:
        ents = [{"start": s.start, "end": s.end + 1, "type": s.type} for s in sent.entities]
        lines.append(json.dumps({"tokens": sent.tokens, "entities": ents}, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


def read_corpus(path: Union[str, Path], fmt: Optional[str] = None) -> list[Sentence]:
    path = Path(path)
    fmt = fmt or ("jsonl" if path.suffix in (".jsonl", ".json") else "conll")
    text = path.read_text(encoding="utf-8")
    if fmt == "jsonl":
        return parse_jsonl(text)
    if fmt == "conll":
        return parse_conll(text)
    raise CorpusError(f"unknown corpus format {fmt!r}")


@dataclass
class Vocab:
    """Token and entity-type id maps. Token ids 0/1 are padding/unknown; type id 0 is ``O``."""

    tokens: list[str]
    types: list[str]
    lowercase: bool = False

    def __post_init__(self) -> None:
        self.token_to_id = {t: k for k, t in enumerate(self.tokens)}
        self.type_to_id = {t: k for k, t in enumerate(self.types)}
        if len(self.token_to_id) != len(self.tokens) or len(self.type_to_id) != len(self.types):
            raise CorpusError("vocabulary entries must be unique")
        if self.types[0] != NON_ENTITY:
            raise CorpusError(f"type id 0 must be {NON_ENTITY!r}")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def type_count(self) -> int:
        return len(self.types)

    def encode_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        norm = (t.lower() for t in tokens) if self.lowercase else tokens
        return np.array([self.token_to_id.get(t, UNK_ID) for t in norm], dtype=np.int64)

    def encode_spans(self, spans: Iterable[Span]) -> list[Span]:
        out = []
        for s in spans:
            if s.type not in self.type_to_id or s.type == NON_ENTITY:
                raise CorpusError(f"unknown entity type {s.type!r}")
            out.append(Span(s.start, s.end, self.type_to_id[s.type]))
        return out

    def to_dict(self) -> dict:
        return {"tokens": self.tokens, "types": self.types, "lowercase": self.lowercase}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(list(d["tokens"]), list(d["types"]), bool(d.get("lowercase", False)))


def build_vocab(
    sentences: Sequence[Sentence],
    min_freq: int = 1,
    lowercase: bool = False,
    types: Optional[Iterable[str]] = None,
) -> Vocab:
    """Tokens with frequency >= ``min_freq``, ordered by (frequency desc, token)."""
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    if not sentences:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts = Counter(t.lower() if lowercase else t for s in sentences for t in s.tokens)
    reserved = {"<pad>", "<unk>"}
    kept = sorted(
        (t for t, n in counts.items() if n >= min_freq and t not in reserved),
        key=lambda t: (-counts[t], t),
    )
    labels = set(types or ()) | {e.type for s in sentences for e in s.entities}
    labels.discard(NON_ENTITY)
    return Vocab(["<pad>", "<unk>"] + kept, [NON_ENTITY] + sorted(labels), lowercase)
