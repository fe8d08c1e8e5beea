"""BiLSTM encoder, start/end affine heads and the biaffine span classifier.

All forwards are batched: token ids ``(B, T)`` padded with ``PAD_ID``,
per-sentence lengths, and dense ``(B, T, T, c)`` span grids. Padding cells,
lower-triangle cells and spans wider than ``max_width`` carry all-zero
targets, so they contribute neither loss nor gradient.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import ops
from .corpus import PAD_ID, Span
from .smoothing import TargetMode, build_targets
from .tensor import DTYPE, Tensor


class ShapeMismatch(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    type_count: int
    max_width: int
    embed_dim: int = 100
    lstm_hidden: int = 200
    lstm_dropout: float = 0.5
    affine_hidden: int = 150
    affine_dropout: float = 0.2
    width_embed_dim: int = 25

    def __post_init__(self) -> None:
        for f in ("vocab_size", "type_count", "max_width", "embed_dim", "lstm_hidden",
                  "affine_hidden", "width_embed_dim"):
            if int(getattr(self, f)) < 1:
                raise ValueError(f"{f} must be positive, got {getattr(self, f)}")
        for f in ("lstm_dropout", "affine_dropout"):
            if not 0.0 <= getattr(self, f) < 1.0:
                raise ValueError(f"{f} must be in [0, 1), got {getattr(self, f)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Batch:
    ids: np.ndarray        # (B, T) int64
    lengths: np.ndarray    # (B,) int64
    valid: np.ndarray      # (B, T, T) bool: scored candidate spans
    targets: Optional[np.ndarray] = None  # (B, T, T, c) float32

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


def span_valid_mask(T: int, max_width: int) -> np.ndarray:
    i, j = np.indices((T, T))
    return (j >= i) & (j - i < max_width)


class BiaffineNER:
    """Parameters plus the forward pieces of the span classifier."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict[str, Tensor] = {}
        cfg = config
        E, H, d, c, dw = cfg.embed_dim, cfg.lstm_hidden, cfg.affine_hidden, cfg.type_count, cfg.width_embed_dim
        # draw order is fixed: it is part of the reproducibility contract
        self._add("embedding", _uniform(rng, (cfg.vocab_size, E), 1))
        for direction in ("fw", "bw"):
            self._add(f"lstm_{direction}_W_ih", _uniform(rng, (E, 4 * H), E))
            self._add(f"lstm_{direction}_W_hh", _uniform(rng, (H, 4 * H), H))
            b = _uniform(rng, (4 * H,), H)
            b[H:2 * H] += 1.0  # forget gate
            self._add(f"lstm_{direction}_b", b)
        for head in ("start", "end"):
            self._add(f"{head}_W", _uniform(rng, (2 * H, d), 2 * H))
            self._add(f"{head}_b", _uniform(rng, (d,), 2 * H))
        self._add("biaffine_U", _uniform(rng, (d, c, d), d))
        self._add("biaffine_W", _uniform(rng, (c, 2 * d + dw), 2 * d + dw))
        self._add("biaffine_b", _uniform(rng, (c,), 2 * d + dw))
        self._add("width_embedding", _uniform(rng, (cfg.max_width, dw), 1))

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True, name=name)

    # -- state ------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = sorted(set(self.params) - set(state))
            extra = sorted(set(state) - set(self.params))
            raise ShapeMismatch(f"parameter names differ: missing {missing}, unexpected {extra}")
        for k, p in self.params.items():
            value = np.asarray(state[k])
            if value.shape != p.shape:
                raise ShapeMismatch(f"{k}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.astype(DTYPE, copy=True)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- forward pieces ---------------------------------------------------

    def encode(self, ids: np.ndarray, lengths: Optional[np.ndarray] = None, training: bool = False,
               rng: Optional[np.random.Generator] = None) -> Tensor:
        """BiLSTM states ``(B, T, 2H)``; a 1-D ``ids`` is treated as one sentence."""
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None, :]
        B, T = ids.shape
        if T < 1:
            raise ValueError("encode needs at least one token")
        if lengths is None:
            lengths = np.full(B, T, dtype=np.int64)
        p = self.config.lstm_dropout
        x = ops.embedding(self.params["embedding"], ids)
        x = ops.dropout(x, p, rng, training)
        mask = None
        if np.any(lengths < T):
            mask = (np.arange(T)[None, :] < lengths[:, None]).astype(x.dtype)
        hf = self._lstm(x, "fw", None, reverse=False)
        hb = self._lstm(x, "bw", mask, reverse=True)
        h = ops.concat([hf, hb], axis=-1)
        return ops.dropout(h, p, rng, training)

    def _lstm(self, x: Tensor, direction: str, mask: Optional[np.ndarray], reverse: bool) -> Tensor:
        H = self.config.lstm_hidden
        W_hh = self.params[f"lstm_{direction}_W_hh"]
        xw = ops.add(ops.matmul(x, self.params[f"lstm_{direction}_W_ih"]), self.params[f"lstm_{direction}_b"])
        T = x.shape[1]
        h = c = None
        outs: list = [None] * T
        for t in (range(T - 1, -1, -1) if reverse else range(T)):
            z = ops.getitem(xw, (slice(None), t))
            if h is not None:
                z = ops.add(z, ops.matmul(h, W_hh))
            gates = ops.sigmoid(ops.getitem(z, (Ellipsis, slice(0, 3 * H))))
            g = ops.tanh(ops.getitem(z, (Ellipsis, slice(3 * H, 4 * H))))
            i_gate = ops.getitem(gates, (Ellipsis, slice(0, H)))
            f_gate = ops.getitem(gates, (Ellipsis, slice(H, 2 * H)))
            o_gate = ops.getitem(gates, (Ellipsis, slice(2 * H, 3 * H)))
            c_new = ops.mul(i_gate, g)
            if c is not None:
                c_new = ops.add(ops.mul(f_gate, c), c_new)
            h_new = ops.mul(o_gate, ops.tanh(c_new))
            if mask is not None:
                m = mask[:, t, None]
                if c is None:
                    c_new, h_new = ops.mul(c_new, m), ops.mul(h_new, m)
                else:
                    keep = 1.0 - m
                    c_new = ops.add(ops.mul(c_new, m), ops.mul(c, keep))
                    h_new = ops.add(ops.mul(h_new, m), ops.mul(h, keep))
            h, c = h_new, c_new
            outs[t] = h
        return ops.stack(outs, axis=1)

    def span_heads(self, H: Tensor, training: bool = False,
                   rng: Optional[np.random.Generator] = None) -> tuple[Tensor, Tensor]:
        p = self.config.affine_dropout
        out = []
        for head in ("start", "end"):
            h = ops.tanh(ops.add(ops.matmul(H, self.params[f"{head}_W"]), self.params[f"{head}_b"]))
            out.append(ops.dropout(h, p, rng, training))
        return out[0], out[1]

    def biaffine_scores(self, hs: Tensor, he: Tensor) -> Tensor:
        """Scores ``r_ij`` for every (i, j) cell, shape ``(B, T, T, c)``.

        The affine term ``W (h_s ⊕ h_e ⊕ w_{j-i})`` is evaluated as the sum of
        its three column blocks applied separately, which avoids materialising
        the concatenation for all T^2 cells.
        """
        d = self.config.affine_hidden
        c = self.config.type_count
        B, T, _ = hs.shape
        Wt = ops.transpose(self.params["biaffine_W"])
        start_term = ops.reshape(ops.matmul(hs, ops.getitem(Wt, (slice(0, d),))), (B, T, 1, c))
        end_term = ops.reshape(ops.matmul(he, ops.getitem(Wt, (slice(d, 2 * d),))), (B, 1, T, c))
        width_scores = ops.matmul(self.params["width_embedding"], ops.getitem(Wt, (slice(2 * d, None),)))
        i, j = np.indices((T, T))
        widx = np.clip(j - i, 0, self.config.max_width - 1)
        width_term = ops.embedding(width_scores, widx)
        r = ops.pairwise_bilinear(hs, self.params["biaffine_U"], he)
        r = ops.add(r, start_term)
        r = ops.add(r, end_term)
        r = ops.add(r, width_term)
        return ops.add(r, self.params["biaffine_b"])

    def span_score(self, hs_i: np.ndarray, he_j: np.ndarray, width: int) -> np.ndarray:
        """Literal single-span evaluation of the scoring vector (reference path)."""
        U = self.params["biaffine_U"].data
        W = self.params["biaffine_W"].data
        b = self.params["biaffine_b"].data
        w = self.params["width_embedding"].data[width]
        feat = np.concatenate([hs_i, he_j, w])
        return np.einsum("d,dce,e->c", hs_i, U, he_j) + W @ feat + b

    def forward(self, batch: Batch, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """Span probabilities ``(B, T, T, c)``."""
        H = self.encode(batch.ids, batch.lengths, training, rng)
        hs, he = self.span_heads(H, training, rng)
        return ops.softmax(self.biaffine_scores(hs, he))

    def loss(self, probs: Tensor, targets: np.ndarray) -> Tensor:
        """Span cross entropy summed within each sentence, averaged over the batch."""
        per_span = ops.soft_cross_entropy(probs, targets)
        return ops.mul(ops.sum(per_span), 1.0 / probs.shape[0])

    def predict(self, batch: Batch) -> np.ndarray:
        return self.forward(batch, training=False).data


def make_batch(
    items: Sequence[tuple[np.ndarray, Sequence[Span]]],
    type_count: int,
    max_width: int,
    mode: Optional[TargetMode] = None,
) -> Batch:
    """Pad encoded sentences ``(ids, spans)``; build targets when ``mode`` is given."""
    B = len(items)
    lengths = np.array([len(ids) for ids, _ in items], dtype=np.int64)
    T = int(lengths.max())
    ids = np.full((B, T), PAD_ID, dtype=np.int64)
    valid = np.zeros((B, T, T), dtype=bool)
    targets = None if mode is None else np.zeros((B, T, T, type_count), dtype=DTYPE)
    for k, (sent_ids, spans) in enumerate(items):
        n = len(sent_ids)
        ids[k, :n] = sent_ids
        cell_ok = span_valid_mask(n, max_width)
        valid[k, :n, :n] = cell_ok
        if targets is not None:
            tm = build_targets(spans, n, type_count, mode)
            targets[k, :n, :n] = tm.probs * cell_ok[..., None]
    return Batch(ids, lengths, valid, targets)
