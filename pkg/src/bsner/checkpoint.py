"""Binary checkpoint files.

Layout::

    b"BSNER1\\n"
    uint64 little-endian  manifest byte length
    manifest              UTF-8 JSON (sorted keys, compact separators)
    payload               float32 little-endian tensors, in manifest order

The manifest holds ``version``, ``model_config``, ``tensors`` (a list of
``{name, shape, offset}`` with offsets in bytes from the start of the
payload) and, optionally, ``vocab`` and ``meta`` (free-form run metadata
such as the training target mode).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .corpus import Vocab
from .model import BiaffineNER, ModelConfig

MAGIC = b"BSNER1\n"
VERSION = 1
_LEN = struct.Struct("<Q")
_FLOAT = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    vocab: Optional[Vocab] = None
    meta: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: BiaffineNER, vocab: Optional[Vocab] = None,
                   meta: Optional[dict] = None, state: Optional[dict[str, np.ndarray]] = None) -> "Checkpoint":
        state = model.state_dict() if state is None else state
        return cls(model.config, {k: state[k] for k in model.params}, vocab, dict(meta or {}))

    def build_model(self, config: Optional[ModelConfig] = None) -> BiaffineNER:
        """Instantiate a model (under ``config`` if given) and load the weights.

        Raises :class:`~bsner.model.ShapeMismatch` when the shapes disagree.
        """
        model = BiaffineNER(config or self.config, np.random.default_rng(0))
        model.load_state_dict(self.tensors)
        return model


def to_bytes(ckpt: Checkpoint) -> bytes:
    directory = []
    payload = bytearray()
    for name, arr in ckpt.tensors.items():
        data = np.ascontiguousarray(arr, dtype=_FLOAT)
        directory.append({"name": name, "shape": list(data.shape), "offset": len(payload)})
        payload += data.tobytes()
    manifest: dict[str, Any] = {
        "version": VERSION,
        "model_config": ckpt.config.to_dict(),
        "tensors": directory,
    }
    if ckpt.vocab is not None:
        manifest["vocab"] = ckpt.vocab.to_dict()
    if ckpt.meta:
        manifest["meta"] = ckpt.meta
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return MAGIC + _LEN.pack(len(head)) + head + bytes(payload)


def from_bytes(blob: bytes) -> Checkpoint:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    pos = len(MAGIC)
    if len(blob) < pos + _LEN.size:
        raise CheckpointError("truncated checkpoint header")
    (n,) = _LEN.unpack_from(blob, pos)
    pos += _LEN.size
    if len(blob) < pos + n:
        raise CheckpointError("truncated checkpoint manifest")
    try:
        manifest = json.loads(blob[pos:pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from None
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')!r}")
    base = pos + n
    tensors: dict[str, np.ndarray] = {}
    expected = 0
    for entry in manifest["tensors"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        if name in tensors:
            raise CheckpointError(f"tensor {name!r} listed twice")
        if offset != expected:
            raise CheckpointError(f"tensor {name!r}: offset {offset} does not follow the previous tensor")
        nbytes = int(np.prod(shape, dtype=np.int64)) * _FLOAT.itemsize
        start = base + offset
        if start + nbytes > len(blob):
            raise CheckpointError(f"truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(blob, _FLOAT, nbytes // _FLOAT.itemsize, start).reshape(shape).astype(np.float32)
        expected = offset + nbytes
    if base + expected != len(blob):
        raise CheckpointError(f"{len(blob) - base - expected} trailing bytes after the last tensor")
    vocab = Vocab.from_dict(manifest["vocab"]) if "vocab" in manifest else None
    try:
        config = ModelConfig.from_dict(manifest["model_config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"bad model config in manifest: {exc}") from None
    return Checkpoint(config, tensors, vocab, manifest.get("meta", {}))


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
