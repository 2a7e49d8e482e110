"""Binary checkpoint format.

Layout (all integers little-endian):

  magic   4 bytes  b"CTB1"
  version u32
  meta    u32 byte length + canonical JSON (config, provenance, token vocab)
  count   u32 number of tensors
  tensor  u16 name length + name utf8
          u8  ndim
          u32 x ndim dims
          float32 row-major data

Tensors are written sorted by name so identical states produce identical
bytes. Loading restores float32 arrays exactly; a save/load round trip is
bit-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .utils import stable_json

MAGIC = b"CTB1"
VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    provenance: dict
    tokens: list[str]
    tensors: dict[str, np.ndarray]
    version: int = VERSION

    def meta(self) -> dict:
        return {"config": self.config, "provenance": self.provenance,
                "tokens": self.tokens}


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = stable_json(ckpt.meta()).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<I", len(meta)), meta,
             struct.pack("<I", len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name], dtype="<f4", order="C")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError(f"truncated checkpoint: {self.path}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise DataError(f"not a checkpoint file (bad magic): {path}")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}: {path}")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt checkpoint metadata: {path}") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(r.take(size * 4), dtype="<f4").reshape(shape)
        tensors[name] = data.astype(np.float32, copy=True)
    if r.pos != len(r.blob):
        raise DataError(f"trailing bytes after last tensor: {path}")
    return Checkpoint(config=meta["config"], provenance=meta["provenance"],
                      tokens=meta["tokens"], tensors=tensors, version=version)


def checkpoint_from_model(model, provenance: dict) -> Checkpoint:
    from .model import config_to_dict

    tensors = {name: p.data.astype(np.float32, copy=True)
               for name, p in model.params.items()}
    return Checkpoint(config=config_to_dict(model.config), provenance=dict(provenance),
                      tokens=list(model.vocab.tokens), tensors=tensors)


def model_from_checkpoint(ckpt: Checkpoint, seed: int = 0):
    from .embedder import TokenVocab
    from .model import TableModel, config_from_dict
    from .numcore import Tensor

    config = config_from_dict(ckpt.config)
    vocab = TokenVocab(list(ckpt.tokens))
    params = {}
    for name, arr in ckpt.tensors.items():
        trainable = (config.embedder.tokens_trainable()
                     if name == "embedder.tokens" else True)
        params[name] = Tensor(arr.copy(), requires_grad=trainable, name=name)
    return TableModel(config, vocab, params, seed=seed)
