"""Shared plumbing: seed derivation, canonical JSON, digests, run logs."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path
from typing import Any, Iterable

import numpy as np


def derive_seed(*parts: Any) -> int:
    """Mix arbitrary labels into a 63-bit seed, stable across processes.

    Python's builtin hash() is salted per process, so substream seeds are
    derived from a keyed blake2 digest instead.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") & 0x7FFFFFFFFFFFFFFF


def rng_for(*parts: Any) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


def stable_json(obj: Any) -> str:
    """Canonical JSON: sorted keys, fixed separators, no trailing whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def config_digest(obj: Any) -> str:
    return sha256_hex(stable_json(obj).encode("utf-8"))[:16]


class RunLog:
    """Line-delimited structured log: one JSON record per event.

    Records carry (ts, key, value) so sweeps and external tooling can grep
    or parse them without caring about human formatting.
    """

    def __init__(self, path: str | Path | None = None, echo: bool = False):
        self.path = Path(path) if path is not None else None
        self.echo = echo
        self.records: list[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8")
        else:
            self._fh = None

    def log(self, key: str, value: Any) -> None:
        rec = {"ts": round(time.time(), 3), "key": key, "value": value}
        self.records.append(rec)
        line = json.dumps(rec, sort_keys=True)
        if self._fh is not None:
            self._fh.write(line + "\n")
            self._fh.flush()
        if self.echo:
            print(line)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "RunLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def global_grad_norm(grads: Iterable[np.ndarray]) -> float:
    total = 0.0
    for g in grads:
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return float(np.sqrt(total))
