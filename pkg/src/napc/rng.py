"""Named, counter-based random streams.

Every random draw in the package goes through :func:`stream`, which keys a
Philox generator on ``(seed, name, *indices)``. Two calls with the same key
always produce the same numbers, independent of call order or of any global
state, so epoch ``e`` of a training run can be replayed without having run
epochs ``0..e-1`` first.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np


def _key(seed: int, name: str, indices: tuple[int, ...]) -> list[int]:
    # Stable across processes and Python versions (unlike hash()).
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    name_words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return [int(seed) & 0xFFFFFFFF, int(seed) >> 32 & 0xFFFFFFFF, *name_words, *map(int, indices)]


def stream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return a fresh generator for the stream ``name`` at position ``indices``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(_key(seed, name, indices))
    return np.random.Generator(np.random.Philox(ss))


def stream_state(seed: int, name: str, *indices: int) -> str:
    """JSON description of a stream position; enough to recreate it with :func:`stream`."""
    return json.dumps({"seed": int(seed), "name": name, "indices": [int(i) for i in indices]})


def stream_from_state(state: str) -> np.random.Generator:
    d = json.loads(state)
    return stream(d["seed"], d["name"], *d["indices"])
