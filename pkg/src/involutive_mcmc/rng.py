"""Counter-based random streams keyed by (seed, purpose, index).

Every stream is an independent Philox generator whose key is derived from
the base seed plus a purpose tag and an index, so adding chains or new
consumers never perturbs existing streams.
"""
from __future__ import annotations

import zlib

import numpy as np

__all__ = ["purpose_code", "stream", "chain_streams"]


def purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=(purpose_code(purpose), int(index)))
    return np.random.Generator(np.random.Philox(seq))


def chain_streams(seed: int, purpose: str, n_chains: int, start: int = 0):
    return [stream(seed, purpose, i) for i in range(start, start + n_chains)]
