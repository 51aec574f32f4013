"""Deterministic random streams.

A stream is a 64-bit seed plus a path of integer keys. Children are derived
through :class:`numpy.random.SeedSequence` spawn keys, so the draws produced
for a given ``(seed, path)`` never depend on how work is scheduled.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Union

import numpy as np

_MAX_SEED = 2**64


def _key_to_int(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        raise TypeError("stream keys must be int or str")
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("integer stream keys must be non-negative")
        return int(key)
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big")
    raise TypeError(f"unsupported stream key {key!r}")


@dataclass(frozen=True)
class RngStream:
    seed: int
    path: tuple = ()

    def __post_init__(self):
        seed = int(self.seed)
        if not 0 <= seed < _MAX_SEED:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", seed)
        object.__setattr__(self, "path", tuple(_key_to_int(k) for k in self.path))

    def child(self, *keys) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(_key_to_int(k) for k in keys))

    def spawn(self, n: int) -> list:
        return [self.child(i) for i in range(n)]

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=self.path)

    def generator(self) -> np.random.Generator:
        """A fresh generator; calling twice replays the same draws."""
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))

    def integer_seed(self) -> int:
        """A 63-bit integer derived from the stream, for APIs that want an int."""
        return int(self.seed_sequence().generate_state(1, np.uint64)[0] >> np.uint64(1))


RngLike = Union[RngStream, int, None]


def as_stream(rng: RngLike, default_seed: int = 0) -> RngStream:
    if rng is None:
        return RngStream(default_seed)
    if isinstance(rng, RngStream):
        return rng
    return RngStream(int(rng))
