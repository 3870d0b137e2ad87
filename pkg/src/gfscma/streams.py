"""Keyed random streams.

Every random draw in the package comes from a Philox (counter-based, 64-bit)
generator whose key is derived from a root seed plus a path of labels, e.g.
``Stream(7).child("train", "joint", 3)``. Two streams with different paths are
statistically independent; the same path always reproduces the same draws,
regardless of how work is split across workers.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

# Top-level domains. Evaluation and training never share a key prefix.
TRAIN = "train"
EVAL = "eval"
INIT = "init"
ASSOC = "assoc"


def _label_to_int(label: int | str) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"stream labels must be non-negative, got {label}")
        return int(label)
    # crc32 is stable across processes, unlike hash()
    return zlib.crc32(str(label).encode("utf-8")) | (1 << 32)


@dataclass(frozen=True)
class Stream:
    """A reproducible random stream identified by ``(seed, path)``."""

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *labels: int | str) -> "Stream":
        return Stream(self.seed, self.path + tuple(_label_to_int(x) for x in labels))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng: "np.random.Generator | Stream | int") -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, Stream):
        return rng.generator()
    return Stream(int(rng)).generator()
