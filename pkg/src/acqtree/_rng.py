"""Deterministic random-stream derivation shared by every module.

A stream is named by a ``(seed, label)`` pair. The label is hashed into the
seed material, so any two distinct labels under the same root seed give
statistically independent, platform-stable sequences (PCG64 + SHA-256 are
both specified bit-for-bit).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _entropy(seed: int, label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return [seed & _MASK64, *words]


@dataclass(frozen=True)
class RngHandle:
    """Name of one reproducible draw sequence.

    The handle itself is immutable and shareable; call :meth:`generator` to
    materialize the stream. Each consumer must own the generator it draws
    from -- two generators from the same handle replay the same sequence.
    """

    seed: int
    label: str = "root"

    def generator(self) -> np.random.Generator:
        return np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(_entropy(self.seed, self.label)))
        )

    def child(self, label: str) -> "RngHandle":
        return RngHandle(self.seed, f"{self.label}/{label}")
