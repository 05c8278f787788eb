"""Deterministic seed derivation.

Every random draw in the package comes from a generator seeded with
derive_seed(master, *tags). The derived value is a stable 64-bit hash of
the master seed and the tag tuple, so sub-streams do not depend on call
order or thread count.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(master_seed: int, *tags: int | str) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update((int(master_seed) & _MASK64).to_bytes(8, "little"))
    for tag in tags:
        if isinstance(tag, str):
            raw = tag.encode("utf-8")
            h.update(b"s")
            h.update(len(raw).to_bytes(4, "little"))
            h.update(raw)
        else:
            h.update(b"i")
            h.update((int(tag) & _MASK64).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


def rng_from(master_seed: int, *tags: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *tags))
