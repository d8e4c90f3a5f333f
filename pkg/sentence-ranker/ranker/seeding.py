"""Named sub-seeds so that every random component is reproducible on its own."""

from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

SeedPart = Union[int, str]


def derive_seed(seed: int, *names: SeedPart) -> int:
    """Return a stable 63-bit seed for the component path ``names``.

    Python's ``hash`` is salted per process, so sha256 is used instead.
    """
    material = ":".join([str(int(seed)), *(str(name) for name in names)])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


def make_rng(seed: int, *names: SeedPart) -> np.random.Generator:
    """Return a numpy Generator seeded from ``derive_seed(seed, *names)``."""
    return np.random.default_rng(derive_seed(seed, *names))
