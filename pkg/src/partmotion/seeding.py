"""Deterministic seed substreams.

Every stage derives its randomness from one root seed through named
substreams, so stages can be rerun independently yet reproducibly.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream_seed(root: int, *names) -> int:
    """A stable 63-bit seed for the named substream of a root seed."""
    text = str(int(root)) + "".join(f"|{n}" for n in names)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFFFFFFFFFFFFFF


def rng_for(root: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(substream_seed(root, *names)))
