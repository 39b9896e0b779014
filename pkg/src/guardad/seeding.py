"""Stable, hash-derived RNG streams.

Draws are keyed by explicit labels (seed, scenario id, step, ...) instead of
consuming a shared sequential stream, so the same event gets the same draw
no matter what else ran before it.  That is what makes guarded and
unguarded replays of one scenario see identical policy faults.
"""

from __future__ import annotations

import hashlib
import random


def stable_rng(*parts: object) -> random.Random:
    """Random generator deterministically derived from the given key parts."""
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def stable_uniform(*parts: object) -> float:
    """One uniform [0,1) draw for the given key."""
    return stable_rng(*parts).random()
