"""Stable seed derivation for every RNG stream in the lab.

All randomness (data shards, delay draws, parameter inits, eval batches)
flows through `derive_seed`, so a run is a pure function of its config.
"""

from __future__ import annotations

import hashlib

_SEP = b"\x1f"


def derive_seed(*parts) -> int:
    """Derive a 64-bit seed from a mixed tuple of ints/strings.

    The digest is order-sensitive and collision-resistant, so unrelated
    streams (e.g. worker shards vs. delay sampling) never alias even when
    they share the same master seed.
    """
    h = hashlib.sha256()
    for p in parts:
        h.update(_SEP)
        h.update(str(p).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big")
