"""Deterministic seed derivation and stable content hashing.

Every random draw in the pipeline comes from an RNG derived here, keyed by
the run seed plus a lane label (and usually a record id), so parallel or
resumed executions cannot change outputs.
"""

from __future__ import annotations

import hashlib
import random


def stable_digest(*parts: object) -> str:
    """Hex digest of the ordered parts, stable across processes and runs."""
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


def derive_seed(*parts: object) -> int:
    return int(stable_digest(*parts)[:16], 16)


def derive_rng(*parts: object) -> random.Random:
    """Fresh RNG whose stream depends only on the given parts."""
    return random.Random(derive_seed(*parts))


def short_id(*parts: object) -> str:
    """16-hex-char identifier for records (items, candidates, runs)."""
    return stable_digest(*parts)[:16]
