"""Deterministic seed derivation.

All randomness in the package flows from a single master seed through
``derive_seed``, a keyed hash over string parts. Derived streams are stable
across runs, platforms and client scheduling order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Collapse (master_seed, label, indices, ...) into a 64-bit seed."""
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
