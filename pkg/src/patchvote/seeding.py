"""Deterministic seed derivation.

All stochastic components draw their seeds from a 64-bit hash of
(run seed, domain tag, indices...). Distinct domain tags ("train", "eval",
"baseline", ...) give disjoint seed families by construction, so held-out
evaluation episodes can never collide with training episodes.
"""

from __future__ import annotations

import hashlib
import struct


def derive_seed(run_seed: int, domain: str, *indices: int) -> int:
    """Stable 64-bit seed for (run_seed, domain, indices...)."""
    h = hashlib.sha256()
    h.update(struct.pack("<q", run_seed))
    h.update(domain.encode("utf-8"))
    h.update(b"\x00")
    for i in indices:
        h.update(struct.pack("<q", i))
    return int.from_bytes(h.digest()[:8], "little")
