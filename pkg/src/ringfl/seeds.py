"""Deterministic seed derivation.

Every random decision in the simulator draws from a seed derived from the
experiment's master seed plus a purpose label (e.g. ("train", node_id, round)).
This keeps per-node work order-independent and makes runs bit-reproducible:
the same master seed always yields the same derived seed for the same label,
regardless of transport mode or call order.
"""

from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1


def derive_seed(master_seed: int, *labels: object) -> int:
    """Derive a 64-bit seed from a master seed and a label path.

    Labels are joined into a canonical byte string and hashed; ints and
    strings are both accepted.
    """
    h = hashlib.sha256()
    h.update(str(master_seed & _MASK64).encode("ascii"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")
