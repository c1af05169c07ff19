"""Splittable seed derivation.

Child seeds are the first 8 bytes (little-endian) of
SHA-256("pli-seed" || master || role/index parts), each part length-tagged by
type. Adding clients or roles never perturbs the stream of an existing one.
"""

from __future__ import annotations

import hashlib
import struct


def derive_seed(master_seed: int, *parts: int | str) -> int:
    h = hashlib.sha256()
    h.update(b"pli-seed\x00")
    h.update(struct.pack("<Q", master_seed % 2**64))
    for part in parts:
        if isinstance(part, str):
            raw = part.encode("utf-8")
            h.update(b"s" + struct.pack("<I", len(raw)) + raw)
        else:
            h.update(b"i" + struct.pack("<q", part))
    return int.from_bytes(h.digest()[:8], "little")


def derive_key(master_seed: int, *parts: int | str) -> bytes:
    """32-byte key for the run's transport encryption, same scheme as seeds."""
    h = hashlib.sha256()
    h.update(b"pli-key\x00")
    h.update(struct.pack("<Q", master_seed % 2**64))
    for part in parts:
        if isinstance(part, str):
            raw = part.encode("utf-8")
            h.update(b"s" + struct.pack("<I", len(raw)) + raw)
        else:
            h.update(b"i" + struct.pack("<q", part))
    return h.digest()
