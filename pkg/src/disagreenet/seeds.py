"""Deterministic seed derivation.

All randomness in the package flows from a single 64-bit root seed.
Components derive their own seeds by name (and optional index) so that
adding or removing one consumer never shifts the streams of another.
"""

import hashlib


def derive_seed(root: int, label: str, index: int = 0) -> int:
    """Derive a 64-bit seed from a root seed, a component label and an index."""
    payload = f"{root:#x}/{label}/{index}".encode()
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")
