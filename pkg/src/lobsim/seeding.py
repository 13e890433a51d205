"""Stable per-task seeds."""
from __future__ import annotations

import hashlib


def task_seed(master: int, module: str, n: int, replication: int) -> int:
    """128-bit seed from (master seed, module, n, replication).

    Tasks are keyed by their coordinates, so adding or removing tasks never
    shifts another task's randomness.
    """
    key = f"{int(master)}|{module}|{int(n)}|{int(replication)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=16).digest(), "little")
