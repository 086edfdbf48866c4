"""Stable 64-bit FNV-1a hashing, used for prompt digests and feature hashing."""

from __future__ import annotations

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


def prompt_digest(text: str) -> str:
    """16-hex-digit digest of the UTF-8 prompt bytes."""
    return f"{fnv1a_64(text.encode('utf-8')):016x}"
