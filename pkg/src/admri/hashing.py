"""Deterministic 64-bit hashing helpers used by file formats and seed derivation."""

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, state: int = FNV64_OFFSET) -> int:
    """64-bit FNV-1a hash of ``data``.

    Pass a previous return value as ``state`` to hash a stream in chunks.
    """
    h = state
    for byte in data:
        h = ((h ^ byte) * FNV64_PRIME) & _MASK64
    return h


def mix64(*parts: int) -> int:
    """Mix one or more integers into a single 64-bit value.

    Splitmix64 finalizer applied per part; used to derive independent RNG
    streams (per run, per epoch, per subject) from one base seed without
    the streams colliding for small seed offsets.
    """
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h = (h + (p & _MASK64)) & _MASK64
        h ^= h >> 30
        h = (h * 0xBF58476D1CE4E5B9) & _MASK64
        h ^= h >> 27
        h = (h * 0x94D049BB133111EB) & _MASK64
        h ^= h >> 31
    return h
