"""Shared helpers: stable hashing for seeded draws, state quantization, frame math."""

from __future__ import annotations

import hashlib

DT_S = 0.1
FRAMES_PER_S = 10

_QUANTUM = 1e-6
_SPEED_QUANTUM = 1e-5


def stable_seed(*parts) -> int:
    """Platform-stable 64-bit seed derived from the given parts."""
    key = ":".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")


def stable_uniform(*parts) -> float:
    """Deterministic uniform draw in [0, 1) keyed by the given parts."""
    return stable_seed(*parts) / 2.0**64


def quantize(x: float) -> float:
    """Snap a position to the micrometer grid.

    Keeps digests, log round-trips, and geo back-projection exact: any
    sub-quantum float noise introduced by serialization is absorbed when the
    value is re-quantized.
    """
    return round(x * 1e6) * _QUANTUM


def quantize_speed(x: float) -> float:
    """Snap a speed to a 1e-5 m/s grid.

    Deliberately one decade coarser than the position grid: speed times the
    0.1 s frame is then an exact micrometer multiple, so position rounding
    never lands on a representation-dependent .5 tie.
    """
    return round(x * 1e5) * _SPEED_QUANTUM


def to_frame(t_s: float) -> int:
    """Nearest frame index for a time that must lie on the 0.1 s lattice."""
    return round(t_s * FRAMES_PER_S)


def frame_time(frame: int) -> float:
    return frame / FRAMES_PER_S
