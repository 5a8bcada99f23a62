"""PAM constellations, message mapping, nearest-point demapping, chunking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MAX_BITS",
    "PamConstellation",
    "MessageChunks",
    "make_constellation",
    "map_message",
    "demap",
    "chunk",
]

# Above this many bits per symbol the spacing approaches the double-precision
# resolution of the constellation span and detection quality degrades.
MAX_BITS = 23


@dataclass(frozen=True)
class PamConstellation:
    """Amplitude levels {+-eta, +-3*eta, ...} scaled to a mean symbol energy."""

    bits: int
    target_power: float
    eta: float
    points: np.ndarray
    _midpoints: np.ndarray

    @property
    def size(self) -> int:
        return 1 << self.bits

    def mean_energy(self) -> float:
        return float(np.mean(self.points**2))


def make_constellation(bits: int, target_power: float) -> PamConstellation:
    """Build the 2^bits-point PAM constellation with the given mean energy.

    The half-spacing is eta = sqrt(3 * target_power / (4^bits - 1)), which
    makes the mean energy over uniform messages equal to ``target_power``.
    """
    if not 1 <= bits <= MAX_BITS:
        raise ValueError(f"bits per symbol must be in [1, {MAX_BITS}], got {bits}")
    if not target_power > 0.0:
        raise ValueError(f"target power must be positive, got {target_power}")
    m = 1 << bits
    eta = np.sqrt(3.0 * target_power / (m * m - 1.0))
    levels = 2.0 * np.arange(m) - (m - 1.0)
    points = levels * eta
    midpoints = 0.5 * (points[1:] + points[:-1])
    return PamConstellation(bits=bits, target_power=target_power, eta=float(eta),
                            points=points, _midpoints=midpoints)


def map_message(word, constellation: PamConstellation) -> np.ndarray | float:
    """Natural-order mapping of a message index onto the sorted amplitudes."""
    w = np.asarray(word)
    if np.any(w < 0) or np.any(w >= constellation.size):
        raise ValueError(f"message out of range [0, {constellation.size})")
    out = constellation.points[w]
    return float(out) if np.isscalar(word) else out


def demap(value, constellation: PamConstellation) -> np.ndarray | int:
    """Nearest-point detection; midpoint ties resolve to the lower index."""
    v = np.asarray(value, dtype=float)
    idx = np.searchsorted(constellation._midpoints, v, side="left")
    return int(idx) if np.isscalar(value) else idx


@dataclass(frozen=True)
class MessageChunks:
    """A T-bit message split into m = T/K ordered K-bit chunks."""

    total_bits: int
    chunk_bits: int
    blocks: np.ndarray  # (m, K) of 0/1

    @property
    def count(self) -> int:
        return self.blocks.shape[0]

    def words(self) -> np.ndarray:
        """Each chunk as an integer, first bit most significant."""
        weights = 1 << np.arange(self.chunk_bits - 1, -1, -1)
        return self.blocks @ weights

    def concat(self) -> np.ndarray:
        return self.blocks.reshape(-1)


def chunk(bits, chunk_bits: int) -> MessageChunks:
    """Split a bit vector into equal chunks; the chunk size must divide it."""
    b = np.asarray(bits, dtype=np.int64).reshape(-1)
    if chunk_bits < 1:
        raise ValueError("chunk size must be positive")
    if b.size % chunk_bits != 0:
        raise ValueError(f"chunk size {chunk_bits} does not divide message length {b.size}")
    if np.any((b != 0) & (b != 1)):
        raise ValueError("message must be binary")
    return MessageChunks(total_bits=b.size, chunk_bits=chunk_bits,
                         blocks=b.reshape(-1, chunk_bits))
