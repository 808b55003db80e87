"""256-bit binary descriptors packed as rows of four uint64 words.

Bit k of a descriptor lives in byte k // 8, position k % 8 (LSB first),
with bytes laid out little-endian inside the words. All pack/unpack
helpers and the hex serialization share that convention.
"""

from __future__ import annotations

import numpy as np

DESCRIPTOR_BITS = 256
DESCRIPTOR_WORDS = 4
DESCRIPTOR_BYTES = 32


def empty(n: int) -> np.ndarray:
    return np.zeros((n, DESCRIPTOR_WORDS), dtype=np.uint64)


def random_descriptors(n: int, rng: np.random.Generator) -> np.ndarray:
    """n random descriptors, uniform over all 256-bit strings."""
    raw = rng.integers(0, 256, size=(n, DESCRIPTOR_BYTES), dtype=np.uint8)
    return raw.view(np.uint64).copy()


def flip_bits(desc: np.ndarray, n_flips: int, rng: np.random.Generator) -> np.ndarray:
    """Copy of a (4,) descriptor with n_flips distinct random bits toggled."""
    out = desc.copy()
    if n_flips <= 0:
        return out
    positions = rng.choice(DESCRIPTOR_BITS, size=n_flips, replace=False)
    words = positions // 64
    masks = np.uint64(1) << (positions % 64).astype(np.uint64)
    for w, m in zip(words, masks):
        out[w] ^= m
    return out


def unpack_bits(descs: np.ndarray) -> np.ndarray:
    """(n, 4) uint64 -> (n, 256) uint8 of individual bits."""
    descs = np.atleast_2d(descs)
    return np.unpackbits(descs.view(np.uint8), axis=1, bitorder="little")


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """(n, 256) bits -> (n, 4) uint64."""
    bits = np.atleast_2d(bits).astype(np.uint8)
    return np.packbits(bits, axis=1, bitorder="little").view(np.uint64)


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Hamming distance between two (4,) packed descriptors."""
    return int(np.bitwise_count(np.bitwise_xor(a, b)).sum())


def majority_descriptor(descs: np.ndarray) -> np.ndarray:
    """Per-bit majority vote; even ties take the first descriptor's bit."""
    descs = np.atleast_2d(descs)
    if descs.shape[0] == 0:
        raise ValueError("majority of empty descriptor set")
    if descs.shape[0] == 1:
        return descs[0].copy()
    bits = unpack_bits(descs)
    ones = bits.sum(axis=0, dtype=np.int64)
    n = descs.shape[0]
    out = np.where(2 * ones > n, 1, np.where(2 * ones < n, 0, bits[0]))
    return pack_bits(out)[0]


def to_hex(desc: np.ndarray) -> str:
    """64-char hex string of a (4,) descriptor (byte order as stored)."""
    return desc.view(np.uint8).tobytes().hex()


def from_hex(text: str) -> np.ndarray:
    raw = bytes.fromhex(text.strip())
    if len(raw) != DESCRIPTOR_BYTES:
        raise ValueError(f"descriptor hex must be {2 * DESCRIPTOR_BYTES} chars, got {len(text)}")
    return np.frombuffer(raw, dtype=np.uint8).view(np.uint64).copy()
