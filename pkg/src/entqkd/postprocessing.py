"""Key reconciliation and privacy amplification.

Kept deliberately small: shuffled-block parity bisection with a cascade
back-check of earlier passes, then a seeded Toeplitz hash over GF(2). The
functions only see bit arrays, so a stronger scheme can be swapped in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

DEFAULT_SAFETY_MARGIN = 16


class LengthMismatch(ValueError):
    pass


class KeyTooShort(ValueError):
    pass


def _as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.ndim != 1 or (arr > 1).any():
        raise ValueError("keys must be 1-d sequences of 0/1")
    return arr


@dataclass(frozen=True, eq=False)
class SiftedKey:
    bits: np.ndarray
    origin: str = "alice"

    def __post_init__(self):
        if self.origin not in ("alice", "bob"):
            raise ValueError(f"origin must be 'alice' or 'bob', got {self.origin!r}")
        object.__setattr__(self, "bits", _as_bits(self.bits))

    def __len__(self) -> int:
        return len(self.bits)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SiftedKey) and self.origin == other.origin and np.array_equal(self.bits, other.bits)
        )

    def hex(self) -> str:
        return bits_to_hex(self.bits)


@dataclass(frozen=True, eq=False)
class FinalKey:
    bits: np.ndarray
    leaked_bits: int

    def __len__(self) -> int:
        return len(self.bits)

    def hex(self) -> str:
        return bits_to_hex(self.bits)


def bits_to_hex(bits) -> str:
    """Lowercase hex, most significant bit first, zero-padded to whole bytes."""
    return np.packbits(_as_bits(bits)).tobytes().hex()


def hex_to_bits(text: str, length: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    bits = np.unpackbits(raw)
    if length > len(bits):
        raise ValueError(f"hex string holds {len(bits)} bits, {length} requested")
    return bits[:length].copy()


def _parity(bits: np.ndarray) -> int:
    return int(bits.sum() & 1)


class _Pass:
    """One shuffled partition of the key into fixed-size blocks."""

    def __init__(self, perm: np.ndarray, block_size: int):
        self.perm = perm
        self.block_size = block_size
        self.where = np.empty_like(perm)
        self.where[perm] = np.arange(len(perm))

    def block_of(self, pos: int) -> int:
        return int(self.where[pos]) // self.block_size

    def members(self, block: int) -> np.ndarray:
        lo = block * self.block_size
        return self.perm[lo : lo + self.block_size]

    def n_blocks(self) -> int:
        return -(-len(self.perm) // self.block_size)

    def block_parities(self, bits: np.ndarray) -> np.ndarray:
        starts = np.arange(0, len(self.perm), self.block_size)
        return np.add.reduceat(bits[self.perm].astype(np.int64), starts) & 1


def _bisect(ref: np.ndarray, other: np.ndarray, members: np.ndarray) -> tuple[int, int]:
    """Locate one differing position in an odd-parity-mismatch block.

    Returns ``(position, disclosed_parities)``.
    """
    leaked = 0
    while len(members) > 1:
        half = members[: len(members) // 2]
        leaked += 1
        if _parity(ref[half]) != _parity(other[half]):
            members = half
        else:
            members = members[len(members) // 2 :]
    return int(members[0]), leaked


def reconcile(
    key_a: SiftedKey,
    key_b: SiftedKey,
    rounds: int = 4,
    block_size: int = 8,
    rng: Optional[np.random.Generator] = None,
) -> tuple[SiftedKey, SiftedKey, int]:
    """Make the two keys equal, disclosing parities of the reference key.

    The key with ``origin == "alice"`` is the reference and the other one is
    corrected, so swapping the arguments swaps the outputs and nothing else.
    Every round shuffles both keys with one shared permutation and compares
    block parities. Each mismatching block is bisected down to a single bit,
    which is flipped; blocks of earlier rounds that contain the flipped bit
    are then re-examined. ``leaked`` counts every disclosed parity.

    Equality afterwards is likely, not certain: an even number of errors that
    shares a block in every round stays invisible, which matters for keys of
    only a few dozen bits.
    """
    if len(key_a) != len(key_b):
        raise LengthMismatch(f"LENGTH_MISMATCH: {len(key_a)} vs {len(key_b)} bits")
    if rounds < 1 or block_size < 1:
        raise ValueError("rounds and block_size must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    swap = key_a.origin != "alice" and key_b.origin == "alice"
    ref_key, other_key = (key_b, key_a) if swap else (key_a, key_b)
    ref = ref_key.bits.copy()
    other = other_key.bits.copy()
    n = len(ref)
    leaked = 0
    passes: list[_Pass] = []

    for _ in range(rounds):
        if n == 0:
            break
        current = _Pass(rng.permutation(n), block_size)
        passes.append(current)
        leaked += current.n_blocks()
        bad = np.flatnonzero(current.block_parities(ref) != current.block_parities(other))
        queue = [(len(passes) - 1, int(b)) for b in bad]
        while queue:
            p, block = queue.pop()
            members = passes[p].members(block)
            # parities of known blocks are already public; only bisection leaks
            if _parity(ref[members]) == _parity(other[members]):
                continue
            pos, cost = _bisect(ref, other, members)
            leaked += cost
            other[pos] ^= 1
            for q, earlier in enumerate(passes):
                if q != p:
                    queue.append((q, earlier.block_of(pos)))

    out_ref = SiftedKey(ref, ref_key.origin)
    out_other = SiftedKey(other, other_key.origin)
    if swap:
        return out_other, out_ref, leaked
    return out_ref, out_other, leaked


def toeplitz_seed_bits(hash_seed: int, n_out: int, n_in: int) -> np.ndarray:
    """Diagonal values of the hashing matrix: ``T[i, j] = t[i - j + n_in - 1]``."""
    return np.random.default_rng(hash_seed).integers(0, 2, size=n_out + n_in - 1, dtype=np.uint8)


def toeplitz_hash(bits: np.ndarray, n_out: int, hash_seed: int) -> np.ndarray:
    """GF(2) product of the seeded ``n_out x len(bits)`` Toeplitz matrix with ``bits``."""
    x = _as_bits(bits)
    n_in = len(x)
    t = toeplitz_seed_bits(hash_seed, n_out, n_in)
    size = 1 << math.ceil(math.log2(len(t) + n_in))
    conv = np.fft.irfft(np.fft.rfft(t.astype(np.float64), size) * np.fft.rfft(x.astype(np.float64), size), size)
    counts = np.rint(conv[n_in - 1 : n_in - 1 + n_out]).astype(np.int64)
    return (counts & 1).astype(np.uint8)


def privacy_amplify(
    key: SiftedKey, leaked: int, safety_margin: int = DEFAULT_SAFETY_MARGIN, hash_seed: int = 0
) -> FinalKey:
    """Compress ``key`` to ``len(key) - leaked - safety_margin`` bits."""
    n_out = len(key) - leaked - safety_margin
    if leaked < 0 or safety_margin < 0:
        raise ValueError("leaked and safety_margin must be non-negative")
    if n_out <= 0:
        raise KeyTooShort(
            f"KEY_TOO_SHORT: {len(key)} bits cannot absorb {leaked} leaked + {safety_margin} margin"
        )
    return FinalKey(toeplitz_hash(key.bits, n_out, hash_seed), leaked)
