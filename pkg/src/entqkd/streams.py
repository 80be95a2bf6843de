"""Counter-based uniform draws.

Every trial owns a fixed number of draw slots. The uniform for
``(seed, trial_index, slot)`` is the SplitMix64 output at stream position
``trial_index * SLOTS_PER_TRIAL + slot + 1``, so any trial can be replayed
in isolation and batches can be computed in any order or in parallel.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
SLOTS_PER_TRIAL = 8

# slot layout of one trial
SLOT_SOURCE = 0
SLOT_ALICE_BASIS = 1
SLOT_ALICE_MEASURE = 2
SLOT_EVE_CHOICE = 3
SLOT_EVE_MEASURE = 4
SLOT_BOB_BASIS = 5
SLOT_BOB_MEASURE = 6

_INV_2_53 = 1.0 / (1 << 53)


def normalize_seed(seed: int) -> int:
    """Reduce any Python int to an unsigned 64-bit seed."""
    return int(seed) & MASK64


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def uniform(seed: int, trial_index: int, slot: int) -> float:
    """Single uniform in [0, 1) for one trial slot."""
    position = trial_index * SLOTS_PER_TRIAL + slot + 1
    z = (normalize_seed(seed) + position * GOLDEN_GAMMA) & MASK64
    return (_mix(z) >> 11) * _INV_2_53


def uniforms(seed: int, trial_indices: np.ndarray, slot: int) -> np.ndarray:
    """Vectorized :func:`uniform` over an array of trial indices."""
    idx = np.asarray(trial_indices, dtype=np.uint64)
    position = idx * np.uint64(SLOTS_PER_TRIAL) + np.uint64(slot + 1)
    z = np.uint64(normalize_seed(seed)) + position * np.uint64(GOLDEN_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53


def trial_uniforms(seed: int, trial_index: int) -> list[float]:
    """All slot uniforms of one trial, in slot order."""
    return [uniform(seed, trial_index, s) for s in range(SLOTS_PER_TRIAL)]
