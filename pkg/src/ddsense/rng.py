"""Deterministic, counter-based random streams.

All randomness in the package flows through Philox4x64, keyed on
(seed, stream).  Philox is a pure counter-based generator, so the m-th value
of a stream can be regenerated directly from the counter block m // 4 without
producing its predecessors; :func:`phase_element` exposes that property.  The
algorithm identifier below is recorded in every run manifest.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "RNG_ALGORITHM",
    "unit_phases",
    "phase_element",
    "generator",
]

RNG_ALGORITHM = "philox4x64/key=(seed,stream)/u53"

_TWO_PI = 2.0 * math.pi


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    """A Generator for the (seed, stream) Philox key."""
    return np.random.Generator(np.random.Philox(key=[seed, stream]))


def unit_phases(seed: int, realization: int, count: int) -> np.ndarray:
    """Draw `count` i.i.d. phases uniform on [0, 2pi) for one realization."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return generator(seed, realization).random(count) * _TWO_PI


def phase_element(seed: int, realization: int, index: int) -> float:
    """Regenerate element `index` of :func:`unit_phases` without its predecessors.

    Uniform doubles consume one 64-bit Philox word each, four words per
    counter block, so element m lives in lane m % 4 of block m // 4.
    """
    if index < 0:
        raise ValueError("index must be >= 0")
    block, lane = divmod(index, 4)
    bitgen = np.random.Philox(counter=[block, 0, 0, 0], key=[seed, realization])
    raw = int(bitgen.random_raw(4)[lane])
    return (raw >> 11) * 2.0**-53 * _TWO_PI
