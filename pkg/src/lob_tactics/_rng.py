"""Counter-based per-path random streams.

Each simulated path owns a splitmix64 stream keyed by (seed, path index), so
runs are reproducible regardless of thread count or batch layout and the
numba and numpy backends can share the same draw sequence.
"""

from __future__ import annotations

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def path_states(seed: int, n_paths: int) -> np.ndarray:
    """Initial stream state per path, decorrelated by one mixing round."""
    idx = np.arange(n_paths, dtype=np.uint64)
    s = (np.uint64(seed) + (idx + np.uint64(1)) * _GAMMA) & _MASK
    # one extra scramble so adjacent seeds do not give adjacent states
    z = s
    z = ((z ^ (z >> np.uint64(30))) * _M1) & _MASK
    z = ((z ^ (z >> np.uint64(27))) * _M2) & _MASK
    return z ^ (z >> np.uint64(31))


def next_uniform(state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Advance each stream one step; return (new_state, U[0,1) ) vectorised."""
    s = (state + _GAMMA) & _MASK
    z = s
    z = ((z ^ (z >> np.uint64(30))) * _M1) & _MASK
    z = ((z ^ (z >> np.uint64(27))) * _M2) & _MASK
    z = z ^ (z >> np.uint64(31))
    return s, (z >> np.uint64(11)).astype(np.float64) * _INV53


# scalar versions, numba-friendly (plain ints)

def splitmix_init(seed: int, path: int) -> int:
    s = (seed + (path + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = s
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def splitmix_next(state: int) -> tuple[int, float]:
    s = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = s
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    z = z ^ (z >> 31)
    return s, (z >> 11) * _INV53
