"""Deterministic random source: xoshiro256** seeded via splitmix64.

Every stochastic piece of the package (init, dropout, reparameterization
noise, shuffling, synthetic data) draws from this generator, so a 64-bit
seed pins the entire run bit-for-bit, independent of platform RNG
libraries. A numba-compiled fill loop is used when numba is importable;
it produces the same bits as the pure-Python loop (tested), so the
presence of numba only changes speed.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
# 2**-53: maps the top 53 bits of a 64-bit word onto [0, 1)
_TO_UNIT = 1.0 / (1 << 53)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + _SPLITMIX_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """The index-th output of the splitmix64 chain started at seed.

    Used to expand one user seed into independent sub-seeds (one per
    randomness role, then one per epoch within a role) so that adding or
    removing a consumer never shifts anyone else's stream.
    """
    if index < 0:
        raise ValueError("index must be non-negative")
    state = seed & _MASK64
    out = 0
    for _ in range(index + 1):
        state, out = splitmix64(state)
    return out


def _fill_py(out: np.ndarray, s0: int, s1: int, s2: int, s3: int):
    """Reference xoshiro256** block fill; returns the advanced state."""
    n = out.shape[0]
    for i in range(n):
        x = (s1 * 5) & _MASK64
        r = ((x << 7) | (x >> 57)) & _MASK64
        out[i] = (r * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
    return s0, s1, s2, s3


try:  # optional fast path, bit-identical to _fill_py
    from numba import njit

    @njit(cache=True)
    def _fill_nb(out, s0, s1, s2, s3):  # pragma: no cover - mirrors _fill_py
        n = out.shape[0]
        for i in range(n):
            x = s1 * np.uint64(5)
            r = (x << np.uint64(7)) | (x >> np.uint64(57))
            out[i] = r * np.uint64(9)
            t = s1 << np.uint64(17)
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
        return s0, s1, s2, s3

    def _fill(out, s0, s1, s2, s3):
        state = _fill_nb(out, np.uint64(s0), np.uint64(s1), np.uint64(s2), np.uint64(s3))
        return tuple(int(w) for w in state)

except ImportError:  # pragma: no cover - exercised on numba-less installs
    _fill = _fill_py


class Rng:
    """xoshiro256** stream with numpy-friendly block draws.

    State is four 64-bit words filled from splitmix64(seed), plus a
    cached spare normal so that Box-Muller pairs never straddle call
    boundaries: drawing k normals then m more yields the same values as
    drawing k+m at once.
    """

    def __init__(self, seed: int):
        state = seed & _MASK64
        words = []
        for _ in range(4):
            state, out = splitmix64(state)
            words.append(out)
        self._s = tuple(words)
        self._spare: float | None = None

    def raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit outputs as a uint64 array."""
        out = np.empty(n, dtype=np.uint64)
        self._s = _fill(out, *self._s)
        return out

    def uniform(self, rows: int, cols: int | None = None) -> np.ndarray:
        """Uniform draws in [0, 1), float64, row-major fill order."""
        n = rows if cols is None else rows * cols
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _TO_UNIT
        return u if cols is None else u.reshape(rows, cols)

    def standard_normal(self, rows: int, cols: int | None = None) -> np.ndarray:
        """N(0,1) draws via Box-Muller, row-major fill order.

        Each raw pair (a, b) yields z0 = sqrt(-2 ln u1) cos(2 pi u2) and
        z1 = sqrt(-2 ln u1) sin(2 pi u2) with u1 in (0,1], u2 in [0,1);
        an unconsumed z1 is carried to the next call.
        """
        n = rows if cols is None else rows * cols
        out = np.empty(n, dtype=np.float64)
        start = 0
        if self._spare is not None and n > 0:
            out[0] = self._spare
            self._spare = None
            start = 1
        need = n - start
        if need > 0:
            pairs = (need + 1) // 2
            r = self.raw(2 * pairs)
            hi = r >> np.uint64(11)
            u1 = (hi[0::2].astype(np.float64) + 1.0) * _TO_UNIT
            u2 = hi[1::2].astype(np.float64) * _TO_UNIT
            rad = np.sqrt(-2.0 * np.log(u1))
            ang = (2.0 * math.pi) * u2
            z = np.empty(2 * pairs, dtype=np.float64)
            z[0::2] = rad * np.cos(ang)
            z[1::2] = rad * np.sin(ang)
            out[start:] = z[:need]
            if 2 * pairs > need:
                self._spare = float(z[need])
        return out if cols is None else out.reshape(rows, cols)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n), int64."""
        idx = np.arange(n, dtype=np.int64)
        if n < 2:
            return idx
        r = self.raw(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(r[n - 1 - i]) % (i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx
