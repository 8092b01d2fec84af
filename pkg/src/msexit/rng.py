"""Counter-based random numbers for reproducible parallel Monte Carlo.

Every Gaussian increment is a pure function of ``(seed, path, index)``:
the 64-bit seed is the Philox4x32-10 key and the counter is
``(index // 2, path, lane, attempt)``.  Two normals come from one Philox
block through a 128-layer ziggurat; the rare rejections draw more words
from a separate counter lane, so results never depend on how paths are
scheduled or batched.

Counter lanes: 0 for Brownian increments, 1 and 2 for ziggurat rejections of
the first and second normal of a block, 3 for initial-condition draws, 4 for
anything else keyed by the caller.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_U32 = 2.3283064365386963e-10  # 2**-32

LANE_BROWNIAN = 0
LANE_INITIAL = 3
LANE_AUX = 4


@nb.njit(inline="always", cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32 with 10 rounds; inputs and outputs are 32-bit values in uint64."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (((p1 >> np.uint64(32)) ^ c1 ^ k0) & _MASK, p1 & _MASK,
                          ((p0 >> np.uint64(32)) ^ c3 ^ k1) & _MASK, p0 & _MASK)
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


def split_seed(seed: int):
    """Philox key words from a 64-bit seed."""
    s = int(seed)
    if s < 0 or s >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.uint64(s & 0xFFFFFFFF), np.uint64(s >> 32)


def _ziggurat_tables():
    m1 = 2147483648.0
    dn = 3.442619855899
    tn = dn
    vn = 9.91256303526217e-3
    kn = np.zeros(128)
    wn = np.zeros(128)
    fn = np.zeros(128)
    q = vn / math.exp(-0.5 * dn * dn)
    kn[0] = math.floor((dn / q) * m1)
    kn[1] = 0.0
    wn[0] = q / m1
    wn[127] = dn / m1
    fn[0] = 1.0
    fn[127] = math.exp(-0.5 * dn * dn)
    for i in range(126, 0, -1):
        dn = math.sqrt(-2.0 * math.log(vn / dn + math.exp(-0.5 * dn * dn)))
        kn[i + 1] = math.floor((dn / tn) * m1)
        tn = dn
        fn[i] = math.exp(-0.5 * dn * dn)
        wn[i] = dn / m1
    return kn, wn, fn


ZIG_K, ZIG_W, ZIG_F = _ziggurat_tables()
_ZIG_R = 3.442619855899


@nb.njit(inline="always", cache=True)
def uniform01(word):
    """Open-interval uniform from one 32-bit word."""
    return (float(word) + 0.5) * _U32


@nb.njit(cache=True)
def ziggurat_slow(hz, iz, c0, c1, lane, k0, k1, KN, WN, FN):
    """Rejection branch of the ziggurat, fed from its own counter lane."""
    attempt = np.uint64(0)
    while True:
        a0, a1, a2, a3 = philox4x32(c0, c1, lane, attempt, k0, k1)
        attempt += np.uint64(1)
        x = hz * WN[iz]
        if iz == 0:
            x = -math.log(uniform01(a0)) / _ZIG_R
            y = -math.log(uniform01(a1))
            if y + y >= x * x:
                return _ZIG_R + x if hz > 0 else -_ZIG_R - x
            continue
        if FN[iz] + uniform01(a0) * (FN[iz - 1] - FN[iz]) < math.exp(-0.5 * x * x):
            return x
        hz = float(np.int64(a1)) - 2147483648.0
        iz = np.int64(a2 & np.uint64(127))
        if abs(hz) < KN[iz]:
            return hz * WN[iz]


@nb.njit(cache=True)
def normal_pair(c0, c1, k0, k1, KN, WN, FN):
    """The two standard normals of counter block ``(c0, c1, LANE_BROWNIAN, 0)``."""
    w0, w1, w2, w3 = philox4x32(c0, c1, np.uint64(0), np.uint64(0), k0, k1)
    hz = float(np.int64(w0)) - 2147483648.0
    iz = np.int64(w1 & np.uint64(127))
    g0 = hz * WN[iz]
    if abs(hz) >= KN[iz]:
        g0 = ziggurat_slow(hz, iz, c0, c1, np.uint64(1), k0, k1, KN, WN, FN)
    hz = float(np.int64(w2)) - 2147483648.0
    iz = np.int64(w3 & np.uint64(127))
    g1 = hz * WN[iz]
    if abs(hz) >= KN[iz]:
        g1 = ziggurat_slow(hz, iz, c0, c1, np.uint64(2), k0, k1, KN, WN, FN)
    return g0, g1


@nb.njit(cache=True)
def fill_normals_block(out, c0, path0, k0, k1, KN, WN, FN):
    """``out[0, p], out[1, p]`` = normal pair ``c0`` of path ``path0 + p``.

    The common branch is written so that it vectorizes across paths; the
    rejections are patched afterwards.
    """
    B = out.shape[1]
    words = np.empty((4, B), dtype=np.uint64)
    for p in range(B):
        w0, w1, w2, w3 = philox4x32(c0, np.uint64(path0 + p), np.uint64(0), np.uint64(0), k0, k1)
        words[0, p] = w0
        words[1, p] = w1
        words[2, p] = w2
        words[3, p] = w3
    bad = 0
    for r in range(2):
        for p in range(B):
            hz = float(np.int64(words[2 * r, p])) - 2147483648.0
            iz = np.int64(words[2 * r + 1, p] & np.uint64(127))
            out[r, p] = hz * WN[iz]
            bad += abs(hz) >= KN[iz]
    if bad:
        for r in range(2):
            for p in range(B):
                hz = float(np.int64(words[2 * r, p])) - 2147483648.0
                iz = np.int64(words[2 * r + 1, p] & np.uint64(127))
                if abs(hz) >= KN[iz]:
                    out[r, p] = ziggurat_slow(hz, iz, c0, np.uint64(path0 + p),
                                              np.uint64(1 + r), k0, k1, KN, WN, FN)


@nb.njit(inline="always", cache=True)
def _ppnd16(p):
    # Wichura's AS241, |error| ~ 1e-16 relative
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                         + 67265.770927008700853) * r + 45921.953931549871457) * r
                       + 13731.693765509461125) * r + 1971.5909503065514427) * r
                     + 133.14166789178437745) * r + 3.387132872796366608) / (
            ((((((5226.495278852545925 * r + 28729.085735721942674) * r
                 + 39307.89580009271061) * r + 21213.794301586595867) * r
               + 5394.1960214247511077) * r + 687.1870074920579083) * r
             + 42.313330701600911252) * r + 1.0)
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        v = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                  + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                + 3.64784832476320460504) * r + 5.7694972214606914055) * r
              + 4.6303378461565452959) * r + 1.42343711074968357734) / (
            ((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                 + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
               + 0.68976733498510000455) * r + 1.6763848301838038494) * r
             + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        v = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                  + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                + 0.29656057182850489123) * r + 1.7848265399172913358) * r
              + 5.4637849111641143699) * r + 6.6579046435011037772) / (
            ((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                 + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
               + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
             + 0.59983220655588793769) * r + 1.0)
    return -v if q < 0 else v


@nb.njit(cache=True)
def inverse_normal(p):
    """Standard normal quantile (Wichura's algorithm AS241)."""
    return _ppnd16(p)


@nb.njit(cache=True)
def keyed_normals(n, path0, lane, c_offset, k0, k1):
    """``out[p, j]``: normal ``j`` of path ``path0 + p`` on ``lane`` by inversion.

    Used for once-per-path draws (initial perturbations, auxiliary samples).
    """
    out = np.empty(n)
    for j in range(n):
        w0, w1, w2, w3 = philox4x32(np.uint64(c_offset + j // 4), np.uint64(path0),
                                    np.uint64(lane), np.uint64(0), k0, k1)
        r = j % 4
        w = w0 if r == 0 else (w1 if r == 1 else (w2 if r == 2 else w3))
        out[j] = _ppnd16(uniform01(w))
    return out


class PhiloxNormals:
    """Python-level access to the per-path Gaussian streams.

    ``increments(path, start, count)`` returns the same numbers the path
    simulator uses for Brownian increments ``start .. start+count-1``.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.k0, self.k1 = split_seed(seed)

    def increments(self, path: int, start: int, count: int) -> np.ndarray:
        return _stream(np.int64(path), np.int64(start), np.int64(count),
                       self.k0, self.k1, ZIG_K, ZIG_W, ZIG_F)

    def block(self, pair_index: int, path0: int, n_paths: int) -> np.ndarray:
        out = np.empty((2, n_paths))
        fill_normals_block(out, np.uint64(pair_index), np.int64(path0), self.k0, self.k1,
                           ZIG_K, ZIG_W, ZIG_F)
        return out

    def keyed(self, path: int, count: int, lane: int = LANE_AUX, offset: int = 0) -> np.ndarray:
        return keyed_normals(count, np.uint64(path), lane, offset, self.k0, self.k1)


@nb.njit(cache=True)
def _stream(path, start, count, k0, k1, KN, WN, FN):
    out = np.empty(count)
    for j in range(count):
        n = start + j
        g0, g1 = normal_pair(np.uint64(n >> 1), np.uint64(path), k0, k1, KN, WN, FN)
        out[j] = g0 if (n & 1) == 0 else g1
    return out
