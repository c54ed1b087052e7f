"""Counter-based Philox4x32-10 generator for per-spin random streams.

Every draw is a pure function of ``(key, counter)``, so a spin's stream
does not depend on which thread walks it or in which order.
"""

import math

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

# stream tags (fourth counter word)
TAG_DIRECTION = 0
TAG_POSITION = 1

_INV_2_32 = 1.0 / 4294967296.0
_TWO_PI = 2.0 * math.pi


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten rounds of Philox4x32 on a 128-bit counter with a 64-bit key."""
    x0 = np.uint32(c0)
    x1 = np.uint32(c1)
    x2 = np.uint32(c2)
    x3 = np.uint32(c3)
    a = np.uint32(k0)
    b = np.uint32(k1)
    for _ in range(10):
        p0 = np.uint64(x0) * _M0
        p1 = np.uint64(x2) * _M1
        hi0 = np.uint32(p0 >> _SHIFT)
        lo0 = np.uint32(p0 & _MASK)
        hi1 = np.uint32(p1 >> _SHIFT)
        lo1 = np.uint32(p1 & _MASK)
        x0 = hi1 ^ x1 ^ a
        x1 = lo1
        x2 = hi0 ^ x3 ^ b
        x3 = lo0
        a = np.uint32(a + _W0)
        b = np.uint32(b + _W1)
    return x0, x1, x2, x3


@nb.njit(cache=True, inline="always")
def _open_unit(x):
    # (x + 0.5) / 2**32 lies strictly inside (0, 1)
    return (np.float64(x) + 0.5) * _INV_2_32


@nb.njit(cache=True)
def uniforms4(step, spin, tag, k0, k1):
    """Four uniforms in (0, 1) for one (step, spin, tag) counter."""
    spin = np.uint64(spin)
    r0, r1, r2, r3 = philox4x32(
        np.uint32(step),
        np.uint32(spin & _MASK),
        np.uint32(spin >> _SHIFT),
        np.uint32(tag),
        k0,
        k1,
    )
    return _open_unit(r0), _open_unit(r1), _open_unit(r2), _open_unit(r3)


@nb.njit(cache=True)
def direction(step, spin, k0, k1):
    """Uniform unit vector from a normalised standard-normal triple.

    A zero-length draw is redrawn with the attempt number folded into the
    tag word; in practice the first draw is always accepted.
    """
    attempt = 0
    while True:
        u0, u1, u2, u3 = uniforms4(step, spin, TAG_DIRECTION + (attempt << 8), k0, k1)
        ra = math.sqrt(-2.0 * math.log(u0))
        rb = math.sqrt(-2.0 * math.log(u2))
        gx = ra * math.cos(_TWO_PI * u1)
        gy = ra * math.sin(_TWO_PI * u1)
        gz = rb * math.cos(_TWO_PI * u3)
        n2 = gx * gx + gy * gy + gz * gz
        if n2 > 1e-300:
            inv = 1.0 / math.sqrt(n2)
            return gx * inv, gy * inv, gz * inv
        attempt += 1


def split_seed(seed):
    """Split a 64-bit seed into the two 32-bit Philox key words."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.uint32(seed & 0xFFFFFFFF), np.uint32(seed >> 32)
