"""Software FP8 E4M3 codec.

Layout is ``[sign:1][exponent:4][mantissa:3]`` with bias 7, no infinities and
a single NaN pattern per sign (``S.1111.111``). Everything here works off an
enumerated table of the 256 code points, so encoding is a nearest-neighbour
lookup with ties resolved towards the even code (even mantissa).

Encoding saturates: magnitudes above 448 map to +-448, never to NaN.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidValue

EXPONENT_BITS = 4
MANTISSA_BITS = 3
BIAS = 7
E4M3_MAX = 448.0
MIN_NORMAL = 2.0**-6
MIN_SUBNORMAL = 2.0**-9
NAN_CODES = (0x7F, 0xFF)


def _code_value(code: int) -> float:
    sign = -1.0 if code & 0x80 else 1.0
    exponent = (code >> MANTISSA_BITS) & 0xF
    mantissa = code & 0x7
    if exponent == 0xF and mantissa == 0x7:
        return float("nan")
    if exponent == 0:
        return sign * MIN_NORMAL * (mantissa / 8.0)
    return sign * 2.0 ** (exponent - BIAS) * (1.0 + mantissa / 8.0)


VALUES = np.array([_code_value(c) for c in range(256)], dtype=np.float64)
VALUES.setflags(write=False)

# Non-negative finite magnitudes; index == code for codes 0x00..0x7E.
_POSITIVE = VALUES[:0x7F].copy()
# Rounding midpoints between neighbours; exact in float64 (at most 5 significant bits).
_MIDPOINTS = (_POSITIVE[:-1] + _POSITIVE[1:]) / 2.0


def value_table() -> np.ndarray:
    """All 256 decoded values, indexed by code (read-only view)."""
    return VALUES


def is_nan_code(code) -> np.ndarray | bool:
    c = np.asarray(code, dtype=np.uint8)
    out = (c & 0x7F) == 0x7F
    return bool(out) if out.ndim == 0 else out


def encode(value):
    """Round real value(s) to the nearest E4M3 code.

    Accepts a Python scalar or any array-like; scalars come back as ``int``,
    arrays as ``uint8`` arrays of the same shape. Ties go to the even code and
    out-of-range magnitudes saturate to 448. The sign of zero is kept, so
    ``-0.0`` encodes to ``0x80``.

    Raises:
        InvalidValue: if any input is NaN or infinite.
    """
    x = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidValue("E4M3 encode requires finite input")
    mag = np.minimum(np.abs(x), E4M3_MAX)

    # _POSITIVE[hi - 1] < mag <= _POSITIVE[hi]
    hi = np.searchsorted(_POSITIVE, mag, side="left")
    lo = np.maximum(hi - 1, 0)
    mid = _MIDPOINTS[np.minimum(lo, len(_MIDPOINTS) - 1)]
    pick_hi = (mag > mid) | ((mag == mid) & (hi % 2 == 0))
    code = np.where(hi == 0, 0, np.where(pick_hi, hi, lo)).astype(np.uint8)
    code |= np.where(np.signbit(x), np.uint8(0x80), np.uint8(0)).astype(np.uint8)

    if code.ndim == 0:
        return int(code)
    return code


def decode(code):
    """Exact real value of E4M3 code(s); NaN codes give ``nan``.

    Scalars return ``float``; arrays return ``float64`` arrays.
    """
    c = np.asarray(code)
    if c.dtype != np.uint8:
        if np.any((c < 0) | (c > 0xFF)):
            raise InvalidValue("E4M3 code out of range 0..255")
        c = c.astype(np.uint8)
    out = VALUES[c]
    if out.ndim == 0:
        return float(out)
    return out


def round_trip(value) -> np.ndarray:
    """``decode(encode(value))`` for arrays, i.e. fake-quantization at unit scale."""
    return VALUES[np.asarray(encode(np.asarray(value)), dtype=np.uint8)]


def ulp(value) -> np.ndarray:
    """Spacing between adjacent E4M3 values in the binade of ``|value|``."""
    mag = np.minimum(np.abs(np.asarray(value, dtype=np.float64)), E4M3_MAX)
    exponent = np.floor(np.log2(np.maximum(mag, MIN_NORMAL)))
    return 2.0 ** (exponent - MANTISSA_BITS)
