"""Fixed-point inverse-CDF Gaussian sampler.

A ``w``-bit uniform word is split into a sign bit and a ``w - 1`` bit
magnitude ``m``.  The magnitude addresses the lower tail quantile
``q = m / 2**w`` and the sample magnitude is ``-Phi^-1(q)``.  The tail is cut
into dyadic segments selected by the leading-zero count of ``m``; each
segment is split into four sub-segments addressed by the two bits after the
leading one, and each sub-segment holds a quadratic in an 11-bit fraction
``x`` taken from the bits that follow.

Fixed-point datapath (normative for this package)::

    C2, C1, C0   signed integers, real value C / 2**f2, C / 2**f1, C / 2**f0
    X            11-bit unsigned, real value X / 2**11

    t1  = C2 * X                      # f2 + 11 fractional bits
    s1  = align(t1, f2 + 11 -> f1) + C1
    t2  = s1 * X                      # f1 + 11 fractional bits
    s2  = align(t2, f1 + 11 -> f0) + C0
    out = align(s2, f0 -> 10)         # Q3.10, saturated to [0, 2**13 - 1]

``align`` is an arithmetic shift that truncates toward zero when bits are
dropped.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import erfc

VALID_WIDTHS = (12, 16, 24, 32)

X_BITS = 11
C0_BITS = 35
C1_BITS = 20
C2_BITS = 7
OUT_BITS = 13
OUT_FRAC = 10
OUT_MAX = (1 << OUT_BITS) - 1
FIT_NODES = 1 << X_BITS

_TABLE_MAGIC = b"QWCT"
_TABLE_VERSION = 1
_HEADER = struct.Struct("<4sHBBBB")
_RECORD = struct.Struct("<qib")

# Acklam's rational approximation, relative error ~1.15e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549671010848147e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _initial_lower(q: np.ndarray) -> np.ndarray:
    # q in (0, 0.5]; result <= 0
    x = np.empty_like(q)
    tail = q < _P_LOW
    if tail.any():
        t = np.sqrt(-2.0 * np.log(q[tail]))
        num = ((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]
        den = (((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0
        x[tail] = num / den
    mid = ~tail
    if mid.any():
        s = q[mid] - 0.5
        r = s * s
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * s
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[mid] = num / den
    return x


def lower_quantile(q, iterations: int = 2):
    """Phi^-1(q) for lower-tail probabilities ``0 < q <= 0.5``.

    Working in the lower tail keeps ``q`` exact for tiny probabilities such
    as ``2**-32`` instead of routing them through ``1 - q``.
    """
    q = np.asarray(q, dtype=float)
    scalar = q.ndim == 0
    q = np.atleast_1d(q)
    if np.any(~(q > 0.0)) or np.any(q > 0.5):
        raise ValueError("lower_quantile needs 0 < q <= 0.5")
    x = _initial_lower(q)
    for _ in range(iterations):
        # Halley step on Phi(x) - q
        e = 0.5 * erfc(-x / math.sqrt(2.0)) - q
        u = e * _SQRT_2PI * np.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    x = np.minimum(x, 0.0)
    return float(x[0]) if scalar else x


def icdf_reference(u, iterations: int = 2):
    """Standard normal quantile ``sqrt(2) * erfinv(2u - 1)``.

    Accepts a scalar or an array.  Raises ``ValueError`` outside ``(0, 1)``.
    """
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    if np.any(~(u > 0.0)) or np.any(~(u < 1.0)):
        raise ValueError("icdf_reference is defined on the open interval (0, 1)")
    upper = u > 0.5
    q = np.where(upper, 1.0 - u, u)
    x = lower_quantile(q, iterations)
    x = np.where(upper, -x, x)
    return float(x[0]) if scalar else x


def crest_factor(w: int) -> float:
    """Largest normalized output for a ``w``-bit uniform input.

    Equals ``sqrt(2) * erfinv(1 - 2**(1 - w))``, i.e. ``-Phi^-1(2**-w)``.
    """
    if w < 2:
        raise ValueError("crest factor needs w >= 2")
    return -lower_quantile(math.ldexp(1.0, -w))


# ---------------------------------------------------------------------------
# Word decomposition (LZD + barrel shift)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Decomposition:
    width: int
    sign: int
    z: int
    sub: int
    x: int
    is_zero: bool


def _check_width(w: int) -> None:
    if w not in VALID_WIDTHS:
        raise ValueError(f"URN width must be one of {VALID_WIDTHS}, got {w}")


def decompose_array(values, w: int):
    """Vectorized decomposition of ``w``-bit words.

    Returns ``(sign, z, sub, x, is_zero)`` as integer arrays.  For zero
    magnitudes ``z``, ``sub`` and ``x`` are 0.
    """
    v = np.asarray(values, dtype=np.uint64)
    sign = (v >> np.uint64(w - 1)).astype(np.int64) & 1
    m = (v & np.uint64((1 << (w - 1)) - 1)).astype(np.int64)
    is_zero = m == 0
    # bit_length via frexp is exact for m < 2**53
    _, e = np.frexp(np.where(is_zero, 1, m).astype(np.float64))
    bl = e.astype(np.int64)
    z = np.where(is_zero, 0, (w - 1) - bl)
    r = bl - 1                              # bits after the leading one
    rest = m - (np.int64(1) << r)
    sub = np.where(r >= 2, rest >> np.maximum(r - 2, 0), rest << np.maximum(2 - r, 0)) & 3
    r2 = np.maximum(r - 2, 0)
    xbits = rest & ((np.int64(1) << r2) - 1)
    x = np.where(r2 <= X_BITS,
                 xbits << np.maximum(X_BITS - r2, 0),
                 xbits >> np.maximum(r2 - X_BITS, 0))
    sub = np.where(is_zero, 0, sub)
    x = np.where(is_zero, 0, x)
    return sign, z, sub, x, is_zero


def decompose(value: int, w: int) -> Decomposition:
    _check_width(w)
    if not 0 <= value < (1 << w):
        raise ValueError(f"{value} is not a {w}-bit word")
    sign, z, sub, x, is_zero = decompose_array(np.array([value]), w)
    return Decomposition(w, int(sign[0]), int(z[0]), int(sub[0]), int(x[0]),
                         bool(is_zero[0]))


# ---------------------------------------------------------------------------
# Coefficient table
# ---------------------------------------------------------------------------

def segment_quantile(w: int, z, sub, x):
    """Lower-tail quantile addressed by ``(z, sub, x)``; ``x`` is real in [0, 1)."""
    r = (w - 2) - np.asarray(z, dtype=float)
    return np.exp2(r - w) * (1.0 + (np.asarray(sub) + np.asarray(x)) / 4.0)


def _largest_exponent(values: np.ndarray, bits: int) -> int:
    lim = (1 << (bits - 1)) - 1
    peak = float(np.max(np.abs(values)))
    if peak == 0.0:
        return 0
    f = int(math.floor(math.log2(lim / peak)))
    # nudge for rounding at the boundary
    while np.max(np.abs(np.round(values * 2.0 ** (f + 1)))) <= lim:
        f += 1
    while np.max(np.abs(np.round(values * 2.0 ** f))) > lim:
        f -= 1
    return f


def _fits(arr: np.ndarray, bits: int) -> bool:
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return bool(np.all((arr >= lo) & (arr <= hi)))


@dataclass(frozen=True)
class CoefficientTable:
    """Quadratic coefficients per (segment, sub-segment).

    ``c0``, ``c1``, ``c2`` have shape ``(w - 1, 4)`` and are indexed by
    ``[z, sub]``.  Column exponents give the fractional bit count of each
    coefficient column.
    """

    width: int
    f0: int
    f1: int
    f2: int
    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    max_fit_error: np.ndarray = field(repr=False)

    @property
    def n_entries(self) -> int:
        return self.c0.size

    def real_coefficients(self):
        return (self.c0 / 2.0 ** self.f0, self.c1 / 2.0 ** self.f1,
                self.c2 / 2.0 ** self.f2)

    def to_bytes(self) -> bytes:
        out = [_HEADER.pack(_TABLE_MAGIC, _TABLE_VERSION, self.width,
                            self.f0, self.f1, self.f2)]
        for a, b, c in zip(self.c0.ravel(), self.c1.ravel(), self.c2.ravel()):
            out.append(_RECORD.pack(int(a), int(b), int(c)))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CoefficientTable":
        magic, version, w, f0, f1, f2 = _HEADER.unpack_from(data, 0)
        if magic != _TABLE_MAGIC or version != _TABLE_VERSION:
            raise ValueError("not a coefficient table file")
        _check_width(w)
        n = 4 * (w - 1)
        if len(data) != _HEADER.size + n * _RECORD.size:
            raise ValueError("coefficient table file has the wrong length")
        recs = [_RECORD.unpack_from(data, _HEADER.size + i * _RECORD.size) for i in range(n)]
        arr = np.array(recs, dtype=np.int64).reshape(w - 1, 4, 3)
        c0, c1, c2 = arr[..., 0], arr[..., 1], arr[..., 2]
        err = _fit_errors(w, f0, f1, f2, c0, c1, c2)
        return cls(w, f0, f1, f2, c0, c1, c2, err)


def _fit_errors(w, f0, f1, f2, c0, c1, c2) -> np.ndarray:
    xs = np.arange(FIT_NODES) / FIT_NODES
    zz, ss = np.meshgrid(np.arange(w - 1), np.arange(4), indexing="ij")
    target = -lower_quantile(segment_quantile(w, zz[..., None], ss[..., None], xs).ravel())
    target = target.reshape(w - 1, 4, FIT_NODES)
    a0 = (c0 / 2.0 ** f0)[..., None]
    a1 = (c1 / 2.0 ** f1)[..., None]
    a2 = (c2 / 2.0 ** f2)[..., None]
    approx = (a2 * xs + a1) * xs + a0
    return np.max(np.abs(approx - target), axis=-1)


@lru_cache(maxsize=None)
def build_table(w: int) -> CoefficientTable:
    """Least-squares quadratic fit of every sub-segment, quantized.

    Each of the ``4 * (w - 1)`` entries is fitted on the 2048-point grid of
    its 11-bit input.  The column exponents are the largest that let every
    entry of the column fit its signed width.
    """
    _check_width(w)
    xs = np.arange(FIT_NODES) / FIT_NODES
    vander = np.vander(xs, 3, increasing=True)
    real = np.empty((w - 1, 4, 3))
    for z in range(w - 1):
        for sub in range(4):
            g = -lower_quantile(segment_quantile(w, z, sub, xs))
            real[z, sub], *_ = np.linalg.lstsq(vander, g, rcond=None)

    f0 = _largest_exponent(real[..., 0], C0_BITS)
    f1 = _largest_exponent(real[..., 1], C1_BITS)
    f2 = _largest_exponent(real[..., 2], C2_BITS)
    c0 = np.round(real[..., 0] * 2.0 ** f0).astype(np.int64)
    c1 = np.round(real[..., 1] * 2.0 ** f1).astype(np.int64)
    c2 = np.round(real[..., 2] * 2.0 ** f2).astype(np.int64)
    for arr, bits, name in ((c0, C0_BITS, "c0"), (c1, C1_BITS, "c1"), (c2, C2_BITS, "c2")):
        if not _fits(arr, bits):
            raise ArithmeticError(f"{name} does not fit {bits} bits; exponent selection failed")
    err = _fit_errors(w, f0, f1, f2, c0, c1, c2)
    for a in (c0, c1, c2, err):
        a.setflags(write=False)
    return CoefficientTable(w, f0, f1, f2, c0, c1, c2, err)


# ---------------------------------------------------------------------------
# Datapath
# ---------------------------------------------------------------------------

def _align(v: np.ndarray, shift: int) -> np.ndarray:
    """Shift right by ``shift`` (truncating toward zero) or left if negative."""
    if shift > 0:
        neg = v < 0
        mag = np.where(neg, -v, v) >> shift
        return np.where(neg, -mag, mag)
    return v << (-shift)


@dataclass
class EvalCounters:
    saturated_high: int = 0
    clamped_low: int = 0


def evaluate_array(table: CoefficientTable, sign, z, sub, x, is_zero,
                   counters: EvalCounters | None = None):
    """Bit-exact datapath over arrays; returns ``(sign, magnitude)``."""
    X = np.asarray(x, dtype=np.int64)
    zi = np.asarray(z, dtype=np.int64)
    si = np.asarray(sub, dtype=np.int64)
    C2 = table.c2[zi, si]
    C1 = table.c1[zi, si]
    C0 = table.c0[zi, si]
    s1 = _align(C2 * X, table.f2 + X_BITS - table.f1) + C1
    s2 = _align(s1 * X, table.f1 + X_BITS - table.f0) + C0
    out = _align(s2, table.f0 - OUT_FRAC)
    zero = np.asarray(is_zero, dtype=bool)
    high = (out > OUT_MAX) & ~zero
    low = (out < 0) & ~zero
    if counters is not None:
        counters.saturated_high += int(high.sum())
        counters.clamped_low += int(low.sum())
    mag = np.clip(out, 0, OUT_MAX)
    mag = np.where(zero, 0, mag)
    return np.asarray(sign, dtype=np.int64), mag


@dataclass(frozen=True)
class GrnWord:
    """14-bit sign-magnitude Gaussian sample; magnitude in Q3.10."""

    sign: int
    magnitude: int

    def __post_init__(self):
        if self.sign not in (0, 1) or not 0 <= self.magnitude <= OUT_MAX:
            raise ValueError("invalid GRN word")

    @property
    def value(self) -> float:
        v = self.magnitude / (1 << OUT_FRAC)
        return -v if self.sign else v

    @property
    def code(self) -> int:
        """Two's complement 14-bit code, sign-extended to a Python int."""
        return -self.magnitude if self.sign else self.magnitude


def evaluate(table: CoefficientTable, d: Decomposition) -> GrnWord:
    if table.width != d.width:
        raise ValueError("table width does not match decomposition width")
    s, mag = evaluate_array(table, [d.sign], [d.z], [d.sub], [d.x], [d.is_zero])
    return GrnWord(int(s[0]), int(mag[0]))


def urn_to_grn(value: int, w: int, table: CoefficientTable | None = None) -> GrnWord:
    table = table or build_table(w)
    return evaluate(table, decompose(value, w))


def convert(values, w: int, table: CoefficientTable | None = None,
            counters: EvalCounters | None = None):
    """Map an array of ``w``-bit words to ``(sign, magnitude)`` arrays."""
    table = table or build_table(w)
    if table.width != w:
        raise ValueError("table width does not match URN width")
    sign, z, sub, x, is_zero = decompose_array(values, w)
    return evaluate_array(table, sign, z, sub, x, is_zero, counters)


def to_codes(sign, magnitude) -> np.ndarray:
    """Signed integer codes (``-magnitude`` for negative samples)."""
    mag = np.asarray(magnitude, dtype=np.int64)
    return np.where(np.asarray(sign) == 1, -mag, mag)


def to_real(sign, magnitude) -> np.ndarray:
    return to_codes(sign, magnitude) / float(1 << OUT_FRAC)


def ideal_magnitude(values, w: int) -> np.ndarray:
    """Reference magnitude ``-Phi^-1(m / 2**w)`` (0 for ``m == 0``)."""
    v = np.asarray(values, dtype=np.uint64)
    m = (v & np.uint64((1 << (w - 1)) - 1)).astype(np.float64)
    out = np.zeros(m.shape)
    nz = m > 0
    out[nz] = -lower_quantile(np.ldexp(m[nz], -w))
    return out
