"""Bit-true complex fixed-point arithmetic.

Mantissas are plain Python/numpy integers; a value is ``mantissa * 2**-frac_bits``.
Every conversion into a stored format rounds to nearest-even and saturates.
Exact intermediates (full-precision products and sums) are carried as
:class:`Wide` values that have a fractional position but no width limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class DegenerateNorm(ArithmeticError):
    """Inverse square root of zero was requested."""


@dataclass(frozen=True)
class FixedFormat:
    """Signed two's-complement format with ``total_bits`` and ``frac_bits``."""

    total_bits: int
    frac_bits: int

    def __post_init__(self):
        if not 4 <= self.total_bits <= 48:
            raise ValueError(f"total_bits out of range: {self.total_bits}")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError(f"frac_bits out of range: {self.frac_bits}")

    @property
    def max_mant(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def min_mant(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def step(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def max_value(self) -> float:
        return self.max_mant * self.step

    @property
    def min_value(self) -> float:
        return self.min_mant * self.step

    def __str__(self):
        return f"Q({self.total_bits},{self.frac_bits})"

    @classmethod
    def parse(cls, text: str) -> "FixedFormat":
        """Parse ``"Q(14,11)"`` or ``"14,11"``."""
        body = text.strip()
        if body.upper().startswith("Q"):
            body = body[1:].strip()
        body = body.strip("()")
        total, frac = (int(p) for p in body.split(","))
        return cls(total, frac)


def Q(total_bits: int, frac_bits: int) -> FixedFormat:
    return FixedFormat(total_bits, frac_bits)


@dataclass
class FxStats:
    """Mutable saturation-event counter threaded through fixed-point ops."""

    saturations: int = 0

    def add(self, n: int) -> None:
        self.saturations += int(n)


# ---------------------------------------------------------------------------
# integer rounding / saturation primitives


def _is_obj(a) -> bool:
    return isinstance(a, np.ndarray) and a.dtype == object


def rne_div(v, d: int):
    """Round ``v / d`` to nearest, ties to even. ``d`` is a positive int."""
    if d == 1:
        return v
    if isinstance(v, (int, np.integer)):
        q, r = divmod(int(v), d)
        twice = 2 * r
        if twice > d or (twice == d and q & 1):
            q += 1
        return q
    q = v // d
    r = v - q * d
    twice = 2 * r
    up = (twice > d) | ((twice == d) & (q % 2 == 1))
    return q + up.astype(q.dtype) if not _is_obj(q) else q + up.astype(int).astype(object)


def rne_shift(v, shift: int):
    """Scale by ``2**-shift`` with round-half-even (left shift if negative)."""
    if shift <= 0:
        return v * (1 << -shift)
    return rne_div(v, 1 << shift)


def saturate(v, fmt: FixedFormat, stats: FxStats | None = None):
    """Clamp mantissa(s) into ``fmt``; counts clamped entries in ``stats``."""
    lo, hi = fmt.min_mant, fmt.max_mant
    if isinstance(v, (int, np.integer)):
        v = int(v)
        if v > hi or v < lo:
            if stats is not None:
                stats.add(1)
            return hi if v > hi else lo
        return v
    over = (v > hi) | (v < lo)
    n = int(np.count_nonzero(over))
    if n:
        if stats is not None:
            stats.add(n)
        v = np.where(v > hi, hi, np.where(v < lo, lo, v))
    if _is_obj(v):
        v = v.astype(np.int64)
    return v


def quantize(x, fmt: FixedFormat, stats: FxStats | None = None):
    """Real value(s) to mantissa(s) of ``fmt`` (round-half-even, saturating)."""
    scaled = np.ldexp(np.asarray(x, dtype=np.float64), fmt.frac_bits)
    # clip before the integer cast so huge inputs cannot wrap
    lim = float(1 << 62)
    m = np.rint(np.clip(scaled, -lim, lim)).astype(np.int64)
    out = saturate(m, fmt, stats)
    if np.ndim(x) == 0:
        return int(out)
    return out


def to_real(mant, fmt_or_frac) -> np.ndarray | float:
    frac = fmt_or_frac.frac_bits if isinstance(fmt_or_frac, FixedFormat) else fmt_or_frac
    if isinstance(mant, (int, np.integer)):
        return float(np.ldexp(float(mant), -frac))
    return np.ldexp(np.asarray(mant, dtype=np.float64), -frac)


# ---------------------------------------------------------------------------
# scalar complex fixed-point


@dataclass(frozen=True)
class CFx:
    """Complex fixed-point scalar."""

    re: int
    im: int
    fmt: FixedFormat

    def __post_init__(self):
        for m in (self.re, self.im):
            if not self.fmt.min_mant <= m <= self.fmt.max_mant:
                raise ValueError(f"mantissa {m} outside {self.fmt}")

    @classmethod
    def from_complex(cls, z: complex, fmt: FixedFormat, stats: FxStats | None = None) -> "CFx":
        z = complex(z)
        return cls(quantize(z.real, fmt, stats), quantize(z.imag, fmt, stats), fmt)

    @property
    def value(self) -> complex:
        return complex(to_real(self.re, self.fmt), to_real(self.im, self.fmt))


def cmac(acc: CFx, a: CFx, b: CFx, stats: FxStats | None = None) -> CFx:
    """``acc + a*b``: exact product, aligned to the accumulator, saturated."""
    pf = a.fmt.frac_bits + b.fmt.frac_bits
    pre = a.re * b.re - a.im * b.im
    pim = a.re * b.im + a.im * b.re
    shift = pf - acc.fmt.frac_bits
    pre, pim = rne_shift(pre, shift), rne_shift(pim, shift)
    return CFx(
        saturate(acc.re + pre, acc.fmt, stats),
        saturate(acc.im + pim, acc.fmt, stats),
        acc.fmt,
    )


def requantize_scalar(re: int, im: int, frac: int, fmt: FixedFormat,
                      stats: FxStats | None = None) -> CFx:
    s = frac - fmt.frac_bits
    return CFx(saturate(rne_shift(int(re), s), fmt, stats),
               saturate(rne_shift(int(im), s), fmt, stats), fmt)


# ---------------------------------------------------------------------------
# matrices


@dataclass(frozen=True)
class Wide:
    """Exact complex intermediate: ``(re + i*im) * 2**-frac`` with no width limit."""

    re: np.ndarray
    im: np.ndarray
    frac: int

    @property
    def shape(self):
        return self.re.shape

    def value(self) -> np.ndarray:
        return to_real(self.re, self.frac) + 1j * to_real(self.im, self.frac)

    def align(self, frac: int) -> "Wide":
        """Re-express at a finer fractional position (exact)."""
        if frac < self.frac:
            raise ValueError("align() only moves to a finer grid")
        k = 1 << (frac - self.frac)
        return Wide(self.re * k, self.im * k, frac)

    def __add__(self, other: "Wide") -> "Wide":
        f = max(self.frac, other.frac)
        a, b = self.align(f), other.align(f)
        return Wide(a.re + b.re, a.im + b.im, f)

    def __sub__(self, other: "Wide") -> "Wide":
        f = max(self.frac, other.frac)
        a, b = self.align(f), other.align(f)
        return Wide(a.re - b.re, a.im - b.im, f)


@dataclass(frozen=True)
class FxMatrix:
    """Complex fixed-point matrix (or vector) stored as two mantissa arrays."""

    re: np.ndarray
    im: np.ndarray
    fmt: FixedFormat

    @classmethod
    def from_complex(cls, z, fmt: FixedFormat, stats: FxStats | None = None) -> "FxMatrix":
        z = np.asarray(z, dtype=np.complex128)
        return cls(quantize(z.real, fmt, stats), quantize(z.imag, fmt, stats), fmt)

    @classmethod
    def zeros(cls, shape, fmt: FixedFormat) -> "FxMatrix":
        return cls(np.zeros(shape, np.int64), np.zeros(shape, np.int64), fmt)

    @property
    def shape(self):
        return self.re.shape

    def value(self) -> np.ndarray:
        return to_real(self.re, self.fmt) + 1j * to_real(self.im, self.fmt)

    def wide(self) -> Wide:
        return Wide(self.re, self.im, self.fmt.frac_bits)

    def conj(self) -> "FxMatrix":
        return FxMatrix(self.re, -self.im, self.fmt)

    def __getitem__(self, idx) -> "FxMatrix":
        return FxMatrix(self.re[idx], self.im[idx], self.fmt)

    def equals(self, other: "FxMatrix") -> bool:
        return (self.fmt == other.fmt and np.array_equal(self.re, other.re)
                and np.array_equal(self.im, other.im))


def requantize(w: Wide, fmt: FixedFormat, stats: FxStats | None = None) -> FxMatrix:
    """Round an exact intermediate into ``fmt`` (RNE, then saturate)."""
    s = w.frac - fmt.frac_bits
    re = saturate(rne_shift(w.re, s), fmt, stats)
    im = saturate(rne_shift(w.im, s), fmt, stats)
    return FxMatrix(np.asarray(re, np.int64), np.asarray(im, np.int64), fmt)


def _bitlen(a: np.ndarray) -> int:
    if a.size == 0:
        return 0
    m = int(np.max(np.abs(a.astype(object) if a.dtype != object else a)))
    return m.bit_length()


def _safe_pair(a: np.ndarray, b: np.ndarray, inner: int):
    """Promote to Python ints if an int64 product sum could overflow."""
    need = _bitlen(a) + _bitlen(b) + max(inner, 1).bit_length() + 2
    if need > 62:
        return a.astype(object), b.astype(object)
    return a, b


def exact_matmul(a_re, a_im, b_re, b_im):
    """Exact complex integer matrix product; returns (re, im)."""
    inner = a_re.shape[-1] if a_re.ndim else 1
    ar, br = _safe_pair(np.concatenate([a_re.ravel(), a_im.ravel()]),
                        np.concatenate([b_re.ravel(), b_im.ravel()]), inner)
    if ar.dtype == object or br.dtype == object:
        a_re, a_im = a_re.astype(object), a_im.astype(object)
        b_re, b_im = b_re.astype(object), b_im.astype(object)
    re = a_re @ b_re - a_im @ b_im
    im = a_re @ b_im + a_im @ b_re
    return re, im


def mm_exact(a: FxMatrix | Wide, b: FxMatrix | Wide, herm_a: bool = False) -> Wide:
    """Exact ``a @ b`` (or ``a^H @ b``) with the fractional positions summed."""
    af = a.fmt.frac_bits if isinstance(a, FxMatrix) else a.frac
    bf = b.fmt.frac_bits if isinstance(b, FxMatrix) else b.frac
    a_re, a_im = a.re, a.im
    if herm_a:
        a_re, a_im = a_re.T, -a_im.T
    if a_re.shape[-1] != b.re.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a_re.shape} @ {b.re.shape}")
    re, im = exact_matmul(a_re, a_im, b.re, b.im)
    return Wide(re, im, af + bf)


def matmul_ref(a, b, out_fmt: FixedFormat | None = None, stats: FxStats | None = None):
    """Reference complex matrix product.

    Float arrays give ``a @ b``. For :class:`FxMatrix` operands, products are
    exact, the sum is exact, and one final round/saturate maps into
    ``out_fmt`` (default: the product format ``Q(ta+tb, fa+fb)``).
    """
    if isinstance(a, FxMatrix) != isinstance(b, FxMatrix):
        raise TypeError("operands must share a numeric mode")
    if not isinstance(a, FxMatrix):
        a, b = np.asarray(a), np.asarray(b)
        if a.shape[-1] != b.shape[0]:
            raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
        return a @ b
    if out_fmt is None:
        out_fmt = FixedFormat(min(48, a.fmt.total_bits + b.fmt.total_bits),
                              a.fmt.frac_bits + b.fmt.frac_bits)
    return requantize(mm_exact(a, b), out_fmt, stats)


# ---------------------------------------------------------------------------
# inverse square root


@dataclass(frozen=True)
class InvSqrtLut:
    """Piecewise-linear 1/sqrt on a normalised mantissa in [1, 4).

    Two binary-indexed halves ([1,2) and [2,4)), ``entries // 2`` segments
    each. Table values are stored with ``frac_bits`` fractional bits.
    """

    entries: int = 256
    frac_bits: int = 20
    table: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        half = self.entries // 2
        if half & (half - 1) or half < 2:
            raise ValueError("entries must be twice a power of two")
        # half+1 knots per half so the last segment interpolates to the edge
        knots = []
        for lo in (1.0, 2.0):
            m = lo + lo * np.arange(half + 1) / half
            knots.append(tuple(int(v) for v in np.rint(np.ldexp(1.0 / np.sqrt(m), self.frac_bits))))
        object.__setattr__(self, "table", tuple(knots))

    @property
    def index_bits(self) -> int:
        return (self.entries // 2).bit_length() - 1


DEFAULT_LUT = InvSqrtLut()
# relative error bound promised by inv_sqrt_lut
TOL_LUT = 2.0 ** -10


def inv_sqrt_parts(mant: int, frac_bits: int, lut: InvSqrtLut = DEFAULT_LUT):
    """Range-reduced 1/sqrt of ``mant * 2**-frac_bits``.

    Returns ``(y, e)`` with ``1/sqrt(x) ~= y * 2**-lut.frac_bits * 2**-e``.
    Reduction by powers of four is exact; ``y`` comes from the table with
    linear interpolation.
    """
    mant = int(mant)
    if mant <= 0:
        raise DegenerateNorm("inverse square root of a non-positive value")
    n = mant.bit_length() - 1
    p = n - frac_bits  # x in [2^p, 2^(p+1))
    odd = p & 1
    e = (p - odd) // 2  # x = m * 4^e, m in [1, 4)
    # mantissa bits below the leading one, as a W-bit fraction in [0,1)
    W = 40
    r = mant - (1 << n)
    r = r << (W - n) if n <= W else rne_shift(r, n - W)
    if r >> W:  # rounding carried into the next binade
        r = 0
        odd ^= 1
        if odd == 0:
            e += 1
    k = lut.index_bits
    idx = r >> (W - k)
    t = r - (idx << (W - k))
    row = lut.table[odd]
    y0, y1 = row[idx], row[idx + 1]
    y = y0 + rne_shift((y1 - y0) * t, W - k)
    return y, e


def inv_sqrt_lut(mant: int, fmt: FixedFormat, out_fmt: FixedFormat,
                 lut: InvSqrtLut = DEFAULT_LUT, stats: FxStats | None = None) -> int:
    """1/sqrt of a positive fixed-point value, returned as a mantissa of ``out_fmt``."""
    y, e = inv_sqrt_parts(mant, fmt.frac_bits, lut)
    return saturate(rne_shift(y, lut.frac_bits + e - out_fmt.frac_bits), out_fmt, stats)
