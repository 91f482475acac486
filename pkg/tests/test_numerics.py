"""Fixed-point primitives, reference matmul and the LUT inverse square root."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sandman_sim.numerics import (
    CFx,
    DegenerateNorm,
    DimensionError,
    FixedFormat,
    FxMatrix,
    FxStats,
    Q,
    DEFAULT_LUT,
    TOL_LUT,
    InvSqrtLut,
    cmac,
    inv_sqrt_lut,
    inv_sqrt_parts,
    matmul_ref,
    quantize,
    requantize_scalar,
    rne_div,
    rne_shift,
    to_real,
)

OUT = Q(40, 30)


def lut_value(x: float, fmt=Q(48, 36)) -> float:
    return to_real(inv_sqrt_lut(quantize(x, fmt), fmt, OUT), OUT)


class TestFixedFormat:
    def test_range_and_step(self):
        f = Q(4, 2)
        assert f.max_value == 1.75 and f.min_value == -2.0 and f.step == 0.25

    @pytest.mark.parametrize("bits,frac", [(3, 0), (49, 2), (8, 8), (8, -1)])
    def test_rejects_invalid(self, bits, frac):
        with pytest.raises(ValueError):
            FixedFormat(bits, frac)

    def test_parse_roundtrip(self):
        assert FixedFormat.parse(str(Q(24, 18))) == Q(24, 18)
        assert FixedFormat.parse("14,11") == Q(14, 11)


class TestQuantize:
    def test_representable(self):
        assert quantize(0.5, Q(12, 10)) == 512

    def test_positive_saturation(self):
        stats = FxStats()
        assert to_real(quantize(3.0, Q(4, 2), stats), Q(4, 2)) == 1.75
        assert stats.saturations == 1

    def test_min_representable(self):
        stats = FxStats()
        assert to_real(quantize(-2.0, Q(4, 2), stats), Q(4, 2)) == -2.0
        assert stats.saturations == 0

    def test_ties_to_even(self):
        f = Q(8, 0)
        assert [quantize(v, f) for v in (0.5, 1.5, 2.5, -0.5, -1.5)] == [0, 2, 2, 0, -2]

    @given(st.floats(-1e6, 1e6), st.integers(4, 48), st.data())
    def test_idempotent_and_bounded(self, x, bits, data):
        frac = data.draw(st.integers(0, bits - 1))
        f = Q(bits, frac)
        m = quantize(x, f)
        assert f.min_mant <= m <= f.max_mant
        assert quantize(to_real(m, f), f) == m

    def test_huge_input_never_wraps(self):
        f = Q(16, 4)
        assert quantize(1e300, f) == f.max_mant
        assert quantize(-1e300, f) == f.min_mant


class TestRounding:
    @given(st.integers(-10**12, 10**12), st.integers(1, 10**6))
    def test_rne_div_matches_fraction_oracle(self, v, d):
        from fractions import Fraction
        assert rne_div(v, d) == round(Fraction(v, d))  # Python rounds half to even

    def test_rne_div_object_arrays(self):
        v = np.array([2**70 + 1, -(2**70) - 3, 5], dtype=object)
        out = rne_div(v, 2)
        assert list(out) == [2**69, -(2**69) - 2, 2]

    def test_rne_shift_negative_is_left_shift(self):
        assert rne_shift(3, -2) == 12


class TestCmac:
    F = Q(16, 8)

    def c(self, z):
        return CFx.from_complex(z, self.F)

    def test_identity_product(self):
        assert cmac(self.c(0), self.c(1), self.c(1)).value == 1 + 0j

    def test_i_squared(self):
        assert cmac(self.c(0), self.c(1j), self.c(1j)).value == -1 + 0j

    def test_accumulates(self):
        assert cmac(self.c(2), self.c(1 + 1j), self.c(1 - 1j)).value == 4 + 0j

    def test_saturates_instead_of_wrapping(self):
        stats = FxStats()
        acc = CFx(self.F.max_mant, 0, self.F)
        out = cmac(acc, self.c(1), self.c(1), stats)
        assert out.re == self.F.max_mant and stats.saturations == 1


def _rand_fx(rng, shape, fmt):
    lim = fmt.max_mant
    return FxMatrix(rng.integers(-lim, lim, shape), rng.integers(-lim, lim, shape), fmt)


def cmac_loop_matmul(A: FxMatrix, B: FxMatrix, out: FixedFormat) -> FxMatrix:
    """Straight-line triple loop on CFx scalars with a wide accumulator."""
    acc_fmt = Q(48, A.fmt.frac_bits + B.fmt.frac_bits)
    n, k = A.shape
    m = B.shape[1]
    re = np.zeros((n, m), np.int64)
    im = np.zeros((n, m), np.int64)
    for i in range(n):
        for j in range(m):
            acc = CFx(0, 0, acc_fmt)
            for t in range(k):
                a = CFx(int(A.re[i, t]), int(A.im[i, t]), A.fmt)
                b = CFx(int(B.re[t, j]), int(B.im[t, j]), B.fmt)
                acc = cmac(acc, a, b)
            r = requantize_scalar(acc.re, acc.im, acc_fmt.frac_bits, out)
            re[i, j], im[i, j] = r.re, r.im
    return FxMatrix(re, im, out)


class TestMatmulRef:
    def test_identity_float(self):
        A = np.random.default_rng(0).standard_normal((5, 3)) + 1j
        assert np.array_equal(matmul_ref(A, np.eye(3)), A)

    def test_identity_fixed(self):
        rng = np.random.default_rng(1)
        f = Q(14, 11)
        A = _rand_fx(rng, (8, 8), f)
        eye = FxMatrix.from_complex(np.eye(8), f)
        assert matmul_ref(A, eye, f).equals(A)

    def test_scalar_product(self):
        assert matmul_ref(np.array([[2 + 1j]]), np.array([[3 - 1j]]))[0, 0] == 7 + 1j

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            matmul_ref(np.ones((2, 3)), np.ones((2, 3)))
        f = Q(8, 4)
        with pytest.raises(DimensionError):
            matmul_ref(FxMatrix.zeros((2, 3), f), FxMatrix.zeros((2, 3), f))

    @pytest.mark.parametrize("out", [None, Q(14, 11), Q(20, 8)])
    def test_matches_cmac_loop_oracle(self, out):
        rng = np.random.default_rng(2)
        f = Q(14, 11)
        for _ in range(5):
            A, B = _rand_fx(rng, (8, 8), f), _rand_fx(rng, (8, 8), f)
            o = out or Q(28, 22)
            assert matmul_ref(A, B, out).equals(cmac_loop_matmul(A, B, o))

    def test_saturation_never_wraps(self):
        f = Q(8, 0)
        A = FxMatrix(np.full((2, 4), 127), np.zeros((2, 4), np.int64), f)
        stats = FxStats()
        C = matmul_ref(A, FxMatrix(np.full((4, 2), 127), np.zeros((4, 2), np.int64), f), f, stats)
        assert np.all(C.re == 127) and stats.saturations == 4

    def test_wide_operands_use_exact_integers(self):
        f = Q(48, 20)
        A = FxMatrix(np.full((1, 4), f.max_mant), np.zeros((1, 4), np.int64), f)
        w = matmul_ref(A, FxMatrix(np.full((4, 1), f.max_mant), np.zeros((4, 1), np.int64), f),
                       Q(48, 0))
        assert w.re[0, 0] == Q(48, 0).max_mant  # saturated, not wrapped


class TestInvSqrt:
    @pytest.mark.parametrize("x,ref", [(1.0, 1.0), (4.0, 0.5), (2.0, 0.70710678)])
    def test_examples(self, x, ref):
        assert abs(lut_value(x) - ref) <= TOL_LUT * ref

    def test_zero_is_degenerate(self):
        with pytest.raises(DegenerateNorm):
            inv_sqrt_lut(0, Q(48, 36), OUT)

    def test_dense_sweep_relative_error(self):
        fmt = Q(48, 36)
        xs = np.geomspace(2.0 ** -30, 2.0 ** 10, 100_000)
        worst = 0.0
        for x in xs:
            m = quantize(x, fmt)
            xq = to_real(m, fmt)
            y, e = inv_sqrt_parts(m, fmt.frac_bits)
            y = math.ldexp(y, -DEFAULT_LUT.frac_bits - e)
            worst = max(worst, abs(y * math.sqrt(xq) - 1.0))
        assert worst <= TOL_LUT

    def test_table_shape(self):
        lut = InvSqrtLut()
        assert len(lut.table) == 2 and all(len(h) == 129 for h in lut.table)
        with pytest.raises(ValueError):
            InvSqrtLut(entries=100)
