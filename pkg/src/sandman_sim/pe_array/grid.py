"""PE grid state and the array kernels (Cannon, broadcasts, adder trees).

Slices are ``n x n`` PE blocks stacked along the antenna dimension; all
slices work in parallel, block columns are processed in increasing order.
Complex integers travel as ``(re, im)`` array pairs. Every kernel sums exact
products, so any result equals the reference kernels bit for bit once the
shared rounding step is applied.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from ..numerics import DimensionError, FixedFormat, FxMatrix, FxStats, requantize, Wide
from .program import DEFAULT_TIMING, MODES, ArrayTiming


def _bits(*arrays) -> int:
    m = 0
    for a in arrays:
        if a.size:
            m = max(m, int(np.max(np.abs(a.astype(object)))).bit_length())
    return m


def _promote(a_re, a_im, b_re, b_im, terms: int):
    """Pick int64 when the exact sum of ``terms`` products fits, else Python ints."""
    need = _bits(a_re, a_im) + _bits(b_re, b_im) + 2 + max(1, int(terms)).bit_length()
    if need <= 62:
        cast = lambda x: x.astype(np.int64)  # noqa: E731
    else:
        cast = lambda x: x.astype(object)  # noqa: E731
    return cast(a_re), cast(a_im), cast(b_re), cast(b_im)


def _cmul(a_re, a_im, b_re, b_im, conj_a: bool = False):
    if conj_a:
        return a_re * b_re + a_im * b_im, a_re * b_im - a_im * b_re
    return a_re * b_re - a_im * b_im, a_re * b_im + a_im * b_re


def skew_rows(x: np.ndarray) -> np.ndarray:
    """Row i rotated left by i: ``out[.., i, q] = x[.., i, (i+q) % n]``."""
    n = x.shape[-1]
    idx = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
    return np.take_along_axis(x, np.broadcast_to(idx, x.shape), axis=-1)


def skew_cols(x: np.ndarray) -> np.ndarray:
    """Column q rotated up by q: ``out[.., p, q] = x[.., (p+q) % n, q]``."""
    n = x.shape[-2]
    idx = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
    return np.take_along_axis(x, np.broadcast_to(idx, x.shape), axis=-2)


def unskew_cols(x: np.ndarray) -> np.ndarray:
    n = x.shape[-2]
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return np.take_along_axis(x, np.broadcast_to(idx, x.shape), axis=-2)


def tree_sum(x: np.ndarray, axis: int) -> tuple[np.ndarray, int]:
    """Pairwise adder tree along ``axis``; returns (sum, levels)."""
    x = np.moveaxis(x, axis, 0)
    levels = 0
    while x.shape[0] > 1:
        if x.shape[0] % 2:
            x = np.concatenate([x, np.zeros_like(x[:1])])
        x = x[0::2] + x[1::2]
        levels += 1
    return x[0], levels


class PEGrid:
    """Registers, mode flags and cycle counters of the ``B x n`` PE grid.

    ``a_re/a_im`` is the operand register that rotates in Cannon steps (the
    channel matrix, stored row-skewed); ``a_row`` records the source row of
    every entry so tests can check that no transposed copy ever exists.
    ``acc`` is the MAC accumulator, ``ff_c``/``ff_s`` the local FF arrays.
    """

    def __init__(self, B: int, timing: ArrayTiming = DEFAULT_TIMING):
        n = timing.slice_dim
        if B % n:
            raise DimensionError(f"B={B} is not a multiple of the slice size {n}")
        self.n, self.ns, self.timing = n, B // n, timing
        shape = (self.ns, n, n)
        self.mode = np.full(shape, MODES.index("idle"), dtype=np.int8)
        self.a_re = np.zeros(shape, np.int64)
        self.a_im = np.zeros(shape, np.int64)
        self.a_row = np.broadcast_to(np.arange(B).reshape(self.ns, n, 1), shape).copy()
        self.a_col = np.zeros(shape, np.int64)
        self.acc = (np.zeros(shape, np.int64), np.zeros(shape, np.int64))
        self.ff_c = None
        self.ff_s = None
        self.tag = "idle"
        self.cycles = Counter()
        self.calls = Counter()
        self.busy = 0
        self.cannon_steps = 0
        self.cannon_busy = 0
        self.a_loaded = False

    @property
    def n_pe(self) -> int:
        return self.ns * self.n * self.n

    @property
    def total_cycles(self) -> int:
        return sum(self.cycles.values())

    # -- bookkeeping --------------------------------------------------------

    def begin(self, tag: str, mode: str = "mac", configure: bool = True) -> None:
        self.tag = tag
        self.calls[tag] += 1
        self.mode[...] = MODES.index(mode)
        self.cycles[tag] += 0
        if configure:
            self.tick(self.timing.config_cycles)

    def set_mode(self, mode: str, where=...) -> None:
        self.mode[where] = MODES.index(mode)

    def tick(self, n: int, active: int = 0) -> None:
        self.cycles[self.tag] += n
        self.busy += n * active

    def _rotate_a(self) -> None:
        for a in (self.a_re, self.a_im, self.a_row, self.a_col):
            a[...] = np.roll(a, -1, axis=-1)

    # -- operand register ---------------------------------------------------

    def load_a(self, re: np.ndarray, im: np.ndarray, skew: bool = True) -> None:
        """Place a ``B x n`` matrix in the operand registers (row-skewed)."""
        n = self.n
        if re.shape != (self.ns * n, n):
            raise DimensionError(f"operand register holds {(self.ns * n, n)}, got {re.shape}")
        cols = np.broadcast_to(np.arange(n), (self.ns, n, n))
        self.a_re[...] = re.reshape(self.ns, n, n)
        self.a_im[...] = im.reshape(self.ns, n, n)
        self.a_col[...] = cols
        self.a_row[...] = np.broadcast_to(np.arange(self.ns * n).reshape(self.ns, n, 1),
                                          self.a_row.shape)
        if skew:
            for a in (self.a_re, self.a_im, self.a_col):
                a[...] = skew_rows(a)
            self.tick(n - 1)
        self.a_loaded = True

    def a_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Unskewed contents of the operand register (test helper)."""
        inv = np.argsort(self.a_col, axis=-1)
        re = np.take_along_axis(self.a_re, inv, axis=-1).reshape(-1, self.n)
        im = np.take_along_axis(self.a_im, inv, axis=-1).reshape(-1, self.n)
        return re, im

    # -- Cannon kernels -----------------------------------------------------

    def cannon_forward(self, b_re, b_im, a_re=None, a_im=None):
        """Output-stationary ``A @ B`` per block.

        ``b``: ``(nb, n, n)`` blocks, shared by all slices (column-wise slice
        links), already column-skewed by FF addressing. ``a`` defaults to the
        operand register; an explicit ``(ns, nb, n, n)`` operand is row-skewed
        here. Returns exact ``(ns, nb, n, n)`` products.
        """
        n = self.n
        nb = b_re.shape[0]
        own = a_re is None
        if own:
            a_re, a_im = self.a_re[:, None], self.a_im[:, None]
        else:
            a_re, a_im = skew_rows(a_re), skew_rows(a_im)
        b_re, b_im = skew_cols(b_re)[None], skew_cols(b_im)[None]
        a_re, a_im, b_re, b_im = _promote(a_re, a_im, b_re, b_im, n)
        c_re = np.zeros((self.ns, nb, n, n), a_re.dtype)
        c_im = np.zeros_like(c_re)
        for _ in range(n):
            pr, pi = _cmul(a_re, a_im, b_re, b_im)
            c_re, c_im = c_re + pr, c_im + pi
            a_re, a_im = np.roll(a_re, -1, axis=-1), np.roll(a_im, -1, axis=-1)
            b_re, b_im = np.roll(b_re, -1, axis=-2), np.roll(b_im, -1, axis=-2)
            if own:
                # every block sees the same n rotations, which restore the register
                self._rotate_a()
        self._charge_cannon(n * nb)
        return c_re, c_im

    def cannon_hermitian(self, b_re, b_im):
        """``A^H @ B`` per slice and block with A in the operand register.

        ``b``: ``(ns, nb, n, n)`` stays in place; A rotates left while partial
        sums move up, so A is never transposed. Returns exact per-slice
        ``(ns, nb, n, n)`` results (already deskewed by output addressing).
        """
        n = self.n
        nb = b_re.shape[1]
        a_re, a_im, b_re, b_im = _promote(self.a_re, self.a_im, b_re, b_im, n)
        c_re = np.zeros((self.ns, nb, n, n), a_re.dtype)
        c_im = np.zeros_like(c_re)
        for _ in range(n):
            pr, pi = _cmul(a_re[:, None], a_im[:, None], b_re, b_im, conj_a=True)
            c_re = np.roll(c_re + pr, -1, axis=-2)
            c_im = np.roll(c_im + pi, -1, axis=-2)
            a_re, a_im = np.roll(a_re, -1, axis=-1), np.roll(a_im, -1, axis=-1)
            self._rotate_a()
        self._charge_cannon(n * nb)
        return unskew_cols(c_re), unskew_cols(c_im)

    def _charge_cannon(self, steps: int) -> None:
        self.tick(steps, self.n_pe)
        self.cannon_steps += steps
        self.cannon_busy += steps * self.n_pe

    def hermitian_mv_register(self, v_re, v_im):
        """``A^H v`` for a length-B vector ``v`` broadcast along the rows.

        Same rotate-and-shift pattern as :meth:`cannon_hermitian` with a
        single output column. Returns exact per-slice ``(ns, n)`` sums.
        """
        n = self.n
        v_re = np.broadcast_to(v_re.reshape(self.ns, n, 1), (self.ns, n, n))
        v_im = np.broadcast_to(v_im.reshape(self.ns, n, 1), (self.ns, n, n))
        a_re, a_im, v_re, v_im = _promote(self.a_re, self.a_im, v_re, v_im, n)
        c_re = np.zeros((self.ns, n, n), a_re.dtype)
        c_im = np.zeros_like(c_re)
        for _ in range(n):
            pr, pi = _cmul(a_re, a_im, v_re, v_im, conj_a=True)
            c_re = np.roll(c_re + pr, -1, axis=-2)
            c_im = np.roll(c_im + pi, -1, axis=-2)
            a_re, a_im = np.roll(a_re, -1, axis=-1), np.roll(a_im, -1, axis=-1)
            self._rotate_a()
        self._charge_cannon(n)
        # column 0 holds the full result for output row p at PE row p
        return c_re[:, :, 0], c_im[:, :, 0]

    # -- broadcast matrix-vector kernels on the C arrays -------------------

    def store_c(self, M: FxMatrix) -> None:
        """Model ``M`` (B x K) as resident in the C arrays: PE (s,i,q) slot m
        holds ``M[n s + i, n m + q]``."""
        self.ff_c = self.blocked(M.re), self.blocked(M.im), M.fmt

    def blocked(self, x: np.ndarray) -> np.ndarray:
        n = self.n
        B, K = x.shape
        if B != self.ns * n or K % n:
            raise DimensionError(f"matrix {x.shape} does not tile the grid")
        return x.reshape(self.ns, n, K // n, n).transpose(0, 1, 3, 2)

    def mv_forward(self, v_re, v_im):
        """``M v`` with ``v`` entries broadcast down columns and row adders.

        Returns exact (B,) sums.
        """
        m_re, m_im, _ = self.ff_c
        n, nb = self.n, m_re.shape[-1]
        vb_re = v_re.reshape(nb, n).T  # [q, m]
        vb_im = v_im.reshape(nb, n).T
        m_re, m_im, vb_re, vb_im = _promote(m_re, m_im, vb_re, vb_im, n * nb)
        pr, pi = _cmul(m_re, m_im, vb_re, vb_im)
        self.tick(nb, self.n_pe)
        acc_re, acc_im = pr.sum(axis=-1), pi.sum(axis=-1)  # local MAC over slots
        self.set_mode("row_adder", (slice(None), slice(None), 0))
        out_re, lv = tree_sum(acc_re, axis=-1)
        out_im, _ = tree_sum(acc_im, axis=-1)
        self._charge_tree(lv, self.ns * n)
        return out_re.reshape(-1), out_im.reshape(-1)

    def mv_hermitian(self, v_re, v_im):
        """``M^H v`` with ``v`` broadcast along rows, column adders and a
        slice-to-slice adder chain. Returns exact (K,) sums."""
        m_re, m_im, _ = self.ff_c
        n, nb = self.n, m_re.shape[-1]
        vb_re = v_re.reshape(self.ns, n, 1, 1)
        vb_im = v_im.reshape(self.ns, n, 1, 1)
        m_re, m_im, vb_re, vb_im = _promote(m_re, m_im, vb_re, vb_im, n * self.ns)
        pr, pi = _cmul(m_re, m_im, vb_re, vb_im, conj_a=True)
        self.tick(nb, self.n_pe)
        self.set_mode("col_adder", (slice(None), 0, slice(None)))
        col_re, lv = tree_sum(pr, axis=1)  # (ns, q, m)
        col_im, _ = tree_sum(pi, axis=1)
        self._charge_tree(lv, self.ns * n)
        out_re, lv2 = tree_sum(col_re, axis=0)
        out_im, _ = tree_sum(col_im, axis=0)
        self._charge_tree(lv2, n)
        return out_re.T.reshape(-1), out_im.T.reshape(-1)

    def _charge_tree(self, levels: int, groups: int) -> None:
        # level k of a tree over 2^L inputs uses 2^(L-k-1) adders per group
        for k in range(levels):
            self.tick(1, groups * (1 << (levels - k - 1)))

    def slice_sum(self, re, im, axis: int = 0):
        """Reduce per-slice partials through the slice adder chain."""
        out_re, lv = tree_sum(re, axis)
        out_im, _ = tree_sum(im, axis)
        self._charge_tree(lv, self.n * self.n)
        return out_re, out_im

    def outer_update(self, j_re, j_im, r_re, r_im):
        """Exact ``j r`` outer products, ``j`` on rows and ``r`` on columns,
        one slot per cycle. Returns blocked ``(ns, n, n, nb)`` arrays."""
        n = self.n
        nb = r_re.size // n
        jb_re, jb_im = j_re.reshape(self.ns, n, 1, 1), j_im.reshape(self.ns, n, 1, 1)
        rb_re, rb_im = r_re.reshape(nb, n).T, r_im.reshape(nb, n).T
        jb_re, jb_im, rb_re, rb_im = _promote(jb_re, jb_im, rb_re, rb_im, 1)
        pr, pi = _cmul(jb_re, jb_im, rb_re, rb_im)
        self.tick(nb, self.n_pe)
        return pr, pi

    def unblock(self, x: np.ndarray) -> np.ndarray:
        ns, n, _, nb = x.shape
        return x.transpose(0, 1, 3, 2).reshape(ns * n, nb * n)


def _fx_operands(A: FxMatrix, B: FxMatrix, n: int):
    if A.shape != (n, n) or B.shape != (n, n):
        raise DimensionError(f"Cannon kernels take {n}x{n} operands, got {A.shape} and {B.shape}")


def _default_fmt(A: FxMatrix, B: FxMatrix) -> FixedFormat:
    return FixedFormat(min(48, A.fmt.total_bits + B.fmt.total_bits),
                       A.fmt.frac_bits + B.fmt.frac_bits)


def cannon_mm(A: FxMatrix, B: FxMatrix, out_fmt: FixedFormat | None = None,
              stats: FxStats | None = None, timing: ArrayTiming = DEFAULT_TIMING):
    """``A @ B`` on one slice; returns ``(product, cycles)``.

    cycles = (n-1) skew + n MAC-shift steps (the output is stationary, so no
    deskew).
    """
    n = timing.slice_dim
    _fx_operands(A, B, n)
    g = PEGrid(n, timing)
    g.begin("mm", configure=False)
    c_re, c_im = g.cannon_forward(B.re[None], B.im[None], A.re[None, None], A.im[None, None])
    g.tick(n - 1)  # skew of A
    w = Wide(c_re[0, 0], c_im[0, 0], A.fmt.frac_bits + B.fmt.frac_bits)
    return requantize(w, out_fmt or _default_fmt(A, B), stats), g.total_cycles


def cannon_mm_herm(A: FxMatrix, B: FxMatrix, out_fmt: FixedFormat | None = None,
                   stats: FxStats | None = None, timing: ArrayTiming = DEFAULT_TIMING):
    """``A^H @ B`` without transposing A; returns ``(product, cycles)``.

    cycles = (n-1) skew + n MAC-shift steps + (n-1) deskew of the outputs.
    """
    n = timing.slice_dim
    _fx_operands(A, B, n)
    g = PEGrid(n, timing)
    g.begin("mm", configure=False)
    g.load_a(A.re, A.im)
    c_re, c_im = g.cannon_hermitian(B.re[None, None], B.im[None, None])
    g.tick(n - 1)  # deskew
    w = Wide(c_re[0, 0], c_im[0, 0], A.fmt.frac_bits + B.fmt.frac_bits)
    return requantize(w, out_fmt or _default_fmt(A, B), stats), g.total_cycles


def mv_broadcast(M: FxMatrix, v: FxMatrix, direction: str = "forward",
                 out_fmt: FixedFormat | None = None, stats: FxStats | None = None,
                 timing: ArrayTiming = DEFAULT_TIMING):
    """``M v`` (``direction="forward"``) or ``M^H v`` (``"herm"``) with M held
    in the C arrays; returns ``(vector, cycles)``."""
    g = PEGrid(M.shape[0], timing)
    g.begin("mv", configure=False)
    g.store_c(M)
    if direction == "forward":
        if v.shape != (M.shape[1],):
            raise DimensionError(f"vector {v.shape} does not match {M.shape}")
        re, im = g.mv_forward(v.re, v.im)
    elif direction == "herm":
        if v.shape != (M.shape[0],):
            raise DimensionError(f"vector {v.shape} does not match {M.shape}^H")
        re, im = g.mv_hermitian(v.re, v.im)
    else:
        raise ValueError(f"direction must be forward or herm, not {direction!r}")
    fmt = out_fmt or _default_fmt(M, v)
    return requantize(Wide(re, im, M.fmt.frac_bits + v.fmt.frac_bits), fmt, stats), g.total_cycles
