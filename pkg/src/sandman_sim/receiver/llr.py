"""Box projection and per-dimension max-log soft demapping."""

from __future__ import annotations

import numpy as np

from ..airlink import Constellation


def prox_box(v, r: float):
    """Clamp real and imaginary parts independently to ``[-r, r]``."""
    if r <= 0:
        raise ValueError("box radius must be positive")
    v = np.asarray(v, dtype=np.complex128)
    out = np.clip(v.real, -r, r) + 1j * np.clip(v.imag, -r, r)
    return complex(out) if out.ndim == 0 else out


def _dim_tables(c: Constellation):
    q = c.bits_per_dim
    lv = np.asarray(c.levels, dtype=np.float64)
    pats = (np.arange(lv.size)[:, None] >> (q - 1 - np.arange(q))) & 1
    return lv, pats.astype(bool)


def llr_map(s_hat, c: Constellation, n0: float = 1.0) -> np.ndarray:
    """Max-log LLRs, positive means bit 0.

    The constellation is separable, so each real dimension is demapped on its
    own: ``LLR_b = (min_{bit b = 1} (x - l)^2 - min_{bit b = 0} (x - l)^2) / n0``.
    For QPSK this is ``2*sqrt(2)/n0 * x``. Output has a trailing axis of
    length Q (real-part bits first).
    """
    s = np.asarray(s_hat, dtype=np.complex128)
    lv, pats = _dim_tables(c)
    out = []
    for x in (s.real, s.imag):
        d = (x[..., None] - lv) ** 2
        for b in range(c.bits_per_dim):
            d1 = np.where(pats[:, b], d, np.inf).min(axis=-1)
            d0 = np.where(~pats[:, b], d, np.inf).min(axis=-1)
            out.append((d1 - d0) / n0)
    return np.stack(out, axis=-1)


def hard_bits(llrs) -> np.ndarray:
    """Bit decisions from LLR signs (negative -> 1)."""
    return (np.asarray(llrs) < 0).astype(np.uint8)
