"""Joint jammer nulling and box-constrained data detection.

Each outer iteration runs the eight-step schedule

    1  E  = Y - H S                    (full-block residual)
    2  j  = E x                         (first iteration only, pseudorandom x)
    3  u  = E^H j ; j = E u             (power-iteration refinement)
    4  j  = j / ||j||                   (extended precision, LUT 1/sqrt)
    5  r  = j^H E
    6  Eb = E - j r                     (project the jammer direction out)
    7  G  = H^H Eb
    8  S  = prox_box(S + tau G)         (data columns only)

The direction found in step 4 is only nulled when it carries at least
``jammer_gate`` of the residual energy (``||r||^2 >= gate * ||E||^2``);
otherwise the iteration is a plain projected gradient step. The step size is
``tau_scale * U / ||(I - j j^H) H||_F^2``, recomputed every iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..airlink import BOX_RADIUS, Constellation
from ..numerics import (
    DEFAULT_LUT,
    FixedFormat,
    FxMatrix,
    FxStats,
    InvSqrtLut,
    Q,
    Wide,
    inv_sqrt_parts,
    mm_exact,
    quantize,
    requantize,
    rne_div,
    rne_shift,
    saturate,
)
from .linear import chest_ls
from .llr import llr_map, prox_box
from .prs import prs_vector


@dataclass(frozen=True)
class FixedConfig:
    """Word formats of the bit-true datapath.

    ``data``: PE storage (Y, H_hat, S, E, Eb); ``acc``: MAC accumulator read
    out for G; ``ext``: PE+ lanes (u, j, r); ``ext_acc``: PE+ accumulators
    (squared norms); ``step``: the step size register.
    """

    data: FixedFormat = Q(14, 11)
    acc: FixedFormat = Q(28, 22)
    ext: FixedFormat = Q(24, 18)
    ext_acc: FixedFormat = Q(48, 36)
    step: FixedFormat = Q(32, 16)
    lut: InvSqrtLut = DEFAULT_LUT
    # input scaled by a power of two so max |Re|,|Im| < data range / 2**headroom
    agc_headroom_bits: int = 2
    gate_frac_bits: int = 8


@dataclass(frozen=True)
class DetectorConfig:
    t_max: int = 10
    step_size: float | None = None
    tau_scale: float = 0.75
    box_radius: float = BOX_RADIUS
    power_iter_per_outer: int = 1
    pr_seed: int | None = None
    numeric_mode: str = "float64"
    jammer_gate: float = 0.5
    null_jammer: bool = True
    llr_noise: float = 1.0
    fixed: FixedConfig = field(default_factory=FixedConfig)

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step size must be positive")
        if self.tau_scale <= 0:
            raise ValueError("tau_scale must be positive")
        if self.box_radius <= 0:
            raise ValueError("box radius must be positive")
        if self.power_iter_per_outer < 0:
            raise ValueError("power_iter_per_outer must be >= 0")
        if self.numeric_mode not in ("float64", "fixed"):
            raise ValueError(f"numeric_mode must be float64 or fixed, not {self.numeric_mode!r}")


@dataclass(frozen=True)
class DetectionResult:
    S_hat: np.ndarray
    llrs: np.ndarray
    j_hat: np.ndarray
    objective_trace: np.ndarray
    saturation_count: int = 0
    degenerate_iterations: tuple = ()
    jammer_nulled: tuple = ()
    S_block: np.ndarray | None = None
    tau_trace: np.ndarray | None = None

    def same_as(self, other: "DetectionResult") -> bool:
        """Bit-level equality of the detector outputs."""
        return (np.array_equal(self.S_hat, other.S_hat)
                and np.array_equal(self.llrs, other.llrs)
                and np.array_equal(self.j_hat, other.j_hat))


# ---------------------------------------------------------------------------
# floating point


def _sandman_float(Y, H, S_pilot, cfg: DetectorConfig, c: Constellation,
                   observer=None, S0=None) -> DetectionResult:
    B, K = Y.shape
    U, P = S_pilot.shape
    r_box = cfg.box_radius
    S = np.zeros((U, K), dtype=np.complex128)
    S[:, :P] = S_pilot
    if S0 is not None:
        S[:, P:] = S0
    x = prs_vector(cfg.pr_seed or 0, K)
    h2 = float(np.sum(np.abs(H) ** 2))
    j = None
    j_applied = np.zeros(B, dtype=np.complex128)
    trace, taus, nulled, degenerate = [], [], [], []
    for t in range(cfg.t_max):
        E = Y - H @ S
        if j is None:
            j = E @ x
        for _ in range(cfg.power_iter_per_outer):
            u = E.conj().T @ j
            j = E @ u
        n2 = float(np.vdot(j, j).real)
        if n2 > 0.0:
            j = j / math.sqrt(n2)
        else:
            degenerate.append(t)
            j = np.zeros(B, dtype=np.complex128)
        r = j.conj() @ E
        e2 = float(np.sum(np.abs(E) ** 2))
        hit = (cfg.null_jammer and n2 > 0.0
               and float(np.vdot(r, r).real) >= cfg.jammer_gate * e2)
        nulled.append(hit)
        j_applied = j if hit else np.zeros(B, dtype=np.complex128)
        Eb = E - np.outer(j_applied, r) if hit else E
        if cfg.step_size is not None:
            tau = cfg.step_size
        else:
            jh = j_applied.conj() @ H
            den = h2 - float(np.vdot(jh, jh).real)
            tau = cfg.tau_scale * U / den if den > 0.0 else 0.0
        taus.append(tau)
        G = H.conj().T @ Eb[:, P:]
        S[:, P:] = prox_box(S[:, P:] + tau * G, r_box)
        trace.append(float(np.sum(np.abs(Eb) ** 2)))
        if observer is not None:
            observer(t, {"E": E, "j": j_applied, "Eb": Eb, "S": S.copy(), "tau": tau})
    S_hat = S[:, P:].copy()
    return DetectionResult(
        S_hat=S_hat,
        llrs=llr_map(S_hat, c, cfg.llr_noise),
        j_hat=j_applied,
        objective_trace=np.asarray(trace),
        degenerate_iterations=tuple(degenerate),
        jammer_nulled=tuple(nulled),
        S_block=S,
        tau_trace=np.asarray(taus),
    )


# ---------------------------------------------------------------------------
# bit-true fixed point


def agc_shift(Y, fx: FixedConfig) -> int:
    """Power-of-two input scaling exponent k (the datapath sees ``Y * 2**-k``)."""
    m = float(np.max(np.abs(np.concatenate([np.ravel(np.real(Y)), np.ravel(np.imag(Y))]))))
    if m == 0.0 or not math.isfinite(m):
        return 0
    limit_exp = fx.data.total_bits - 1 - fx.data.frac_bits - fx.agc_headroom_bits
    _, ex = math.frexp(m)  # m in [2^(ex-1), 2^ex)
    return ex - limit_exp


def bfp_normalize(w: Wide, fmt: FixedFormat, stats: FxStats | None = None) -> FxMatrix:
    """Shift a vector by a power of two so its largest component lies in [0.5, 1).

    Direction-only quantities (u and the unnormalised j) go through this
    leading-zero normaliser; the exponent is discarded.
    """
    m = max(int(np.max(np.abs(w.re.astype(object)))), int(np.max(np.abs(w.im.astype(object)))))
    if m == 0:
        return FxMatrix.zeros(w.shape, fmt)
    shift = (m.bit_length() - 1) - fmt.frac_bits + 1
    return requantize(Wide(w.re, w.im, shift + fmt.frac_bits), fmt, stats)


def sum_sq(m: FxMatrix | Wide) -> tuple[int, int]:
    """Exact squared Frobenius norm as ``(mantissa, frac_bits)``."""
    frac = m.fmt.frac_bits if isinstance(m, FxMatrix) else m.frac
    re, im = m.re.astype(object), m.im.astype(object)
    return int(np.sum(re * re) + np.sum(im * im)), 2 * frac


def scale_vector(v: FxMatrix, y: int, shift: int, fmt: FixedFormat,
                 stats: FxStats | None = None) -> FxMatrix:
    """``v * y * 2**-shift`` rounded into ``fmt``."""
    re = saturate(rne_shift(v.re.astype(object) * y, shift), fmt, stats)
    im = saturate(rne_shift(v.im.astype(object) * y, shift), fmt, stats)
    return FxMatrix(np.asarray(re, np.int64), np.asarray(im, np.int64), fmt)


def renormalize(j: FxMatrix, fx: FixedConfig, stats: FxStats | None = None):
    n2, n2_frac = sum_sq(j)
    if n2 == 0:
        return FxMatrix.zeros(j.shape, fx.ext), True
    y, e = inv_sqrt_parts(n2, n2_frac, fx.lut)
    return scale_vector(j, y, fx.lut.frac_bits + e, fx.ext, stats), False


class ReferenceEvaluator:
    """Plain-numpy evaluator for the fixed datapath (exact integer kernels).

    The PE-array model substitutes its own evaluator with the same interface;
    everything that is not a call on the evaluator is shared datapath logic.
    """

    def phase(self, tag: str) -> None:
        pass

    def residual(self, Yq: FxMatrix, Hq: FxMatrix, S: FxMatrix, cols: slice) -> Wide:
        """Exact ``Y - H S`` on the given columns."""
        return Yq[:, cols].wide() - mm_exact(Hq, S[:, cols])

    def mv(self, M: FxMatrix, v: FxMatrix, herm: bool = False) -> Wide:
        """Exact ``M v`` (or ``M^H v``) for a vector ``v``."""
        w = mm_exact(M, FxMatrix(v.re[:, None], v.im[:, None], v.fmt), herm_a=herm)
        return Wide(w.re[:, 0], w.im[:, 0], w.frac)

    def gram_herm(self, Hq: FxMatrix, Eb: FxMatrix) -> Wide:
        """Exact ``H^H Eb``."""
        return mm_exact(Hq, Eb, herm_a=True)

    def chest(self, Yp: FxMatrix, Pq: FxMatrix) -> Wide:
        """Exact ``Yp Pq^H``."""
        return mm_exact(Yp, FxMatrix(Pq.re.T, -Pq.im.T, Pq.fmt))

    def norm_sq(self, v: FxMatrix, streamed: bool = False) -> tuple[int, int]:
        return sum_sq(v)

    def renormalize(self, j: FxMatrix, fx: FixedConfig, stats) -> tuple[FxMatrix, bool]:
        """``j / ||j||`` on the PE+ path; ``(zeros, True)`` for a zero vector."""
        return renormalize(j, fx, stats)

    def project(self, E: FxMatrix, j: FxMatrix, r: FxMatrix) -> Wide:
        """Exact ``E - j r`` (outer product)."""
        jr = mm_exact(FxMatrix(j.re[:, None], j.im[:, None], j.fmt),
                      FxMatrix(r.re[None, :], r.im[None, :], r.fmt))
        return E.wide() - jr

    def prox_update(self, S: FxMatrix, tau: int, tau_fmt: FixedFormat, G: FxMatrix) -> Wide:
        """Exact ``S + tau G``."""
        return S.wide() + Wide(G.re * tau, G.im * tau, G.fmt.frac_bits + tau_fmt.frac_bits)

    def llr(self, S_hat: np.ndarray, c: Constellation, n0: float) -> np.ndarray:
        return llr_map(S_hat, c, n0)


def _clamp(m: FxMatrix, r: int) -> FxMatrix:
    # box clamping is the prox operator, not a saturation event
    return FxMatrix(np.clip(m.re, -r, r), np.clip(m.im, -r, r), m.fmt)


def quantize_inputs(Y, S_pilot, fx: FixedConfig, stats: FxStats, H_hat=None):
    """AGC + quantisation of the receive block (and of an external H_hat)."""
    k = agc_shift(Y, fx)
    Yq = FxMatrix.from_complex(np.ldexp(np.real(Y), -k) + 1j * np.ldexp(np.imag(Y), -k),
                               fx.data, stats)
    Pq = FxMatrix.from_complex(S_pilot, fx.data, stats)
    Hq = None
    if H_hat is not None:
        Hq = FxMatrix.from_complex(np.ldexp(np.real(H_hat), -k) + 1j * np.ldexp(np.imag(H_hat), -k),
                                   fx.data, stats)
    return Yq, Pq, Hq, k


def chest_fixed(Yq: FxMatrix, Pq: FxMatrix, fmt: FixedFormat, ev=None,
                stats: FxStats | None = None) -> FxMatrix:
    """Bit-true LS estimate ``Yp Pq^H / P`` with a single final rounding."""
    ev = ev or ReferenceEvaluator()
    P = Pq.shape[1]
    w = ev.chest(Yq[:, :P], Pq)
    # the pilot mantissas carry Pq.fmt.frac_bits; divide those out with 1/P
    d = P << (w.frac - fmt.frac_bits)
    re = saturate(rne_div(w.re, d), fmt, stats)
    im = saturate(rne_div(w.im, d), fmt, stats)
    return FxMatrix(np.asarray(re, np.int64), np.asarray(im, np.int64), fmt)


def _step_size(cu_mant: int, cu_frac: int, n2: int, n2_frac: int, fx: FixedConfig,
               stats: FxStats) -> int:
    """``c U / n2`` in the step format, via the squared LUT inverse square root."""
    y, e = inv_sqrt_parts(n2, n2_frac, fx.lut)
    shift = 2 * fx.lut.frac_bits + 2 * e + cu_frac - fx.step.frac_bits
    return saturate(rne_shift(cu_mant * y * y, shift), fx.step, stats)


def run_fixed(Yq: FxMatrix, Hq: FxMatrix, Pq: FxMatrix, cfg: DetectorConfig,
              c: Constellation, ev=None, stats: FxStats | None = None,
              agc: int = 0, observer=None, S0: FxMatrix | None = None) -> DetectionResult:
    """The bit-true detector on already-quantised inputs.

    ``ev`` supplies the matrix kernels; see :class:`ReferenceEvaluator`.
    """
    ev = ev or ReferenceEvaluator()
    stats = stats or FxStats()
    fx = cfg.fixed
    B, K = Yq.shape
    U, P = Pq.shape
    data = slice(P, K)

    S = FxMatrix.zeros((U, K), fx.data)
    S.re[:, :P], S.im[:, :P] = Pq.re, Pq.im
    if S0 is not None:
        S.re[:, data], S.im[:, data] = S0.re, S0.im
    r_box = quantize(cfg.box_radius, fx.data)
    x = FxMatrix.from_complex(prs_vector(cfg.pr_seed or 0, K), fx.data)
    h2, h2_frac = sum_sq(Hq)
    cu_frac = 8
    cu_mant = quantize(cfg.tau_scale * U, Q(40, cu_frac))
    gate = quantize(cfg.jammer_gate, Q(24, fx.gate_frac_bits))
    fixed_tau = None if cfg.step_size is None else quantize(cfg.step_size, fx.step, stats)

    j = None
    zero_j = FxMatrix.zeros(B, fx.ext)
    j_applied = zero_j
    trace, taus, nulled, degenerate = [], [], [], []
    for t in range(cfg.t_max):
        ev.phase("1")
        E = requantize(ev.residual(Yq, Hq, S, slice(0, K)), fx.data, stats)
        if j is None:
            ev.phase("2")
            j = bfp_normalize(ev.mv(E, x), fx.ext, stats)
        ev.phase("3")
        for _ in range(cfg.power_iter_per_outer):
            u = bfp_normalize(ev.mv(E, j, herm=True), fx.ext, stats)
            j = bfp_normalize(ev.mv(E, u), fx.ext, stats)
        ev.phase("4")
        j, degen = ev.renormalize(j, fx, stats)
        if degen:
            degenerate.append(t)
        ev.phase("5")
        ru = ev.mv(E, j, herm=True)  # E^H j == conj(r)
        r = requantize(Wide(ru.re, -ru.im, ru.frac), fx.ext, stats)
        r2, r2_frac = ev.norm_sq(r, streamed=True)
        e2, e2_frac = sum_sq(E)
        hit = bool(cfg.null_jammer and not degen
                   and (r2 << (e2_frac + fx.gate_frac_bits))
                   >= (gate * e2) << r2_frac)
        nulled.append(hit)
        j_applied = j if hit else zero_j
        ev.phase("6")
        # with j_applied == 0 this reproduces E exactly
        Eb = requantize(ev.project(E, j_applied, r), fx.data, stats)
        ev.phase("tau")
        if fixed_tau is not None:
            tau = fixed_tau
        else:
            jh = ev.mv(Hq, j_applied, herm=True)
            jh = requantize(jh, fx.ext, stats)
            jh2, jh2_frac = ev.norm_sq(jh)
            f = max(h2_frac, jh2_frac)
            n = (h2 << (f - h2_frac)) - (jh2 << (f - jh2_frac))
            tau = _step_size(cu_mant, cu_frac, n, f, fx, stats) if n > 0 else 0
        taus.append(tau * fx.step.step)
        ev.phase("7")
        G = requantize(ev.gram_herm(Hq, Eb[:, data]), fx.acc, stats)
        ev.phase("8")
        upd = requantize(ev.prox_update(S[:, data], tau, fx.step, G), fx.data, stats)
        upd = _clamp(upd, r_box)
        S.re[:, data], S.im[:, data] = upd.re, upd.im
        eb2, eb2_frac = sum_sq(Eb)
        trace.append(math.ldexp(float(eb2), 2 * agc - eb2_frac))
        if observer is not None:
            observer(t, {"E": E, "j": j_applied, "Eb": Eb, "S": S, "tau": tau, "r": r})
    ev.phase("llr")
    S_hat = S[:, data].value()
    return DetectionResult(
        S_hat=S_hat,
        llrs=ev.llr(S_hat, c, cfg.llr_noise),
        j_hat=j_applied.value(),
        objective_trace=np.asarray(trace),
        saturation_count=stats.saturations,
        degenerate_iterations=tuple(degenerate),
        jammer_nulled=tuple(nulled),
        S_block=S.value(),
        tau_trace=np.asarray(taus),
    )


def sandman_detect(Y, H_hat, S_pilot, cfg: DetectorConfig, c: Constellation,
                   observer=None, S0=None) -> DetectionResult:
    """Run the detector on one received block.

    ``H_hat=None`` estimates the channel from the pilot columns in the
    configured numeric mode (in fixed mode this is the bit-true estimator).
    ``observer(t, state)`` is called after every iteration with the residual,
    the applied jammer direction, the projected residual and S (fixed mode
    passes :class:`FxMatrix` values). ``S0`` overrides the all-zero start of
    the data columns.
    """
    Y = np.asarray(Y, dtype=np.complex128)
    S_pilot = np.asarray(S_pilot, dtype=np.complex128)
    if cfg.numeric_mode == "float64":
        if H_hat is None:
            H_hat = chest_ls(Y[:, : S_pilot.shape[1]], S_pilot).H_hat
        H_hat = np.asarray(H_hat, dtype=np.complex128)
        return _sandman_float(Y, H_hat, S_pilot, cfg, c, observer, S0)
    stats = FxStats()
    Yq, Pq, Hq, k = quantize_inputs(Y, S_pilot, cfg.fixed, stats, H_hat)
    if Hq is None:
        Hq = chest_fixed(Yq, Pq, cfg.fixed.data, stats=stats)
    S0q = None
    if S0 is not None:
        S0q = FxMatrix.from_complex(np.asarray(S0, dtype=np.complex128), cfg.fixed.data, stats)
    return run_fixed(Yq, Hq, Pq, cfg, c, stats=stats, agc=k, observer=observer, S0=S0q)
