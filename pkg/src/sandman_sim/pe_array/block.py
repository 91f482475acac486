"""Running a whole receive block on the PE array model."""

from __future__ import annotations

import math

import numpy as np

from ..airlink import Constellation, get_constellation
from ..numerics import DimensionError, FxMatrix, FxStats, Wide
from ..receiver.llr import llr_map
from ..receiver.sandman import (
    DetectionResult,
    DetectorConfig,
    FixedConfig,
    chest_fixed,
    quantize_inputs,
    renormalize,
    run_fixed,
    sum_sq,
)
from .grid import PEGrid
from .program import DEFAULT_TIMING, ArrayTiming, CycleReport, PhaseProgram, lg

_MODES = {"1": "mac", "2": "mac", "3": "mac", "4": "idle", "5": "mac", "6": "mac",
          "tau": "mac", "7": "mac", "8": "prox", "llr": "idle"}


class ArrayEvaluator:
    """Drop-in evaluator for the fixed datapath that executes every kernel on
    a :class:`PEGrid` and counts cycles per phase."""

    def __init__(self, B: int, U: int, K: int, P: int, timing: ArrayTiming = DEFAULT_TIMING):
        n = timing.slice_dim
        if U != n:
            raise DimensionError(f"the array model needs U == {n}, got {U}")
        if K % n or P % n:
            raise DimensionError(f"K and P must be multiples of {n}")
        self.grid = PEGrid(B, timing)
        self.timing = timing
        self.B, self.U, self.K, self.P = B, U, K, P
        self._pilot_residual = None
        self._hq = None

    # -- phase control ------------------------------------------------------

    def phase(self, tag: str) -> None:
        self.grid.begin(tag, _MODES.get(tag, "mac"),
                        configure=tag != "8")

    def load_inputs(self, Yq: FxMatrix) -> None:
        g = self.grid
        g.begin("load", "idle", configure=False)
        g.store_c(Yq)
        g.tick((self.K // g.n) * self.timing.load_cycles_per_block)

    def load_h(self, Hq: FxMatrix) -> None:
        """Write the channel estimate into the operand registers, row-skewed."""
        self.grid.load_a(Hq.re, Hq.im, skew=True)
        self._hq = Hq

    def h_norm(self, Hq: FxMatrix) -> tuple[int, int]:
        g = self.grid
        g.begin("hnorm", "mac")
        g.tick(1, g.n_pe)  # each PE squares its entry
        g.set_mode("row_adder", (slice(None), slice(None), 0))
        g._charge_tree(lg(g.n), g.ns * g.n)
        g._charge_tree(lg(g.n), g.ns)
        g._charge_tree(lg(g.ns), 1)
        return sum_sq(Hq)

    def _check_h(self, Hq: FxMatrix) -> None:
        if self._hq is None or not self._hq.equals(Hq):
            self.load_h(Hq)

    # -- evaluator interface ------------------------------------------------

    def chest(self, Yp: FxMatrix, Pq: FxMatrix) -> Wide:
        g = self.grid
        n, nb = g.n, Yp.shape[1] // g.n
        a_re = g.blocked(Yp.re).transpose(0, 3, 1, 2)  # (ns, nb, i, k)
        a_im = g.blocked(Yp.im).transpose(0, 3, 1, 2)
        # P^H blocks: b[m, k, u] = conj(P[u, n m + k])
        b_re = Pq.re.T.reshape(nb, n, -1)
        b_im = -Pq.im.T.reshape(nb, n, -1)
        g.tick(n - 1)  # row skew of the pilot columns
        c_re, c_im = g.cannon_forward(b_re, b_im, a_re, a_im)
        g.tick(self.timing.round_cycles)
        # blocks accumulate in the stationary outputs
        re = c_re.sum(axis=1).reshape(-1, n)
        im = c_im.sum(axis=1).reshape(-1, n)
        return Wide(re, im, Yp.fmt.frac_bits + Pq.fmt.frac_bits)

    def residual(self, Yq: FxMatrix, Hq: FxMatrix, S: FxMatrix, cols: slice) -> Wide:
        if cols != slice(0, self.K):
            raise ValueError("the array computes the full residual block")
        self._check_h(Hq)
        g = self.grid
        P = self.P
        if self._pilot_residual is None:
            tag = g.tag
            g.begin("1p", "mac", configure=False)
            self._pilot_residual = self._residual_blocks(Yq, S, slice(0, P))
            g.tag = tag
        data = self._residual_blocks(Yq, S, slice(P, self.K))
        p = self._pilot_residual
        f = max(p.frac, data.frac)
        p, data = p.align(f), data.align(f)
        return Wide(np.concatenate([p.re, data.re], axis=1),
                    np.concatenate([p.im, data.im], axis=1), f)

    def _residual_blocks(self, Yq: FxMatrix, S: FxMatrix, cols: slice) -> Wide:
        g = self.grid
        n = g.n
        Sc = S[:, cols]
        nb = Sc.shape[1] // n
        b_re = Sc.re.reshape(n, nb, n).transpose(1, 0, 2)  # (m, u, q)
        b_im = Sc.im.reshape(n, nb, n).transpose(1, 0, 2)
        c_re, c_im = g.cannon_forward(b_re, b_im)  # (ns, m, i, q)
        hs = Wide(c_re.transpose(0, 2, 1, 3).reshape(self.B, -1),
                  c_im.transpose(0, 2, 1, 3).reshape(self.B, -1),
                  self._hq.fmt.frac_bits + S.fmt.frac_bits)
        return Yq[:, cols].wide() - hs

    def mv(self, M: FxMatrix, v: FxMatrix, herm: bool = False) -> Wide:
        g = self.grid
        frac = M.fmt.frac_bits + v.fmt.frac_bits
        if M.shape == (self.B, self.U):
            if not herm:
                raise ValueError("only H^H v is scheduled on the operand register")
            self._check_h(M)
            pre, pim = g.hermitian_mv_register(v.re, v.im)
            re, im = g.slice_sum(pre, pim)
            return Wide(re, im, frac)
        g.store_c(M)
        if herm:
            re, im = g.mv_hermitian(v.re, v.im)
        else:
            re, im = g.mv_forward(v.re, v.im)
            g.tick(self.timing.bfp_cycles)  # leading-zero normaliser on the adders
        if herm and g.tag == "3":
            g.tick(self.timing.bfp_cycles)
        return Wide(re, im, frac)

    def gram_herm(self, Hq: FxMatrix, Eb: FxMatrix) -> Wide:
        self._check_h(Hq)
        g = self.grid
        b_re = g.blocked(Eb.re).transpose(0, 3, 1, 2)  # (ns, m, p, q)
        b_im = g.blocked(Eb.im).transpose(0, 3, 1, 2)
        c_re, c_im = g.cannon_hermitian(b_re, b_im)  # (ns, m, u, q)
        re, im = g.slice_sum(c_re, c_im)  # (m, u, q)
        U = self.U
        return Wide(re.transpose(1, 0, 2).reshape(U, -1), im.transpose(1, 0, 2).reshape(U, -1),
                    Hq.fmt.frac_bits + Eb.fmt.frac_bits)

    def _pe_plus_norm(self, length: int) -> None:
        L = self.timing.pe_plus_lanes
        self.grid.tick(math.ceil(length / L))
        self.grid.tick(lg(L))

    def norm_sq(self, v: FxMatrix, streamed: bool = False) -> tuple[int, int]:
        g = self.grid
        if streamed:
            # squares accumulate while v leaves the adders; only the lane sum remains
            g.tick(lg(self.timing.pe_plus_lanes))
            g.tick(self.timing.compare_cycles)
        else:
            self._pe_plus_norm(v.shape[0])
            if g.tag == "tau":
                g.tick(self.timing.lut_cycles + self.timing.tau_mult_cycles)
        return sum_sq(v)

    def renormalize(self, j: FxMatrix, fx: FixedConfig, stats) -> tuple[FxMatrix, bool]:
        L = self.timing.pe_plus_lanes
        self._pe_plus_norm(j.shape[0])
        self.grid.tick(self.timing.lut_cycles)
        self.grid.tick(math.ceil(j.shape[0] / L))
        return renormalize(j, fx, stats)

    def project(self, E: FxMatrix, j: FxMatrix, r: FxMatrix) -> Wide:
        g = self.grid
        pr, pi = g.outer_update(j.re, j.im, r.re, r.im)
        jr = Wide(g.unblock(pr), g.unblock(pi), j.fmt.frac_bits + r.fmt.frac_bits)
        return E.wide() - jr

    def prox_update(self, S: FxMatrix, tau: int, tau_fmt, G: FxMatrix) -> Wide:
        self.grid.tick(self.timing.prox_cycles, S.re.size // self.timing.prox_cycles)
        return S.wide() + Wide(G.re.astype(object) * tau, G.im.astype(object) * tau,
                               G.fmt.frac_bits + tau_fmt.frac_bits)

    def llr(self, S_hat: np.ndarray, c: Constellation, n0: float) -> np.ndarray:
        self.grid.tick(math.ceil(S_hat.size / self.timing.llr_lanes))
        return llr_map(S_hat, c, n0)

    # -- report ------------------------------------------------------------

    def report(self, t_max: int, bits_per_block: int) -> CycleReport:
        g = self.grid
        order = [t for t in ("load", "chest", "hnorm", "1p", "2", "1", "3", "4", "5", "6",
                             "tau", "7", "8", "llr") if t in g.cycles]
        per_phase = {t: g.cycles[t] for t in order}
        recurring = sum(v for t, v in per_phase.items()
                        if t in ("1", "3", "4", "5", "6", "tau", "7", "8"))
        total = g.total_cycles
        return CycleReport(
            cycles_per_phase=per_phase,
            cycles_per_iteration=recurring // t_max,
            cycles_per_block=total,
            pe_utilization=g.busy / (g.n_pe * total),
            bits_per_block=bits_per_block,
            t_max=t_max,
            cannon_utilization=g.cannon_busy / (g.n_pe * g.cannon_steps) if g.cannon_steps else 1.0,
            phase_calls=dict(g.calls),
        )


def run_block(Y, S_pilot, cfg: DetectorConfig, constellation, H_hat=None,
              timing: ArrayTiming = DEFAULT_TIMING) -> tuple[DetectionResult, CycleReport]:
    """Detect one block on the array model.

    Bit-identical to ``sandman_detect`` in fixed mode with the same ``cfg``;
    additionally returns the cycle report.
    """
    if cfg.numeric_mode != "fixed":
        raise ValueError("the array model runs the fixed-point datapath only")
    c = get_constellation(constellation)
    Y = np.asarray(Y, dtype=np.complex128)
    S_pilot = np.asarray(S_pilot, dtype=np.complex128)
    B, K = Y.shape
    U, P = S_pilot.shape
    ev = ArrayEvaluator(B, U, K, P, timing)
    stats = FxStats()
    Yq, Pq, Hq, k = quantize_inputs(Y, S_pilot, cfg.fixed, stats, H_hat)
    ev.load_inputs(Yq)
    ev.phase("chest")
    if Hq is None:
        Hq = chest_fixed(Yq, Pq, cfg.fixed.data, ev, stats)
    ev.load_h(Hq)
    ev.h_norm(Hq)
    result = run_fixed(Yq, Hq, Pq, cfg, c, ev=ev, stats=stats, agc=k)
    return result, ev.report(cfg.t_max, U * (K - P) * c.bits_per_symbol)


def program_for(B: int, U: int, K: int, P: int, cfg: DetectorConfig, with_chest: bool = True,
                timing: ArrayTiming = DEFAULT_TIMING) -> PhaseProgram:
    return PhaseProgram.build(B, U, K, P, cfg.t_max, cfg.power_iter_per_outer,
                              cfg.step_size is None, with_chest, timing)
