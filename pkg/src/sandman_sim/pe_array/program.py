"""Phase program of the PE array: per-phase modes, dataflow and cycle costs.

One block runs the one-time phases ``load``, ``chest``, ``hnorm``, ``1p``
(pilot columns of the residual, which never change) and ``2``, then
``t_max`` iterations of ``1 3 4 5 6 tau 7 8``, and finally ``llr``.

Cost formulas (n = 8 slice edge, ns = B/n slices, L = PE+ lanes,
lg = ceil(log2)); ``cfg`` is the reconfiguration cycle every phase starts
with::

    load   K/n                                  Y columns into the C arrays
    chest  cfg + (n-1) + (P/n) n + 1 + (n-1)    skew, Cannon, round, skew H
    hnorm  cfg + 1 + 2 lg n + lg ns             ||H||_F^2 through the adders
    1p     (P/n) n                              pilot residual blocks
    2      cfg + K/n + lg n + 1                 E x, row adders, normaliser
    1      cfg + (D/n) n                        data residual blocks
    3      cfg + pi (2 K/n + 2 lg n + lg ns + 2)   E^H j then E u
    4      cfg + 2 ceil(B/L) + lg L + 1         PE+ norm, LUT, rescale
    5      cfg + K/n + lg n + lg ns + lg L + 1  r = j^H E, streamed ||r||^2, gate
    6      cfg + K/n                            Eb = E - j r (local)
    tau    cfg + n + lg ns + ceil(U/L) + lg L + 2   H^H j, norm, LUT^2 (auto step)
    7      cfg + (D/n) n + lg ns                Hermitian Cannon, slice sums
    8      prox                                 S + tau G and box clamp
    llr    cfg + ceil(U D / llr_lanes)

``pi`` is the number of power iterations per outer iteration. With a fixed
step size ``tau`` costs only ``cfg``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

ONE_TIME = ("load", "chest", "hnorm", "1p", "2")
RECURRING = ("1", "3", "4", "5", "6", "tau", "7", "8")
FINAL = ("llr",)
PHASE_ORDER = ONE_TIME + RECURRING + FINAL

MODES = ("idle", "mac", "row_adder", "col_adder", "prox")
DATAFLOWS = ("cannon_shift", "row_broadcast", "col_broadcast", "adder_reduce", "local", "pe_plus")


@dataclass(frozen=True)
class ArrayTiming:
    """Cycle constants of the array model."""

    slice_dim: int = 8
    config_cycles: int = 1
    load_cycles_per_block: int = 1
    round_cycles: int = 1
    bfp_cycles: int = 1
    lut_cycles: int = 1
    compare_cycles: int = 1
    tau_mult_cycles: int = 1
    prox_cycles: int = 2
    pe_plus_lanes: int = 8
    llr_lanes: int = 64

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0 or (name in ("slice_dim", "pe_plus_lanes", "llr_lanes") and v < 1):
                raise ValueError(f"bad timing constant {name}={v}")


DEFAULT_TIMING = ArrayTiming()


def lg(x: int) -> int:
    return max(0, math.ceil(math.log2(x))) if x > 1 else 0


@dataclass(frozen=True)
class Phase:
    tag: str
    once: bool
    mode: str  # mode of the main grid PEs (adders named separately)
    dataflow: tuple
    cost: int
    adders: str = ""  # mode of the reduction PEs, if any

    @property
    def mode_map(self) -> dict:
        m = {"grid": self.mode}
        if self.adders:
            m["adders"] = self.adders
        return m


@dataclass(frozen=True)
class PhaseProgram:
    phases: tuple
    t_max: int

    @classmethod
    def build(cls, B: int, U: int, K: int, P: int, t_max: int, power_iter: int = 1,
              auto_step: bool = True, with_chest: bool = True,
              timing: ArrayTiming = DEFAULT_TIMING) -> "PhaseProgram":
        n = timing.slice_dim
        D = K - P
        ns, nbK, nbP, nbD = B // n, K // n, P // n, D // n
        L = timing.pe_plus_lanes
        cfg = timing.config_cycles
        chest_core = (n - 1) + nbP * n + timing.round_cycles if with_chest else 0
        tau = cfg
        if auto_step:
            tau += n + lg(ns) + math.ceil(U / L) + lg(L) + timing.lut_cycles + timing.tau_mult_cycles
        power = power_iter * (2 * nbK + 2 * lg(n) + lg(ns) + 2 * timing.bfp_cycles)
        P_ = Phase
        phases = (
            P_("load", True, "idle", ("local",), nbK * timing.load_cycles_per_block),
            P_("chest", True, "mac", ("cannon_shift",), cfg + chest_core + (n - 1)),
            P_("hnorm", True, "mac", ("local", "adder_reduce"),
               cfg + 1 + 2 * lg(n) + lg(ns), "row_adder"),
            P_("1p", True, "mac", ("cannon_shift",), nbP * n),
            P_("2", True, "mac", ("col_broadcast", "adder_reduce"),
               cfg + nbK + lg(n) + timing.bfp_cycles, "row_adder"),
            P_("1", False, "mac", ("cannon_shift",), cfg + nbD * n),
            P_("3", False, "mac", ("row_broadcast", "col_broadcast", "adder_reduce"),
               cfg + power, "col_adder"),
            P_("4", False, "idle", ("pe_plus",),
               cfg + 2 * math.ceil(B / L) + lg(L) + timing.lut_cycles),
            P_("5", False, "mac", ("row_broadcast", "adder_reduce", "pe_plus"),
               cfg + nbK + lg(n) + lg(ns) + lg(L) + timing.compare_cycles, "col_adder"),
            P_("6", False, "mac", ("row_broadcast", "col_broadcast", "local"), cfg + nbK),
            P_("tau", False, "mac", ("cannon_shift", "row_broadcast", "pe_plus"), tau),
            P_("7", False, "mac", ("cannon_shift", "adder_reduce"), cfg + nbD * n + lg(ns),
               "col_adder"),
            P_("8", False, "prox", ("local",), timing.prox_cycles),
            P_("llr", True, "idle", ("local",), cfg + math.ceil(U * D / timing.llr_lanes)),
        )
        return cls(phases, t_max)

    def __getitem__(self, tag: str) -> Phase:
        for p in self.phases:
            if p.tag == tag:
                return p
        raise KeyError(tag)

    @property
    def cycles_per_iteration(self) -> int:
        return sum(p.cost for p in self.phases if not p.once)

    @property
    def one_time_cycles(self) -> int:
        return sum(p.cost for p in self.phases if p.once)

    @property
    def cycles_per_block(self) -> int:
        return self.one_time_cycles + self.t_max * self.cycles_per_iteration

    def expected_per_phase(self) -> dict:
        return {p.tag: p.cost * (1 if p.once else self.t_max) for p in self.phases}


@dataclass(frozen=True)
class CycleReport:
    cycles_per_phase: dict
    cycles_per_iteration: int
    cycles_per_block: int
    pe_utilization: float
    bits_per_block: int
    t_max: int = 1
    cannon_utilization: float = 1.0
    phase_calls: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.pe_utilization <= 1.0:
            raise ValueError(f"utilization out of range: {self.pe_utilization}")

    def csv_header(self) -> list:
        return (["cycles_per_block", "cycles_per_iteration", "bits_per_block", "t_max",
                 "pe_utilization"] + [f"phase_{t}" for t in self.cycles_per_phase])

    def csv_row(self) -> list:
        return ([self.cycles_per_block, self.cycles_per_iteration, self.bits_per_block,
                 self.t_max, f"{self.pe_utilization:.6f}"] + list(self.cycles_per_phase.values()))

    def table(self, f_clk: float | None = None) -> str:
        lines = [f"{'phase':<8}{'calls':>7}{'cycles':>9}"]
        for tag, cyc in self.cycles_per_phase.items():
            lines.append(f"{tag:<8}{self.phase_calls.get(tag, 0):>7}{cyc:>9}")
        lines += [
            f"cycles_per_iteration = {self.cycles_per_iteration}",
            f"cycles_per_block = {self.cycles_per_block}",
            f"bits_per_block = {self.bits_per_block}",
            f"pe_utilization = {self.pe_utilization:.4f}",
        ]
        if f_clk is not None:
            lines.append(f"throughput = {throughput(self, f_clk) / 1e6:.2f} Mb/s "
                         f"at {f_clk / 1e6:g} MHz")
        return "\n".join(lines)


def throughput(report: CycleReport, f_clk: float) -> float:
    """Detected bits per second at clock ``f_clk`` (Hz)."""
    if report.cycles_per_block <= 0:
        raise ValueError("cycles_per_block must be positive")
    return report.bits_per_block * f_clk / report.cycles_per_block
