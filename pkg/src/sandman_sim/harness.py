"""Monte-Carlo BER sweeps with deterministic seeding and early stopping.

Frames of one cell (constellation, jammer, SNR) are shared by all detectors
of the sweep, so detectors are compared on identical channel draws. Frames
run in fixed-size chunks; a detector stops after the first chunk that brings
its error count to ``min_bit_errors``. Chunk boundaries never depend on the
worker count, so results do not either.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .airlink import FrameConfig, JammerKind, JammerProfile, generate_frame
from .receiver import DetectorConfig, chest_ls, hard_bits, lmmse_detect, sandman_detect

DETECTORS = ("sandman_float", "sandman_fixed", "sandman_array", "lmmse")
CSV_SCHEMA = "sandman-ber/1"
CSV_COLUMNS = ("constellation", "jammer", "snr_db", "detector", "frames_run", "bits",
               "bit_errors", "ber", "ci95", "status")


class NotBracketed(ValueError):
    """The target BER is not crossed by a curve."""


@dataclass(frozen=True)
class SweepSpec:
    snr_points: tuple = (-8.0, -6.0, -4.0, -2.0, 0.0)
    jammers: tuple = ("barrage",)
    constellations: tuple = ("qpsk",)
    detectors: tuple = ("sandman_float", "lmmse")
    max_frames: int = 20000
    min_bit_errors: int = 200
    base_seed: int = 0
    t_max: int = 10
    power_ratio_db: float = 30.0
    B: int = 32
    U: int = 8
    P: int = 16
    D: int = 48
    chunk_frames: int = 8
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def __post_init__(self):
        object.__setattr__(self, "snr_points", tuple(float(s) for s in self.snr_points))
        object.__setattr__(self, "jammers", tuple(JammerKind.parse(str(getattr(j, "value", j))).value
                                                  for j in self.jammers))
        object.__setattr__(self, "constellations", tuple(c.lower() for c in self.constellations))
        object.__setattr__(self, "detectors", tuple(self.detectors))
        if self.max_frames < 1:
            raise ValueError("max_frames must be >= 1")
        if self.min_bit_errors < 1:
            raise ValueError("min_bit_errors must be >= 1")
        if self.chunk_frames < 1:
            raise ValueError("chunk_frames must be >= 1")
        if not self.snr_points or any(b <= a for a, b in zip(self.snr_points, self.snr_points[1:])):
            raise ValueError("snr_points must be non-empty and strictly increasing")
        for d in self.detectors:
            if d not in DETECTORS:
                raise ValueError(f"unknown detector {d!r}; choose from {DETECTORS}")
        for c in self.constellations:
            FrameConfig(constellation=c)

    def frame_config(self, constellation: str) -> FrameConfig:
        return FrameConfig(self.B, self.U, self.P + self.D, self.P, self.D, constellation)


@dataclass(frozen=True)
class BerPoint:
    snr_db: float
    detector: str
    jammer: str
    constellation: str
    frames_run: int
    bit_errors: int
    ber: float
    ci95: float
    bits: int = 0
    failed: bool = False
    error: str = ""

    @classmethod
    def from_counts(cls, snr_db, detector, jammer, constellation, frames, errors, bits_per_frame,
                    failed=False, error=""):
        bits = frames * bits_per_frame
        ber = errors / bits if bits else float("nan")
        ci = 1.96 * math.sqrt(ber * (1.0 - ber) / bits) if bits else float("nan")
        return cls(float(snr_db), detector, jammer, constellation, frames, errors, ber, ci,
                   bits, failed, error)


def frame_seed(base_seed: int, cell: tuple, frame_index: int) -> int:
    """64-bit seed from a hash of the base seed, the cell key and the frame index."""
    key = repr((int(base_seed), tuple(cell), int(frame_index))).encode()
    return struct.unpack("<Q", hashlib.sha256(key).digest()[:8])[0]


def _cell_key(constellation: str, jammer: str, snr: float) -> tuple:
    return (constellation, jammer, float(snr).hex())


def run_detector(name: str, frame, cfg: DetectorConfig, pr_seed: int):
    """Run one detector on a frame; returns its DetectionResult."""
    c = frame.cfg.const
    if name == "lmmse":
        H_hat = chest_ls(frame.Y_pilot, frame.S_pilot).H_hat
        return lmmse_detect(frame.Y_data, H_hat, frame.N0, c)
    if name == "sandman_float":
        return sandman_detect(frame.Y, None, frame.S_pilot,
                              replace(cfg, numeric_mode="float64", pr_seed=pr_seed), c)
    if name == "sandman_fixed":
        return sandman_detect(frame.Y, None, frame.S_pilot,
                              replace(cfg, numeric_mode="fixed", pr_seed=pr_seed), c)
    if name == "sandman_array":
        from .pe_array import run_block
        res, _ = run_block(frame.Y, frame.S_pilot,
                           replace(cfg, numeric_mode="fixed", pr_seed=pr_seed), c)
        return res
    raise ValueError(f"unknown detector {name!r}")


def _run_chunk(job):
    """Worker: frames [start, stop) of one cell for the given detectors.

    Returns {detector: (frames, errors, error_message)}.
    """
    spec, constellation, jammer, snr, detectors, start, stop = job
    fc = spec.frame_config(constellation)
    jam = JammerProfile(JammerKind(jammer), spec.power_ratio_db)
    cfg = replace(spec.detector, t_max=spec.t_max)
    cell = _cell_key(constellation, jammer, snr)
    out = {d: [0, 0, ""] for d in detectors}
    for idx in range(start, stop):
        seed = frame_seed(spec.base_seed, cell, idx)
        frame = generate_frame(fc, jam, snr, seed)
        for d in detectors:
            if out[d][2]:
                continue
            try:
                res = run_detector(d, frame, cfg, pr_seed=seed >> 16)
            except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                out[d][2] = f"{type(exc).__name__}: {exc}"
                continue
            out[d][0] += 1
            out[d][1] += int(np.count_nonzero(hard_bits(res.llrs) != frame.bits_true))
    return {d: tuple(v) for d, v in out.items()}


def worker_count() -> int:
    cap = os.environ.get("SANDMAN_SIM_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def run_sweep(spec: SweepSpec, workers: int | None = None) -> list[BerPoint]:
    """Run every (constellation, jammer, snr, detector) cell of the sweep."""
    workers = worker_count() if workers is None else max(1, int(workers))
    state = {}
    for c in spec.constellations:
        for j in spec.jammers:
            for s in spec.snr_points:
                state[(c, j, s)] = {d: {"frames": 0, "errors": 0, "done": False, "error": ""}
                                    for d in spec.detectors}
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while True:
            jobs = []
            for (c, j, s), dets in state.items():
                active = tuple(d for d, st in dets.items() if not st["done"])
                if not active:
                    continue
                start = min(dets[d]["frames"] for d in active)
                stop = min(start + spec.chunk_frames, spec.max_frames)
                jobs.append(((c, j, s), active, (spec, c, j, s, active, start, stop)))
            if not jobs:
                break
            if pool is None:
                results = [_run_chunk(job) for _, _, job in jobs]
            else:
                results = list(pool.map(_run_chunk, [job for _, _, job in jobs]))
            for (key, active, job), res in zip(jobs, results):
                stop = job[-1]
                for d in active:
                    st = state[key][d]
                    frames, errors, err = res[d]
                    st["frames"] += frames
                    st["errors"] += errors
                    if err:
                        st["error"], st["done"] = err, True
                    elif st["errors"] >= spec.min_bit_errors or stop >= spec.max_frames:
                        st["done"] = True
    finally:
        if pool is not None:
            pool.shutdown()
    points = []
    for (c, j, s), dets in state.items():
        bits_per_frame = spec.frame_config(c).bits_per_block
        for d, st in dets.items():
            points.append(BerPoint.from_counts(s, d, j, c, st["frames"], st["errors"],
                                               bits_per_frame, bool(st["error"]), st["error"]))
    return sorted(points, key=lambda p: (p.constellation, p.jammer, p.detector, p.snr_db))


# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else ("inf" if math.isinf(x) and x > 0 else f"{x:.6e}")


def to_csv(points: list[BerPoint]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {CSV_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for p in points:
        w.writerow([p.constellation, p.jammer, f"{p.snr_db:g}", p.detector, p.frames_run,
                    p.bits, p.bit_errors, _fmt(p.ber), _fmt(p.ci95),
                    "failed" if p.failed else "ok"])
    return buf.getvalue()


def write_csv(points: list[BerPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(to_csv(points))


def read_csv(path) -> list[BerPoint]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        out.append(BerPoint(float(row["snr_db"]), row["detector"], row["jammer"],
                            row["constellation"], int(row["frames_run"]), int(row["bit_errors"]),
                            float(row["ber"]), float(row["ci95"]), int(row["bits"]),
                            row["status"] == "failed"))
    return out


def select(points: list[BerPoint], **attrs) -> list[BerPoint]:
    return [p for p in points if all(getattr(p, k) == v for k, v in attrs.items())]


def snr_at(points: list[BerPoint], target_ber: float) -> float:
    """SNR where the curve first falls through ``target_ber`` (log-linear)."""
    pts = sorted((p for p in points if not p.failed and p.ber > 0 and p.frames_run > 0),
                 key=lambda p: p.snr_db)
    lt = math.log10(target_ber)
    for a, b in zip(pts, pts[1:]):
        if a.ber >= target_ber >= b.ber:
            la, lb = math.log10(a.ber), math.log10(b.ber)
            if la == lb:
                return a.snr_db
            return a.snr_db + (lt - la) * (b.snr_db - a.snr_db) / (lb - la)
    raise NotBracketed(f"BER {target_ber:g} not bracketed by the curve")


def compare_curves(a: list[BerPoint], b: list[BerPoint], target_ber: float) -> float:
    """SNR(a) - SNR(b) at ``target_ber``, in dB."""
    return snr_at(a, target_ber) - snr_at(b, target_ber)
