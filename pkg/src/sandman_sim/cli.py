"""Command-line front end.

    sandman-sim sweep  [--config FILE] [overrides]   BER sweep -> results.csv
    sandman-sim cycles [--config FILE] [overrides]   cycle report of one block

Config files hold ``key = value`` lines; ``#`` starts a comment. Lists are
comma separated; SNR lists also accept ``start:stop:step`` (inclusive).
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .airlink import JammerKind, JammerProfile, generate_frame
from .harness import DETECTORS, SweepSpec, frame_seed, run_sweep, write_csv
from .receiver import DetectorConfig

EXIT_OK, EXIT_CONFIG, EXIT_DETECTOR = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Every key accepted in a config file, with its default."""

    snr: str = "0,2,4"                    # dB points
    jammer: str = "barrage"               # none | barrage | pilot | data, list allowed
    mod: str = "16qam"                    # qpsk | 16qam, list allowed
    detector: str = "sandman,lmmse"       # sandman | sandman_float | sandman_fixed | sandman_array | lmmse
    numeric: str = "float"                # numeric mode of plain "sandman": float | fixed
    tmax: int = 10
    step_size: float = 0.0                # 0 selects the adaptive step
    tau_scale: float = 0.75
    jammer_gate: float = 0.5
    power_iter: int = 1
    max_frames: int = 20000
    min_bit_errors: int = 200
    chunk_frames: int = 8
    seed: int = 0
    power_ratio_db: float = 30.0
    B: int = 32
    U: int = 8
    P: int = 16
    D: int = 48
    clock_mhz: float = 320.0
    out_dir: str = "out"
    plot: bool = True

    # -- derived views -----------------------------------------------------

    def snr_points(self) -> tuple:
        return parse_snr(self.snr)

    def detectors(self) -> tuple:
        out = []
        for d in _split(self.detector):
            if d == "sandman":
                d = "sandman_fixed" if self.numeric == "fixed" else "sandman_float"
            if d not in DETECTORS:
                raise ConfigError(f"unknown detector {d!r}")
            out.append(d)
        return tuple(dict.fromkeys(out))

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            t_max=self.tmax,
            step_size=self.step_size or None,
            tau_scale=self.tau_scale,
            jammer_gate=self.jammer_gate,
            power_iter_per_outer=self.power_iter,
            numeric_mode="fixed" if self.numeric == "fixed" else "float64",
        )

    def sweep_spec(self) -> SweepSpec:
        return SweepSpec(
            snr_points=self.snr_points(), jammers=tuple(_split(self.jammer)),
            constellations=tuple(_split(self.mod)), detectors=self.detectors(),
            max_frames=self.max_frames, min_bit_errors=self.min_bit_errors,
            base_seed=self.seed, t_max=self.tmax, power_ratio_db=self.power_ratio_db,
            B=self.B, U=self.U, P=self.P, D=self.D, chunk_frames=self.chunk_frames,
            detector=self.detector_config(),
        )

    def dump(self) -> str:
        return "".join(f"{f.name} = {_show(getattr(self, f.name))}\n" for f in fields(self))


def _show(v) -> str:
    return ("true" if v else "false") if isinstance(v, bool) else str(v)


def _split(text: str) -> list:
    return [t.strip().lower() for t in str(text).split(",") if t.strip()]


def parse_snr(text: str) -> tuple:
    pts = []
    for item in _split(text):
        if ":" in item:
            a, b, s = (float(x) for x in item.split(":"))
            if s <= 0:
                raise ConfigError("SNR range step must be positive")
            n = int(math.floor((b - a) / s + 1e-9)) + 1
            pts += [round(a + i * s, 10) for i in range(n)]
        else:
            pts.append(float(item))
    if not pts:
        raise ConfigError("empty SNR list")
    return tuple(pts)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    t = _TYPES[key]
    if t == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    return raw


def parse_config(text: str, source: str = "config") -> dict:
    """``key = value`` lines to a dict of typed values; rejects unknown keys."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return out


def _validate(cfg: RunConfig) -> RunConfig:
    if cfg.numeric not in ("float", "fixed"):
        raise ConfigError(f"numeric must be float or fixed, not {cfg.numeric!r}")
    for j in _split(cfg.jammer):
        if j not in {k.value for k in JammerKind}:
            raise ConfigError(f"unknown jammer {j!r}")
    try:
        cfg.sweep_spec()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


# ---------------------------------------------------------------------------
# SVG plot


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")


def ber_svg(points, width: int = 640, height: int = 420) -> str:
    """Log-y BER vs. SNR chart, one series per (constellation, jammer, detector)."""
    series = {}
    for p in points:
        if p.ber > 0 and not p.failed and math.isfinite(p.snr_db):
            series.setdefault((p.constellation, p.jammer, p.detector), []).append(p)
    ml, mr, mt, mb = 60, 190, 20, 45
    pw, ph = width - ml - mr, height - mt - mb
    allp = [p for s in series.values() for p in s]
    if allp:
        x0, x1 = min(p.snr_db for p in allp), max(p.snr_db for p in allp)
        d0 = math.floor(math.log10(min(p.ber for p in allp)))
        d1 = max(d0 + 1, math.ceil(math.log10(max(p.ber for p in allp))))
    else:
        x0, x1, d0, d1 = 0.0, 1.0, -4, 0
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    fx = lambda x: ml + (x - x0) / (x1 - x0) * pw  # noqa: E731
    fy = lambda b: mt + (d1 - math.log10(b)) / (d1 - d0) * ph  # noqa: E731
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for d in range(d0, d1 + 1):
        y = fy(10.0 ** d)
        out.append(f'<line x1="{ml}" y1="{y:.1f}" x2="{ml + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 5}" y="{y + 4:.1f}" text-anchor="end">1e{d}</text>')
    for x in np.linspace(x0, x1, 6):
        out.append(f'<text x="{fx(x):.1f}" y="{mt + ph + 15}" text-anchor="middle">{x:g}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">SNR [dB]</text>')
    out.append(f'<text x="14" y="{mt + ph / 2}" transform="rotate(-90 14 {mt + ph / 2})" '
               f'text-anchor="middle">BER</text>')
    for i, (key, pts) in enumerate(sorted(series.items())):
        col = _COLORS[i % len(_COLORS)]
        pts = sorted(pts, key=lambda p: p.snr_db)
        path = " ".join(f"{fx(p.snr_db):.1f},{fy(p.ber):.1f}" for p in pts)
        out.append(f'<polyline points="{path}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        for p in pts:
            out.append(f'<circle cx="{fx(p.snr_db):.1f}" cy="{fy(p.ber):.1f}" r="2.5" fill="{col}"/>')
        ly = mt + 12 + 14 * i
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 28}" y2="{ly - 4}" '
                   f'stroke="{col}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 32}" y="{ly}">{" / ".join(key)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# commands


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sandman-sim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("sweep", "cycles"):
        s = sub.add_parser(name)
        s.add_argument("--config")
        s.add_argument("--out-dir")
        s.add_argument("--seed", type=int)
        s.add_argument("--snr", help="dB list or start:stop:step")
        s.add_argument("--jammer", choices=[k.value for k in JammerKind])
        s.add_argument("--mod", choices=["qpsk", "16qam"])
        s.add_argument("--detector", help="comma list of " + ", ".join(("sandman",) + DETECTORS))
        s.add_argument("--tmax", type=int)
        s.add_argument("--numeric", choices=["float", "fixed"])
        s.add_argument("--clock-mhz", type=float)
    return p


_FLAG_KEYS = {"out_dir": "out_dir", "seed": "seed", "snr": "snr", "jammer": "jammer",
              "mod": "mod", "detector": "detector", "tmax": "tmax", "numeric": "numeric",
              "clock_mhz": "clock_mhz"}


def load_run_config(args) -> tuple[RunConfig, str]:
    text = ""
    values = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        values = parse_config(text, args.config)
    for attr, key in _FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = v
    try:
        cfg = replace(RunConfig(), **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return _validate(cfg), text


def cmd_sweep(args) -> int:
    cfg, text = load_run_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(text)
    (out / "config_resolved.txt").write_text(cfg.dump())
    points = run_sweep(cfg.sweep_spec())
    write_csv(points, out / "results.csv")
    if cfg.plot:
        try:
            (out / "ber.svg").write_text(ber_svg(points))
        except Exception as exc:  # plotting never decides the exit code
            print(f"warning: plot not written: {exc}", file=sys.stderr)
    for p in points:
        tag = "FAILED " + p.error if p.failed else f"ber={p.ber:.3e} ({p.bit_errors}/{p.bits})"
        print(f"{p.constellation:>6} {p.jammer:>8} {p.snr_db:>6g} dB {p.detector:<14} {tag}")
    print(f"wrote {out / 'results.csv'}")
    return EXIT_DETECTOR if any(p.failed for p in points) else EXIT_OK


def cmd_cycles(args) -> int:
    from .pe_array import program_for, run_block, throughput

    cfg, _ = load_run_config(args)
    spec = cfg.sweep_spec()
    mod, jam, snr = spec.constellations[0], spec.jammers[0], spec.snr_points[0]
    fc = spec.frame_config(mod)
    seed = frame_seed(cfg.seed, (mod, jam, float(snr).hex()), 0)
    frame = generate_frame(fc, JammerProfile(JammerKind(jam), cfg.power_ratio_db), snr, seed)
    det = replace(cfg.detector_config(), numeric_mode="fixed", pr_seed=seed >> 16)
    try:
        _, report = run_block(frame.Y, frame.S_pilot, det, mod)
    except (ArithmeticError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DETECTOR
    f_clk = cfg.clock_mhz * 1e6
    prog = program_for(fc.B, fc.U, fc.K, fc.P, det)
    print(f"frame: {fc.B}x{fc.U} {mod} jammer={jam} snr={snr:g} dB t_max={det.t_max}")
    print(report.table())
    print(f"closed_form_cycles_per_block = {prog.cycles_per_block}")
    print(f"throughput = {throughput(report, f_clk) / 1e6:.2f} Mb/s at {cfg.clock_mhz:g} MHz")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "sweep":
            return cmd_sweep(args)
        return cmd_cycles(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
