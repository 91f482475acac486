"""Jammed multi-user MIMO uplink: constellations, pilots, and frame generation.

Receive model for one block of K symbols::

    Y = H @ S + j * w + N

with H (B x U) i.i.d. CN(0, 1), a single-antenna jammer with spatial
signature j (B,) i.i.d. CN(0, 1) and transmit sequence w (K,), and AWGN N.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .numerics import DimensionError

BOX_RADIUS = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class Constellation:
    """Gray-mapped square constellation inside the box ``[-r, r]^2``.

    ``points[i]`` is the symbol for the bit pattern whose MSB-first integer
    value is ``i``. The first half of the bits drive the real part, the second
    half the imaginary part; within a dimension the first bit is the sign
    (0 -> positive) and the second bit, if any, selects the outer level.
    """

    name: str
    bits_per_symbol: int
    levels: tuple  # per-dimension amplitude for each per-dimension bit pattern
    box_radius: float = BOX_RADIUS
    points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        q = self.bits_per_symbol // 2
        pts = np.empty(1 << self.bits_per_symbol, dtype=np.complex128)
        for idx in range(pts.size):
            hi, lo = idx >> q, idx & ((1 << q) - 1)
            pts[idx] = self.levels[hi] + 1j * self.levels[lo]
        object.__setattr__(self, "points", pts)

    @property
    def bits_per_dim(self) -> int:
        return self.bits_per_symbol // 2

    @property
    def energy(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    @property
    def gray_map(self) -> dict:
        q = self.bits_per_symbol
        return {tuple((i >> (q - 1 - b)) & 1 for b in range(q)): complex(p)
                for i, p in enumerate(self.points)}

    def bit_patterns(self) -> np.ndarray:
        """(2^Q, Q) array of bit patterns aligned with ``points``."""
        q = self.bits_per_symbol
        idx = np.arange(1 << q)[:, None]
        return ((idx >> (q - 1 - np.arange(q))) & 1).astype(np.uint8)


_A16 = 1.0 / (3.0 * math.sqrt(2.0))
QPSK = Constellation("QPSK", 2, (BOX_RADIUS, -BOX_RADIUS))
# per-dimension Gray code: 00 -> +a, 01 -> +3a, 10 -> -a, 11 -> -3a
QAM16 = Constellation("16QAM", 4, (_A16, 3 * _A16, -_A16, -3 * _A16))

CONSTELLATIONS = {"qpsk": QPSK, "16qam": QAM16}


def get_constellation(name: str | Constellation) -> Constellation:
    if isinstance(name, Constellation):
        return name
    try:
        return CONSTELLATIONS[name.lower().replace("-", "")]
    except KeyError:
        raise ValueError(f"unknown constellation {name!r}") from None


def map_bits(bits, c: Constellation) -> np.ndarray | complex:
    """Map bit groups (last axis of length Q) to constellation points."""
    b = np.asarray(bits)
    if b.shape[-1:] != (c.bits_per_symbol,):
        raise DimensionError(f"{c.name} needs {c.bits_per_symbol} bits per symbol, got {b.shape}")
    weights = 1 << np.arange(c.bits_per_symbol - 1, -1, -1)
    sym = c.points[(b.astype(np.int64) * weights).sum(axis=-1)]
    return complex(sym) if sym.ndim == 0 else sym


def demap(s, c: Constellation) -> np.ndarray:
    """Nearest-point hard decision; returns bits with a trailing axis of length Q."""
    s = np.asarray(s, dtype=np.complex128)
    d = np.abs(s[..., None] - c.points) ** 2
    return c.bit_patterns()[np.argmin(d, axis=-1)]


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameConfig:
    B: int = 32
    U: int = 8
    K: int = 64
    P: int = 16
    D: int = 48
    constellation: str = "16qam"

    def __post_init__(self):
        if self.K != self.P + self.D:
            raise ValueError(f"K ({self.K}) must equal P + D ({self.P} + {self.D})")
        if not 1 <= self.U <= self.P:
            raise ValueError("need 1 <= U <= P for orthogonal pilots")
        if self.B < self.U:
            raise ValueError("need B >= U")
        get_constellation(self.constellation)

    @property
    def const(self) -> Constellation:
        return get_constellation(self.constellation)

    @property
    def bits_per_block(self) -> int:
        return self.U * self.D * self.const.bits_per_symbol


class JammerKind(str, Enum):
    NONE = "none"
    BARRAGE = "barrage"
    PILOT = "pilot"
    DATA = "data"

    @classmethod
    def parse(cls, text: str) -> "JammerKind":
        t = text.lower().replace("_only", "").replace("-only", "")
        return cls(t)


@dataclass(frozen=True)
class JammerProfile:
    kind: JammerKind = JammerKind.BARRAGE
    power_ratio_db: float = 30.0

    def __post_init__(self):
        if not isinstance(self.kind, JammerKind):
            object.__setattr__(self, "kind", JammerKind.parse(str(self.kind)))

    def mask(self, cfg: FrameConfig) -> np.ndarray:
        m = np.zeros(cfg.K, dtype=bool)
        if self.kind is JammerKind.BARRAGE:
            m[:] = True
        elif self.kind is JammerKind.PILOT:
            m[: cfg.P] = True
        elif self.kind is JammerKind.DATA:
            m[cfg.P:] = True
        return m


def _hadamard(n: int) -> np.ndarray:
    h = np.ones((1, 1))
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


def pilot_matrix(cfg: FrameConfig) -> np.ndarray:
    """U x P unit-modulus pilots with ``Pm @ Pm^H == P * I``.

    Rows of the smallest Hadamard matrix covering U users, tiled along time;
    falls back to DFT rows when P is not a multiple of that order.
    """
    if cfg.U > cfg.P:
        raise ValueError("U > P: orthogonal pilots impossible")
    m = 1 << (cfg.U - 1).bit_length()
    if cfg.P % m == 0:
        return np.tile(_hadamard(m)[: cfg.U], (1, cfg.P // m)).astype(np.complex128)
    k = np.arange(cfg.P)
    return np.exp(-2j * np.pi * np.outer(np.arange(cfg.U), k) / cfg.P)


@dataclass(frozen=True)
class Frame:
    cfg: FrameConfig
    jammer: JammerProfile
    snr_db: float
    seed: int
    H: np.ndarray
    j_true: np.ndarray
    S_true: np.ndarray
    bits_true: np.ndarray
    w_true: np.ndarray
    Y: np.ndarray
    N0: float

    @property
    def Y_pilot(self) -> np.ndarray:
        return self.Y[:, : self.cfg.P]

    @property
    def Y_data(self) -> np.ndarray:
        return self.Y[:, self.cfg.P:]

    @property
    def S_pilot(self) -> np.ndarray:
        return self.S_true[:, : self.cfg.P]


def _crandn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def noise_variance(snr_db: float, es: float) -> float:
    """N0 for per-UE receive SNR ``Es / N0`` (unit-gain channel entries)."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return es / 10.0 ** (snr_db / 10.0)


def generate_frame(cfg: FrameConfig, jam: JammerProfile, snr_db: float, seed: int) -> Frame:
    """Draw one block. Deterministic in ``seed`` (PCG64 stream)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    c = cfg.const
    es = c.energy
    H = _crandn(rng, (cfg.B, cfg.U))
    j_true = _crandn(rng, cfg.B)
    bits = rng.integers(0, 2, size=(cfg.U, cfg.D, c.bits_per_symbol), dtype=np.uint8)
    S = np.concatenate([pilot_matrix(cfg), map_bits(bits, c)], axis=1)
    jam_power = es * 10.0 ** (jam.power_ratio_db / 10.0)
    w = _crandn(rng, cfg.K) * math.sqrt(jam_power)
    w = np.where(jam.mask(cfg), w, 0.0)
    N0 = noise_variance(snr_db, es)
    noise = _crandn(rng, (cfg.B, cfg.K)) * math.sqrt(N0)
    Y = H @ S + np.outer(j_true, w) + noise
    return Frame(cfg, jam, float(snr_db), int(seed), H, j_true, S, bits, w, Y, N0)


# ---------------------------------------------------------------------------
# binary dump: one JSON header line, then little-endian float64 (re, im) pairs
# in column-major order for each complex array, then uint8 bits (column-major).

_COMPLEX_FIELDS = ("Y", "H", "j_true", "S_true", "w_true")


def dump_frame(frame: Frame, path: str | Path) -> None:
    arrays = []
    offset = 0
    blobs = []
    for name in _COMPLEX_FIELDS:
        a = np.asarray(getattr(frame, name), dtype=np.complex128)
        raw = np.asfortranarray(a).ravel(order="F").astype("<c16").tobytes()
        arrays.append({"name": name, "shape": list(a.shape), "dtype": "complex128-le",
                       "order": "F", "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    raw = np.asarray(frame.bits_true, np.uint8).ravel(order="F").tobytes()
    arrays.append({"name": "bits_true", "shape": list(frame.bits_true.shape), "dtype": "uint8",
                   "order": "F", "offset": offset, "nbytes": len(raw)})
    blobs.append(raw)
    header = {
        "format": "sandman-frame/1",
        "B": frame.cfg.B, "U": frame.cfg.U, "K": frame.cfg.K, "P": frame.cfg.P, "D": frame.cfg.D,
        "constellation": frame.cfg.constellation,
        "jammer": frame.jammer.kind.value, "power_ratio_db": frame.jammer.power_ratio_db,
        "snr_db": frame.snr_db if math.isfinite(frame.snr_db) else str(frame.snr_db),
        "N0": frame.N0, "seed": frame.seed, "arrays": arrays,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for b in blobs:
            fh.write(b)


def load_frame(path: str | Path) -> Frame:
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    hdr = json.loads(data[:nl])
    body = data[nl + 1:]
    out = {}
    for spec in hdr["arrays"]:
        chunk = body[spec["offset"]: spec["offset"] + spec["nbytes"]]
        dt = "<c16" if spec["dtype"].startswith("complex") else np.uint8
        out[spec["name"]] = np.frombuffer(chunk, dtype=dt).reshape(spec["shape"], order="F").copy()
    cfg = FrameConfig(hdr["B"], hdr["U"], hdr["K"], hdr["P"], hdr["D"], hdr["constellation"])
    jam = JammerProfile(JammerKind(hdr["jammer"]), hdr["power_ratio_db"])
    return Frame(cfg, jam, float(hdr["snr_db"]), hdr["seed"], out["H"], out["j_true"],
                 out["S_true"], out["bits_true"], out["w_true"], out["Y"], hdr["N0"])
