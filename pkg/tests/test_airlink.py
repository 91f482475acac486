"""Constellations, pilots and frame generation."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sandman_sim.airlink import (
    BOX_RADIUS,
    QAM16,
    QPSK,
    FrameConfig,
    JammerKind,
    JammerProfile,
    demap,
    dump_frame,
    generate_frame,
    load_frame,
    map_bits,
    pilot_matrix,
)
from sandman_sim.numerics import DimensionError

R = 1 / math.sqrt(2)
A = 1 / (3 * math.sqrt(2))


class TestMapping:
    def test_qpsk_examples(self):
        assert map_bits((0, 0), QPSK) == pytest.approx(R + 1j * R)
        assert map_bits((1, 1), QPSK) == pytest.approx(-R - 1j * R)

    def test_qam16_inner_point(self):
        assert map_bits((1, 0, 1, 0), QAM16) == pytest.approx(-A - 1j * A)

    def test_wrong_bit_count(self):
        with pytest.raises(DimensionError):
            map_bits((0, 1, 0), QPSK)

    @pytest.mark.parametrize("c", [QPSK, QAM16])
    def test_demap_inverts_map(self, c):
        bits = c.bit_patterns()
        assert np.array_equal(demap(map_bits(bits, c), c), bits)

    @pytest.mark.parametrize("c", [QPSK, QAM16])
    def test_points_inside_box(self, c):
        assert c.box_radius == BOX_RADIUS
        assert np.all(np.abs(c.points.real) <= BOX_RADIUS + 1e-15)
        assert np.all(np.abs(c.points.imag) <= BOX_RADIUS + 1e-15)

    def test_energies(self):
        assert QPSK.energy == pytest.approx(1.0)
        assert QAM16.energy == pytest.approx(5 / 9)

    @pytest.mark.parametrize("c", [QPSK, QAM16])
    def test_gray_adjacency(self, c):
        pts, bits = c.points, c.bit_patterns()
        step = 2 * A if c is QAM16 else 2 * R
        for i in range(len(pts)):
            for j in range(len(pts)):
                d = pts[j] - pts[i]
                one_dim = (abs(abs(d.real) - step) < 1e-12 and abs(d.imag) < 1e-12) or \
                          (abs(abs(d.imag) - step) < 1e-12 and abs(d.real) < 1e-12)
                if one_dim:
                    assert np.sum(bits[i] != bits[j]) == 1

    @given(st.lists(st.integers(0, 1), min_size=4, max_size=4))
    def test_gray_map_agrees_with_points(self, b):
        assert QAM16.gray_map[tuple(b)] == map_bits(b, QAM16)


class TestPilots:
    def test_orthogonal_default(self):
        Pm = pilot_matrix(FrameConfig())
        assert np.array_equal(Pm @ Pm.conj().T, 16 * np.eye(8))
        assert np.all(np.abs(Pm) == 1)
        assert np.array_equal(Pm[:, :8], Pm[:, 8:])

    def test_single_user(self):
        Pm = pilot_matrix(FrameConfig(B=4, U=1, K=4, P=2, D=2))
        assert np.array_equal(Pm, [[1, 1]])
        assert (Pm @ Pm.conj().T)[0, 0] == 2

    def test_dft_fallback(self):
        Pm = pilot_matrix(FrameConfig(B=4, U=3, K=8, P=6, D=2))
        assert np.allclose(Pm @ Pm.conj().T, 6 * np.eye(3))


class TestFrameConfig:
    @pytest.mark.parametrize("kw", [dict(K=60), dict(U=20, P=16), dict(B=4, U=8),
                                    dict(constellation="8psk")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            FrameConfig(**kw)

    def test_bits_per_block(self):
        assert FrameConfig().bits_per_block == 1536
        assert FrameConfig(constellation="qpsk").bits_per_block == 768


class TestGenerateFrame:
    def test_noiseless_unjammed(self):
        f = generate_frame(FrameConfig(), JammerProfile("none"), math.inf, 3)
        assert np.array_equal(f.Y, f.H @ f.S_true)

    def test_deterministic(self):
        a = generate_frame(FrameConfig(), JammerProfile("barrage"), 5.0, 11)
        b = generate_frame(FrameConfig(), JammerProfile("barrage"), 5.0, 11)
        for name in ("Y", "H", "j_true", "S_true", "bits_true", "w_true"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_pilots_in_frame(self):
        cfg = FrameConfig()
        f = generate_frame(cfg, JammerProfile("none"), 0.0, 1)
        assert np.array_equal(f.S_pilot, pilot_matrix(cfg))

    @pytest.mark.parametrize("kind", list(JammerKind))
    def test_unjammed_columns_have_no_jammer(self, kind):
        cfg = FrameConfig()
        f = generate_frame(cfg, JammerProfile(kind), math.inf, 5)
        mask = JammerProfile(kind).mask(cfg)
        clean = f.Y - f.H @ f.S_true
        assert np.array_equal(clean[:, ~mask], np.zeros((cfg.B, int((~mask).sum()))))
        assert np.count_nonzero(f.w_true[~mask]) == 0
        assert np.all(f.w_true[mask] != 0)

    def test_masks(self):
        cfg = FrameConfig()
        assert JammerProfile("barrage").mask(cfg).all()
        assert JammerProfile("pilot_only").mask(cfg).tolist() == [True] * 16 + [False] * 48
        assert JammerProfile("data").mask(cfg).tolist() == [False] * 16 + [True] * 48
        assert not JammerProfile("none").mask(cfg).any()

    def test_jammer_power_monte_carlo(self):
        cfg = FrameConfig(constellation="16qam")
        powers = []
        for s in range(10_000):
            f = generate_frame(cfg, JammerProfile("barrage", 30.0), math.inf, s)
            col = np.outer(f.j_true, f.w_true)
            powers.append(np.mean(np.abs(col) ** 2))  # per antenna, per symbol
        ue = np.mean(np.abs(QAM16.points) ** 2)  # unit-gain channel: Es per UE
        assert np.mean(powers) == pytest.approx(1000 * ue, rel=0.05)

    def test_noise_level(self):
        cfg = FrameConfig(constellation="qpsk")
        f = generate_frame(cfg, JammerProfile("none"), 10.0, 2)
        noise = f.Y - f.H @ f.S_true
        assert f.N0 == pytest.approx(0.1)
        assert np.mean(np.abs(noise) ** 2) == pytest.approx(0.1, rel=0.1)

    def test_dump_roundtrip(self, tmp_path):
        f = generate_frame(FrameConfig(), JammerProfile("pilot"), 3.0, 9)
        p = tmp_path / "frame.bin"
        dump_frame(f, p)
        g = load_frame(p)
        for name in ("Y", "H", "j_true", "S_true", "bits_true", "w_true"):
            assert np.array_equal(getattr(f, name), getattr(g, name))
        assert (g.snr_db, g.seed, g.N0, g.jammer) == (f.snr_db, f.seed, f.N0, f.jammer)
        header = p.read_bytes().split(b"\n", 1)[0]
        assert b'"seed": 9' in header and b'"B": 32' in header
