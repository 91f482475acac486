"""PE-array kernels, phase program, cycle report and block transparency."""

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sandman_sim.airlink import FrameConfig, JammerProfile, generate_frame
from sandman_sim.numerics import FxMatrix, FxStats, Q, matmul_ref
from sandman_sim.pe_array import (
    ArrayTiming,
    CycleReport,
    PEGrid,
    PhaseProgram,
    cannon_mm,
    cannon_mm_herm,
    mv_broadcast,
    program_for,
    run_block,
    throughput,
)
from sandman_sim.receiver import DetectorConfig, sandman_detect

F = Q(14, 11)
FIXED = DetectorConfig(numeric_mode="fixed")


def rand_fx(rng, shape, fmt=F):
    lim = fmt.max_mant
    return FxMatrix(rng.integers(-lim, lim + 1, shape), rng.integers(-lim, lim + 1, shape), fmt)


def herm(A: FxMatrix) -> FxMatrix:
    return FxMatrix(A.re.T.copy(), -A.im.T, A.fmt)


class TestCannon:
    def test_identity(self):
        A = rand_fx(np.random.default_rng(0), (8, 8))
        P, _ = cannon_mm(A, FxMatrix.from_complex(np.eye(8), F), F)
        assert P.equals(A)

    def test_random_vs_reference(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            A, B = rand_fx(rng, (8, 8)), rand_fx(rng, (8, 8))
            P, _ = cannon_mm(A, B)
            assert P.equals(matmul_ref(A, B))

    def test_hermitian_vs_reference(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            A, B = rand_fx(rng, (8, 8)), rand_fx(rng, (8, 8))
            P, _ = cannon_mm_herm(A, B)
            assert P.equals(matmul_ref(herm(A), B))

    @given(st.integers(0, 2**32 - 1), st.integers(4, 24), st.booleans(), st.booleans())
    def test_bit_equality_property(self, seed, bits, hermitian, narrow_out):
        rng = np.random.default_rng(seed)
        fmt = Q(bits, bits // 2)
        A, B = rand_fx(rng, (8, 8), fmt), rand_fx(rng, (8, 8), fmt)
        out = Q(bits, bits // 2) if narrow_out else None
        s1, s2 = FxStats(), FxStats()
        if hermitian:
            P, _ = cannon_mm_herm(A, B, out, s1)
            ref = matmul_ref(herm(A), B, out, s2)
        else:
            P, _ = cannon_mm(A, B, out, s1)
            ref = matmul_ref(A, B, out, s2)
        assert P.equals(ref) and s1.saturations == s2.saturations

    def test_cycle_formulas(self):
        A = FxMatrix.zeros((8, 8), F)
        assert cannon_mm(A, A)[1] == 7 + 8
        assert cannon_mm_herm(A, A)[1] == 7 + 8 + 7
        t = ArrayTiming(slice_dim=8)
        assert cannon_mm(A, A, timing=t)[1] == 15

    def test_hermitian_never_transposes(self):
        rng = np.random.default_rng(3)
        A, B = rand_fx(rng, (32, 8)), rand_fx(rng, (32, 8))
        g = PEGrid(32)
        g.begin("t", configure=False)
        g.load_a(A.re, A.im)
        own_rows = g.a_row.copy()
        rotate = g._rotate_a
        checked = []

        def watched():
            rotate()
            # every register of PE row p holds an entry of source row p only
            assert np.array_equal(g.a_row, own_rows)
            checked.append(1)

        g._rotate_a = watched
        c_re, c_im = g.cannon_hermitian(g.blocked(B.re).transpose(0, 3, 1, 2),
                                        g.blocked(B.im).transpose(0, 3, 1, 2))
        assert len(checked) == 8
        re, im = g.a_matrix()
        assert np.array_equal(re, A.re) and np.array_equal(im, A.im)
        w = matmul_ref(herm(A), B, Q(48, 22))
        assert np.array_equal(c_re.sum(axis=0)[0], w.re) and np.array_equal(c_im.sum(axis=0)[0], w.im)

    def test_rejects_wrong_shape(self):
        from sandman_sim.numerics import DimensionError
        with pytest.raises(DimensionError):
            cannon_mm(FxMatrix.zeros((4, 4), F), FxMatrix.zeros((4, 4), F))


class TestBroadcast:
    def test_identity_blocks(self):
        rng = np.random.default_rng(4)
        v = rand_fx(rng, (8,))
        eye = FxMatrix.from_complex(np.eye(8), F)
        for d in ("forward", "herm"):
            out, _ = mv_broadcast(eye, v, d, F)
            assert out.equals(v)

    @pytest.mark.parametrize("direction", ["forward", "herm"])
    def test_random_vs_reference(self, direction):
        rng = np.random.default_rng(5)
        vf = Q(24, 18)
        for _ in range(20):
            M = rand_fx(rng, (32, 64))
            if direction == "forward":
                v = rand_fx(rng, (64,), vf)
                ref = matmul_ref(M, FxMatrix(v.re[:, None], v.im[:, None], vf))
            else:
                v = rand_fx(rng, (32,), vf)
                ref = matmul_ref(herm(M), FxMatrix(v.re[:, None], v.im[:, None], vf))
            out, cyc = mv_broadcast(M, v, direction)
            assert np.array_equal(out.re, ref.re[:, 0]) and np.array_equal(out.im, ref.im[:, 0])
            assert cyc == (8 + 3 if direction == "forward" else 8 + 3 + 2)

    def test_zero_vector(self):
        M = rand_fx(np.random.default_rng(6), (32, 64))
        stats = FxStats()
        out, _ = mv_broadcast(M, FxMatrix.zeros(64, F), "forward", F, stats)
        assert not np.any(out.re) and not np.any(out.im) and stats.saturations == 0

    def test_bad_direction(self):
        M = FxMatrix.zeros((8, 8), F)
        with pytest.raises(ValueError):
            mv_broadcast(M, FxMatrix.zeros(8, F), "sideways")


def frames(n):
    mods = ("qpsk", "16qam")
    jams = ("none", "barrage", "pilot", "data")
    for i in range(n):
        mod, jam = mods[i % 2], jams[(i // 2) % 4]
        snr = (-4.0, 2.0, 8.0, 30.0)[(i // 8) % 4]
        yield mod, generate_frame(FrameConfig(constellation=mod), JammerProfile(jam), snr, 1000 + i)


class TestRunBlock:
    def test_transparency(self):
        for i, (mod, f) in enumerate(frames(24)):
            cfg = replace(FIXED, pr_seed=i)
            ref = sandman_detect(f.Y, None, f.S_pilot, cfg, f.cfg.const)
            res, _ = run_block(f.Y, f.S_pilot, cfg, mod)
            assert res.same_as(ref)
            assert res.jammer_nulled == ref.jammer_nulled
            assert res.saturation_count == ref.saturation_count

    @pytest.mark.parametrize("kw", [dict(), dict(t_max=1), dict(t_max=3, power_iter_per_outer=2),
                                    dict(step_size=0.01), dict(power_iter_per_outer=0)])
    def test_cycles_match_closed_form(self, kw):
        f = generate_frame(FrameConfig(), JammerProfile("barrage"), 2.0, 5)
        cfg = replace(FIXED, **kw)
        res, rep = run_block(f.Y, f.S_pilot, cfg, "16qam")
        prog = program_for(32, 8, 64, 16, cfg)
        assert rep.cycles_per_block == prog.cycles_per_block
        assert rep.cycles_per_phase == prog.expected_per_phase()
        assert rep.cycles_per_iteration == prog.cycles_per_iteration
        assert res.same_as(sandman_detect(f.Y, None, f.S_pilot, cfg, f.cfg.const))

    def test_external_channel(self):
        f = generate_frame(FrameConfig(), JammerProfile("data"), 2.0, 6)
        res, rep = run_block(f.Y, f.S_pilot, FIXED, "16qam", H_hat=f.H)
        assert res.same_as(sandman_detect(f.Y, f.H, f.S_pilot, FIXED, f.cfg.const))
        assert rep.cycles_per_block == program_for(32, 8, 64, 16, FIXED, with_chest=False).cycles_per_block

    def test_phase_schedule(self):
        f = generate_frame(FrameConfig(), JammerProfile("barrage"), 2.0, 7)
        _, rep = run_block(f.Y, f.S_pilot, FIXED, "16qam")
        assert rep.phase_calls["2"] == 1
        for tag in ("1", "3", "4", "5", "6", "tau", "7", "8"):
            assert rep.phase_calls[tag] == FIXED.t_max
        assert rep.bits_per_block == 1536
        assert 0 < rep.pe_utilization <= 1
        assert rep.cannon_utilization == 1.0
        assert rep.cycles_per_block == sum(rep.cycles_per_phase.values())

    def test_requires_fixed_mode(self):
        f = generate_frame(FrameConfig(), JammerProfile("none"), 2.0, 1)
        with pytest.raises(ValueError):
            run_block(f.Y, f.S_pilot, DetectorConfig(), "16qam")

    def test_rejects_unsupported_shape(self):
        from sandman_sim.numerics import DimensionError
        cfg = FrameConfig(B=32, U=4, K=64, P=16, D=48)
        f = generate_frame(cfg, JammerProfile("none"), 2.0, 1)
        with pytest.raises(DimensionError):
            run_block(f.Y, f.S_pilot, FIXED, "16qam")

    def test_tmax_monotone(self):
        f = generate_frame(FrameConfig(), JammerProfile("none"), 2.0, 1)
        a = run_block(f.Y, f.S_pilot, replace(FIXED, t_max=1), "16qam")[1]
        b = run_block(f.Y, f.S_pilot, FIXED, "16qam")[1]
        assert a.cycles_per_block < b.cycles_per_block


class TestProgram:
    def test_block_formula(self):
        p = PhaseProgram.build(32, 8, 64, 16, t_max=10)
        once = sum(ph.cost for ph in p.phases if ph.once)
        assert p.cycles_per_block == once + 10 * p.cycles_per_iteration
        assert [ph.tag for ph in p.phases if not ph.once] == ["1", "3", "4", "5", "6", "tau", "7", "8"]
        assert p["2"].once and not p["1"].once
        assert p["7"].mode_map == {"grid": "mac", "adders": "col_adder"}

    def test_default_near_target(self):
        p = PhaseProgram.build(32, 8, 64, 16, t_max=10)
        assert abs(p.cycles_per_block - 1841) <= 0.2 * 1841

    def test_timing_validation(self):
        with pytest.raises(ValueError):
            ArrayTiming(config_cycles=-1)
        with pytest.raises(ValueError):
            ArrayTiming(pe_plus_lanes=0)


class TestThroughput:
    def report(self, cycles, bits=1536):
        return CycleReport({"x": cycles}, cycles, cycles, 0.5, bits)

    def test_reference_arithmetic(self):
        assert throughput(self.report(1841), 320e6) / 1e6 == pytest.approx(267.0, abs=0.2)

    def test_zero_clock(self):
        assert throughput(self.report(1841), 0.0) == 0.0

    def test_linear_in_clock(self):
        r = self.report(2000)
        assert throughput(r, 640e6) == pytest.approx(2 * throughput(r, 320e6))

    def test_nonpositive_cycles(self):
        with pytest.raises(ValueError):
            throughput(CycleReport({}, 0, 0, 0.5, 1536), 1e6)

    def test_utilization_bounds(self):
        with pytest.raises(ValueError):
            CycleReport({}, 1, 1, 0.0, 1)

    def test_serialization(self):
        f = generate_frame(FrameConfig(), JammerProfile("barrage"), 2.0, 7)
        _, rep = run_block(f.Y, f.S_pilot, FIXED, "16qam")
        assert len(rep.csv_header()) == len(rep.csv_row())
        assert "phase_tau" in rep.csv_header()
        text = rep.table(320e6)
        assert "bits_per_block = 1536" in text and "Mb/s" in text
        assert math.isclose(throughput(rep, 320e6), 1536 * 320e6 / rep.cycles_per_block)
