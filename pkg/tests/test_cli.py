"""Command-line interface."""

import re

import pytest

from sandman_sim import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestConfig:
    def test_parse_and_defaults(self):
        vals = cli.parse_config("snr = -2:2:1  # range\nmod=qpsk\n\nplot = false\n")
        cfg = cli.RunConfig(**vals)
        assert cfg.snr_points() == (-2.0, -1.0, 0.0, 1.0, 2.0)
        assert cfg.plot is False
        assert cfg.sweep_spec().constellations == ("qpsk",)

    def test_unknown_key(self):
        with pytest.raises(cli.ConfigError, match=r"cfg:2: unknown key 'colour'"):
            cli.parse_config("tmax = 3\ncolour = red\n", "cfg")

    def test_bad_value(self):
        with pytest.raises(cli.ConfigError, match=r"x:1: bad value for 'tmax'"):
            cli.parse_config("tmax = many", "x")

    def test_detector_alias(self):
        cfg = cli.RunConfig(detector="sandman,lmmse", numeric="fixed")
        assert cfg.detectors() == ("sandman_fixed", "lmmse")

    def test_dump_lists_every_key(self):
        text = cli.RunConfig().dump()
        assert len(text.splitlines()) == len(cli._TYPES)
        assert cli.RunConfig(**cli.parse_config(text)) == cli.RunConfig()


class TestSweep:
    def test_minimal(self, tmp_path, capsys):
        cfgf = tmp_path / "c.cfg"
        cfgf.write_text("max_frames = 16\nsnr = 0\n")
        code, out, _ = run(capsys, "sweep", "--config", str(cfgf), "--out-dir", str(tmp_path / "o"))
        assert code == 0
        lines = (tmp_path / "o" / "results.csv").read_text().splitlines()
        assert lines[0].startswith("# schema:") and lines[1].startswith("constellation,jammer")
        assert (tmp_path / "o" / "config.txt").read_text() == cfgf.read_text()
        assert (tmp_path / "o" / "ber.svg").read_text().startswith("<svg")

    def test_seed_reproducible(self, tmp_path, capsys, monkeypatch):
        args = ["sweep", "--seed", "7", "--snr=-6,-4", "--mod", "qpsk", "--jammer", "pilot",
                "--detector", "sandman,lmmse", "--tmax", "4"]
        assert run(capsys, *args, "--out-dir", str(tmp_path / "a"))[0] == 0
        monkeypatch.setenv("SANDMAN_SIM_THREADS", "1")
        assert run(capsys, *args, "--out-dir", str(tmp_path / "b"))[0] == 0
        assert (tmp_path / "a" / "results.csv").read_bytes() == \
               (tmp_path / "b" / "results.csv").read_bytes()

    def test_bad_key_exit_2(self, tmp_path, capsys):
        cfgf = tmp_path / "c.cfg"
        cfgf.write_text("snr = 0\nbogus_key = 1\n")
        code, _, err = run(capsys, "sweep", "--config", str(cfgf))
        assert code == 2 and "bogus_key" in err and ":2:" in err

    def test_bad_jammer_in_file(self, tmp_path, capsys):
        cfgf = tmp_path / "c.cfg"
        cfgf.write_text("jammer = laser\n")
        assert run(capsys, "sweep", "--config", str(cfgf))[0] == 2

    def test_detector_failure_exit_3(self, tmp_path, capsys, monkeypatch):
        from sandman_sim import harness

        def boom(*a, **k):
            raise ArithmeticError("overflow")

        monkeypatch.setattr(harness, "run_detector", boom)
        monkeypatch.setenv("SANDMAN_SIM_THREADS", "1")
        code, out, _ = run(capsys, "sweep", "--snr", "0", "--out-dir", str(tmp_path))
        assert code == 3 and "FAILED" in out
        assert (tmp_path / "results.csv").exists()


class TestCycles:
    def cycles(self, capsys, *extra):
        code, out, _ = run(capsys, "cycles", *extra)
        assert code == 0
        return out

    def test_default(self, capsys):
        out = self.cycles(capsys)
        assert "bits_per_block = 1536" in out
        mbps = float(re.search(r"throughput = ([\d.]+) Mb/s", out).group(1))
        assert 222 <= mbps <= 334

    def test_tmax_monotone(self, capsys):
        get = lambda o: int(re.search(r"^cycles_per_block = (\d+)", o, re.M).group(1))  # noqa: E731
        assert get(self.cycles(capsys, "--tmax", "1")) < get(self.cycles(capsys, "--tmax", "10"))

    def test_clock(self, capsys):
        a = float(re.search(r"throughput = ([\d.]+)", self.cycles(capsys)).group(1))
        b = float(re.search(r"throughput = ([\d.]+)",
                            self.cycles(capsys, "--clock-mhz", "640")).group(1))
        assert b == pytest.approx(2 * a, abs=0.02)
