import json
from pathlib import Path

import pytest

from parity_qst.cli import main
from parity_qst.config import MANIFEST_NAME, RunManifest
from parity_qst.io import read_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


class TestSpectrum:
    def test_sweep_rows_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "s"
        code, stdout, _ = run(capsys, "spectrum", "--config", CONFIGS / "spectrum_rabi.toml",
                              "--sweep", "g:0:1:200", "--out", out, "--plot")
        assert code == 0 and "rows=1600" in stdout
        rows = read_csv(out / "spectrum.csv")
        assert list(rows[0]) == ["g", "level_index", "freq", "parity", "dark"]
        for k in range(8):
            assert sum(r["level_index"] == str(k) for r in rows) == 200
        man = RunManifest.read(out)
        assert set(man.outputs) == {"spectrum.csv", "spectrum.svg", "spectrum_report.json"}
        assert all((out / f).is_file() for f in man.outputs)

    def test_deterministic_and_force(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ("spectrum", "--config", CONFIGS / "spectrum_rabi.toml", "--sweep", "g:0:0.5:7")
        assert run(capsys, *args, "--out", a)[0] == 0
        assert run(capsys, *args, "--out", b)[0] == 0
        assert (a / "spectrum.csv").read_bytes() == (b / "spectrum.csv").read_bytes()
        code, _, err = run(capsys, *args, "--out", a)
        assert code == 2 and "--force" in err
        assert run(capsys, *args, "--out", a, "--force")[0] == 0

    def test_dicke_routing(self, tmp_path, capsys):
        out = tmp_path / "d"
        code, _, _ = run(capsys, "spectrum", "--config", CONFIGS / "spectrum_dicke.toml",
                         "--sweep", "g:0:0.4:3", "--out", out)
        assert code == 0
        rep = json.loads((out / "spectrum_report.json").read_text())
        assert rep["dark_rows"] > 0 and rep["dark_fractional_offsets"] == [0.0]
        assert RunManifest.read(out).config["model"]["mediator"] == "dicke"

    def test_negative_sweep_point(self, tmp_path, capsys):
        out = tmp_path / "n"
        code, _, err = run(capsys, "spectrum", "--sweep", "g:-0.2:0.2:3", "--out", out)
        assert code == 3 and "-0.2" in err
        assert not out.exists()


class TestErrors:
    def test_malformed_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[model\n")
        out = tmp_path / "o"
        code, _, err = run(capsys, "qst", "--config", bad, "--out", out)
        assert code == 2 and "config error" in err
        assert not out.exists()

    def test_unknown_key(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[model]\ncolour = 1\n")
        assert run(capsys, "check", "--config", bad, "--out", tmp_path / "o")[0] == 2

    def test_threads(self, tmp_path, capsys):
        assert run(capsys, "check", "--threads", "0", "--out", tmp_path / "o")[0] == 2

    def test_resonant_site(self, tmp_path, capsys):
        cfg = tmp_path / "r.toml"
        cfg.write_text("[model]\nomega_ext = [0.52455, 0.52455]\nn_fock = 12\n[transfer]\nn_times = 50\n")
        code, _, err = run(capsys, "transfer", "--config", cfg, "--out", tmp_path / "o", "--effective-only")
        assert code == 3 and "numerical error" in err


class TestCheck:
    def test_small_fock_fails(self, tmp_path, capsys):
        code, stdout, _ = run(capsys, "check", "--config", CONFIGS / "check_small_fock.toml", "--out", tmp_path / "o")
        assert code == 1 and "fock_convergence: FAIL" in stdout

    def test_lossless_note(self, tmp_path, capsys):
        out = tmp_path / "o"
        code, stdout, _ = run(capsys, "check", "--config", CONFIGS / "check_lossless.toml", "--out", out)
        assert code == 0
        assert "dressed_rates: 0 channels (none: kappa = gamma = 0)" in stdout
        rep = json.loads((out / "check_report.json").read_text())
        assert rep["passed"] and rep["selection_rules"]["status"] == "PASS"


class TestRuns:
    def test_transfer_effective_only(self, tmp_path, capsys):
        out = tmp_path / "t"
        code, stdout, _ = run(capsys, "transfer", "--config", CONFIGS / "transfer.toml", "--effective-only",
                              "--out", out)
        assert code == 0 and "half_period_omega_cav" in stdout
        files = {p.name for p in out.iterdir()}
        assert files == {"transfer_effective.csv", "transfer_report.json", MANIFEST_NAME}
        rep = json.loads((out / "transfer_report.json").read_text())
        assert rep["splitting_closed_form"] > 0

    def test_qst_unitary(self, tmp_path, capsys):
        out = tmp_path / "q"
        code, stdout, _ = run(capsys, "qst", "--config", CONFIGS / "qst_unitary.toml", "--samples", "50",
                              "--out", out)
        assert code == 0 and "F_peak=" in stdout
        rep = json.loads((out / "qst_report.json").read_text())
        assert rep["samples"] == 50 and rep["F_peak"] > 0.99
        assert len(read_csv(out / "qst_samples.csv")) == 50
