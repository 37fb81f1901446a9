import json

import numpy as np
import pandas as pd

from conftest import two_spin_singlet_projector
from main import main
from src.commands import check_residuals
from src.data.config import parse_config

FOUR_LEVEL_H = [
    [0.5, 0.0, 0.0, 0.0],
    [0.0, -0.3, 0.2, 0.0],
    [0.0, 0.2, 0.3, 0.0],
    [0.0, 0.0, 0.0, -0.5],
]


def _write_config(tmp_path, **extra):
    raw = {
        "schema": 1,
        "system": {"two_level": {"omega": 1.0}},
        "rates": {"k_s": 1.0, "k_t": 1.0},
        "times": {"start": 0.0, "stop": 5.0, "count": 51},
        "output": {"directory": str(tmp_path / "out"), "prefix": "run"},
    }
    raw.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


def _run(*argv):
    return main([*argv, "--quiet"])


def _outputs(tmp_path):
    out = tmp_path / "out"
    return sorted(p.name for p in out.iterdir()) if out.exists() else []


class TestEvolve:
    def test_writes_both_approaches(self, tmp_path):
        assert _run("evolve", "--config", str(_write_config(tmp_path))) == 0
        assert _outputs(tmp_path) == ["run_config.json", "run_haberkorn.csv", "run_measurement.csv"]
        text = (tmp_path / "out" / "run_haberkorn.csv").read_text(encoding="utf-8")
        assert text.splitlines()[0] == "t,pop_s,pop_t,yield_s,yield_t,trace,coherence_st"
        assert "\r" not in text

    def test_rotation_oracle(self, tmp_path):
        config = _write_config(
            tmp_path,
            rates={"k_s": 0.0, "k_t": 0.0},
            times={"start": 0.0, "stop": 2 * np.pi, "count": 63},
            approach="haberkorn",
        )
        assert _run("evolve", "--config", str(config)) == 0
        frame = pd.read_csv(tmp_path / "out" / "run_haberkorn.csv")
        np.testing.assert_allclose(frame["pop_s"], np.cos(frame["t"]) ** 2, atol=1e-9)

    def test_rows_conserve_probability(self, tmp_path):
        config = _write_config(tmp_path, rates={"k_s": 0.7, "k_t": 1.9})
        assert _run("evolve", "--config", str(config)) == 0
        for name in ("run_haberkorn.csv", "run_measurement.csv"):
            frame = pd.read_csv(tmp_path / "out" / name)
            total = frame["pop_s"] + frame["pop_t"] + frame["yield_s"] + frame["yield_t"]
            np.testing.assert_allclose(total, 1.0, atol=1e-8)

    def test_out_flag_overrides_directory(self, tmp_path):
        other = tmp_path / "other"
        assert _run("evolve", "--config", str(_write_config(tmp_path)), "--out", str(other)) == 0
        assert (other / "run_measurement.csv").exists()
        assert _outputs(tmp_path) == []

    def test_negative_rate_exit_2(self, tmp_path):
        config = _write_config(tmp_path, rates={"k_s": 0.0, "k_t": -1.0})
        assert _run("evolve", "--config", str(config)) == 2
        assert _outputs(tmp_path) == []

    def test_invalid_rho0_exit_3(self, tmp_path):
        config = _write_config(tmp_path, rho0=[[0.6, 0.0], [0.0, 0.6]])
        assert _run("evolve", "--config", str(config)) == 3
        assert _outputs(tmp_path) == []

    def test_unwritable_output_exit_4(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x", encoding="utf-8")
        config = _write_config(tmp_path, output={"directory": str(blocker / "sub")})
        assert _run("evolve", "--config", str(config)) == 4

    def test_effective_config_reproduces_outputs(self, tmp_path):
        assert _run("evolve", "--config", str(_write_config(tmp_path))) == 0
        first = (tmp_path / "out" / "run_measurement.csv").read_bytes()
        echoed = tmp_path / "out" / "run_config.json"
        assert _run("evolve", "--config", str(echoed), "--out", str(tmp_path / "again")) == 0
        assert (tmp_path / "again" / "run_measurement.csv").read_bytes() == first


class TestCompare:
    def test_h_zero_populations_identical(self, tmp_path):
        config = _write_config(
            tmp_path,
            system={"two_level": {"omega": 0.0}},
            rates={"k_s": 1.0, "k_t": 2.0},
            rho0=[[0.5, 0.5], [0.5, 0.5]],
        )
        assert _run("compare", "--config", str(config)) == 0
        report = json.loads((tmp_path / "out" / "run_report.json").read_text(encoding="utf-8"))
        assert report["max_abs_pop_diff"] <= 1e-10
        assert report["max_abs_coherence_diff"] > 0.1
        assert report["eq18_residual"] <= 1e-10
        assert set(report["yields"]) == {"haberkorn", "measurement"}

    def test_equal_rates_differ(self, tmp_path):
        assert _run("compare", "--config", str(_write_config(tmp_path, approach="haberkorn"))) == 0
        report = json.loads((tmp_path / "out" / "run_report.json").read_text(encoding="utf-8"))
        assert report["max_abs_pop_diff"] > 1e-3
        assert report["trace_defect_max"] <= 1e-8
        frame = pd.read_csv(tmp_path / "out" / "run_haberkorn.csv")
        np.testing.assert_allclose(frame["pop_s"], np.exp(-frame["t"]) * np.cos(frame["t"]) ** 2, atol=1e-9)

    def test_excel_workbook(self, tmp_path):
        assert _run("compare", "--config", str(_write_config(tmp_path)), "--excel") == 0
        sheets = pd.read_excel(tmp_path / "out" / "run_compare.xlsx", sheet_name=None)
        assert set(sheets) == {"haberkorn", "measurement", "report"}
        assert len(sheets["haberkorn"]) == 51


class TestSweep:
    def test_outputs(self, tmp_path):
        config = _write_config(
            tmp_path,
            rates={"k_s": 0.5, "k_t": 0.0},
            sweep={"log10_kt_min": 0.0, "log10_kt_max": 2.0, "kt_count": 3, "include_zero": True, "t_count": 41},
        )
        assert _run("sweep", "--config", str(config)) == 0
        assert _outputs(tmp_path) == [
            "run_config.json",
            "run_sweep_haberkorn.csv",
            "run_sweep_measurement.csv",
            "run_sweep_rates.csv",
        ]
        surface = pd.read_csv(tmp_path / "out" / "run_sweep_measurement.csv")
        assert list(surface.columns) == ["log10_kt_over_omega", "t_omega", "pop_s", "approach"]
        assert len(surface) == 4 * 41
        rates = pd.read_csv(tmp_path / "out" / "run_sweep_rates.csv")
        assert {"rate", "r_squared", "predicted_rate"} <= set(rates.columns)
        # no fit row for k_T = 0
        assert np.all(np.isfinite(rates["log10_kt_over_omega"]))

    def test_needs_two_level(self, tmp_path):
        config = _write_config(
            tmp_path,
            system={"explicit": {"hamiltonian": FOUR_LEVEL_H, "q_singlet": two_spin_singlet_projector().real.tolist()}},
        )
        assert _run("sweep", "--config", str(config)) == 2


class TestTrajectories:
    TRAJ = {"dt": 0.005, "t_max": 1.0, "n_traj": 400, "seed": 11, "n_out": 11}

    def test_missing_block_exit_2(self, tmp_path):
        assert _run("trajectories", "--config", str(_write_config(tmp_path))) == 2
        assert _outputs(tmp_path) == []

    def test_byte_identical_reruns(self, tmp_path):
        config = _write_config(tmp_path, trajectory=self.TRAJ, approach="measurement")
        assert _run("trajectories", "--config", str(config)) == 0
        first = {name: (tmp_path / "out" / name).read_bytes() for name in _outputs(tmp_path)}
        assert _run("trajectories", "--config", str(config)) == 0
        second = {name: (tmp_path / "out" / name).read_bytes() for name in _outputs(tmp_path)}
        assert first == second
        assert "run_traj_measurement.csv" in first
        assert "run_traj_measurement_histogram.csv" in first
        header = first["run_traj_measurement.csv"].decode().splitlines()[0]
        assert header == "t,surviving_fraction,pop_s_est,pop_s_stderr,pop_t_est,pop_t_stderr"

    def test_summary(self, tmp_path):
        config = _write_config(tmp_path, trajectory=self.TRAJ, approach="haberkorn")
        assert _run("trajectories", "--config", str(config)) == 0
        summary = json.loads((tmp_path / "out" / "run_traj_haberkorn_summary.json").read_text(encoding="utf-8"))
        assert summary["n_traj"] == 400
        assert summary["n_singlet"] + summary["n_triplet"] + summary["n_surviving"] == 400
        assert 0.0 <= summary["oracle_agreement"] <= 1.0

    def test_single_trajectory_has_empty_stderr(self, tmp_path):
        config = _write_config(tmp_path, trajectory={**self.TRAJ, "n_traj": 1}, approach="measurement")
        assert _run("trajectories", "--config", str(config)) == 0
        frame = pd.read_csv(tmp_path / "out" / "run_traj_measurement.csv")
        assert frame["pop_s_stderr"].isna().all()

    def test_unstable_dt_exit_3(self, tmp_path):
        config = _write_config(tmp_path, trajectory={**self.TRAJ, "dt": 0.5})
        assert _run("trajectories", "--config", str(config)) == 3
        assert _outputs(tmp_path) == []


class TestCheck:
    def test_two_level(self, tmp_path, capsys):
        assert _run("check", "--config", str(_write_config(tmp_path))) == 0
        out = capsys.readouterr().out
        assert "decoherence_gap" in out
        assert "FAIL" not in out

    def test_residuals_tiny(self):
        cfg = parse_config({"schema": 1, "system": {"two_level": {"omega": 1.0}}, "rates": {"k_s": 2.0, "k_t": 0.3}})
        residuals = check_residuals(cfg)
        assert max(residuals.values()) <= 1e-12

    def test_four_level(self, tmp_path):
        config = _write_config(
            tmp_path,
            system={"explicit": {"hamiltonian": FOUR_LEVEL_H, "q_singlet": two_spin_singlet_projector().real.tolist()}},
        )
        cfg = parse_config(json.loads(config.read_text(encoding="utf-8")))
        assert check_residuals(cfg)["decoherence_gap"] <= 1e-10
        assert _run("check", "--config", str(config)) == 0

    def test_bad_projector_exit_3(self, tmp_path):
        config = _write_config(
            tmp_path,
            system={"explicit": {"hamiltonian": [[0, 1], [1, 0]], "q_singlet": [[1.001, 0], [0, 0]]}},
        )
        assert _run("check", "--config", str(config)) == 3
