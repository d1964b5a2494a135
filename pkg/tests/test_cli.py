import json
from pathlib import Path

import pytest

from kinrev.cli import main, parse_config, read_trajectory_csv


def write_config(tmp_path: Path, **overrides) -> Path:
    cfg = {
        "kernel": {"family": "gaussian_flux", "alpha": 1.0, "beta": 0.5, "dim": 1},
        "body": {"dim": 1, "radius": 1.0, "E": 0.0, "gamma": 0.05},
        "solver": {"n_steps": 800, "t_max": 6.0, "depth_n": 1},
        "mc": {"n_particles": 4000, "t_max": 0.5, "dt_sub": 0.002, "replicas": 2},
        "sweep": {"beta": [0.5, 1.5], "v_inf": [0.0]},
        "output_dir": str(tmp_path / "out"),
        "seed": 42,
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestParseConfig:
    def test_minimal_fills_defaults(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"kernel": {"family": "gaussian_flux"}}))
        cfg = parse_config(str(path))
        assert cfg.solver.depth_n == 2
        assert cfg.mc.replicas == 16
        assert cfg.output_dir == "."

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"kernel": {"family": "gaussian_flux"},
                                    "kernell": {}}))
        with pytest.raises(ValueError, match="kernell"):
            parse_config(str(path))

    def test_nested_unknown_key_named(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"kernel": {"family": "gaussian_flux",
                                               "alpa": 2.0}}))
        with pytest.raises(ValueError, match="alpa"):
            parse_config(str(path))

    def test_gamma_range_error(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"kernel": {"family": "gaussian_flux"},
                                    "body": {"gamma": 1.5}}))
        with pytest.raises(ValueError, match="gamma"):
            parse_config(str(path))

    def test_seed_flows_to_mc(self, tmp_path):
        path = write_config(tmp_path, seed=777)
        cfg = parse_config(str(path))
        assert cfg.mc.seed == 777


class TestExitCodes:
    def test_config_error_is_one(self, tmp_path, capsys):
        assert main(["criterion", "--config", str(tmp_path / "nope.json")]) == 1

    def test_mc_zero_particles_is_one(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["mc", "--config", str(path), "--particles", "0"]) == 1

    def test_marginal_criterion_prints_and_succeeds(self, tmp_path, capsys):
        path = write_config(tmp_path,
                            kernel={"family": "gaussian_flux", "alpha": 1.0,
                                    "beta": 1.0, "dim": 1})
        assert main(["criterion", "--config", str(path), "--v-inf", "0.0"]) == 0
        assert "Marginal" in capsys.readouterr().out

    @pytest.mark.filterwarnings("ignore:iterate left the candidate-motion")
    def test_non_convergence_is_two(self, tmp_path, capsys):
        path = write_config(tmp_path,
                            solver={"n_steps": 200, "t_max": 2.0, "depth_n": 1,
                                    "max_iter": 1, "fp_tol": 1e-16})
        assert main(["solve", "--config", str(path)]) == 2
        assert "non-convergence" in capsys.readouterr().err

    def test_left_side_criterion(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert main(["criterion", "--config", str(path), "--v-inf", "0.5",
                     "--side", "left"]) == 0
        rows = (tmp_path / "out" / "criterion.csv").read_text().splitlines()
        assert ",left," in rows[1]


class TestSubcommands:
    def test_solve_writes_trajectory(self, tmp_path, capsys):
        path = write_config(tmp_path)
        code = main(["solve", "--config", str(path)])
        assert code == 0
        out = tmp_path / "out" / "trajectory.csv"
        cols = read_trajectory_csv(str(out))
        assert set(cols) == {"t", "V", "V_minus_Vinf", "R_W", "r_L", "r_R",
                             "class_envelope_lo", "class_envelope_hi"}
        assert cols["t"].size == 801
        assert cols["V"][0] == pytest.approx(0.05)

    def test_criterion_csv(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["criterion", "--config", str(path), "--v-inf", "0.0"]) == 0
        rows = (tmp_path / "out" / "criterion.csv").read_text().strip().splitlines()
        assert rows[0] == "v_inf,side,integral,threshold,margin,class"
        assert rows[1].endswith("Reversal")

    def test_validate_kernel_csv(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["validate-kernel", "--config", str(path)]) == 0
        rows = (tmp_path / "out" / "kernel_validation.csv").read_text().splitlines()
        assert rows[0] == "u,integral,target,abs_error"
        assert len(rows) == 9

    def test_equilibrium_row(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert main(["equilibrium", "--config", str(path)]) == 0
        rows = (tmp_path / "out" / "equilibrium.csv").read_text().splitlines()
        assert rows[0] == "v_inf,B0,B_inf,t0"

    def test_fit_roundtrip(self, tmp_path):
        # irreversal config: V - v_inf keeps one sign on any window
        path = write_config(tmp_path,
                            kernel={"family": "gaussian_flux", "alpha": 1.0,
                                    "beta": 2.0, "dim": 1})
        main(["solve", "--config", str(path)])
        traj = str(tmp_path / "out" / "trajectory.csv")
        fit_out = str(tmp_path / "out" / "fit.csv")
        code = main(["fit", traj, "--v-inf", "0.0", "--t-lo", "1.0",
                     "--t-hi", "5.5", "--expected", "-2",
                     "--output", fit_out])
        assert code == 0
        rows = Path(fit_out).read_text().splitlines()
        assert rows[0] == "slope,r2,expected,t_cross,n_crossings"

    def test_mc_and_compare(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["solve", "--config", str(path)]) == 0
        assert main(["mc", "--config", str(path)]) == 0
        det = str(tmp_path / "out" / "trajectory.csv")
        mcf = str(tmp_path / "out" / "mc.csv")
        assert main(["compare", det, mcf, "--config", str(path)]) == 0
        rows = (tmp_path / "out" / "compare.csv").read_text().splitlines()
        assert rows[0].startswith("max_abs_z")


class TestReproducibility:
    def test_sweep_bytes_identical_across_jobs(self, tmp_path):
        path = write_config(tmp_path)
        main(["sweep", "--config", str(path), "--jobs", "1"])
        first = (tmp_path / "out" / "sweep.csv").read_bytes()
        main(["sweep", "--config", str(path), "--jobs", "2"])
        second = (tmp_path / "out" / "sweep.csv").read_bytes()
        assert first == second

    def test_mc_bytes_identical_across_jobs(self, tmp_path):
        path = write_config(tmp_path)
        main(["mc", "--config", str(path), "--jobs", "1"])
        first = (tmp_path / "out" / "mc.csv").read_bytes()
        main(["mc", "--config", str(path), "--jobs", "2"])
        second = (tmp_path / "out" / "mc.csv").read_bytes()
        assert first == second

    def test_solve_bytes_identical_on_rerun(self, tmp_path):
        path = write_config(tmp_path)
        main(["solve", "--config", str(path), "--jobs", "1"])
        first = (tmp_path / "out" / "trajectory.csv").read_bytes()
        main(["solve", "--config", str(path), "--jobs", "8"])
        second = (tmp_path / "out" / "trajectory.csv").read_bytes()
        assert first == second

    def test_static_mc_subcommand(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert main(["mc", "--config", str(path), "--static-w", "0.3",
                     "--particles", "2000"]) == 0
        assert (tmp_path / "out" / "mc_static.csv").exists()
