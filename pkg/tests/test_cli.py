"""CLI tasks: file contracts, determinism, exit codes, figures."""

import json

import pytest
from click.testing import CliRunner

from passim.cli import main, run, solve_count_report


def base_config(task, out_dir, n=8, extent=1.0, J=4, **task_extra):
    return {
        "model": {
            "kind": "abc",
            "grid": {"dim": 2, "n_per_axis": n, "extent": extent},
            "params": {
                "a": {"profile": "constant", "value": 1.0},
                "c": {
                    "profile": "gaussian-bump",
                    "center": [extent / 2, extent / 2],
                    "width": 0.15 * extent,
                    "amplitude": 0.4,
                },
                "a_lower": 1.0,
            },
        },
        "source": {"kind": "white", "sigma": 1.0, "J": J, "seed": 7},
        "task": {"name": task, **task_extra},
        "output_dir": str(out_dir),
    }


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=1))
    return path


class TestForwardTask:
    def test_file_count_contract(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, base_config("forward", out, J=8))
        assert run(cfg) == 0
        states = sorted(out.glob("state_*.bin"))
        assert len(states) == 8
        assert (out / "covariance.bin").exists()
        assert (out / "covariance.json").exists()
        assert (out / "manifest.json").exists()
        assert (out / "forward_metrics.csv").exists()
        assert (out / "covariance.png").stat().st_size > 0

    def test_metrics_deterministic(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        cfg1 = write_config(tmp_path, base_config("forward", out1), "c1.json")
        cfg2 = write_config(tmp_path, base_config("forward", out2), "c2.json")
        assert run(cfg1) == 0
        assert run(cfg2) == 0
        assert (out1 / "forward_metrics.csv").read_bytes() == (out2 / "forward_metrics.csv").read_bytes()
        assert (out1 / "covariance.bin").read_bytes() == (out2 / "covariance.bin").read_bytes()

    def test_seed_override_changes_data(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        cfg = write_config(tmp_path, base_config("forward", out1))
        assert run(cfg, output=out1, seed=7) == 0
        assert run(cfg, output=out2, seed=8) == 0
        assert (out1 / "covariance.bin").read_bytes() != (out2 / "covariance.bin").read_bytes()

    def test_manifest_keys(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, base_config("forward", out))
        run(cfg)
        manifest = json.loads((out / "manifest.json").read_text())
        for key in ("config_sha256", "tool_version", "grid", "solver", "seeds", "total_solves", "wall_time_s"):
            assert key in manifest
        assert manifest["total_solves"] > 0
        assert len(manifest["config_sha256"]) == 64


class TestAdjointTestTask:
    def test_passes_on_12x12(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(
            tmp_path, base_config("adjoint-test", out, n=12, J=4, pairs=6, tolerance=1e-8)
        )
        assert run(cfg) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["summary"]["max_rel_error"] <= 1e-8
        lines = (out / "adjoint_metrics.csv").read_text().splitlines()
        assert lines[0] == "pair,lhs,rhs,rel_error"
        assert len(lines) == 7
        assert (out / "adjoint_errors.png").stat().st_size > 0

    def test_solve_count_report(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, base_config("adjoint-test", out, n=6, J=3, pairs=2))
        assert run(cfg) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        counts = manifest["summary"]["backprop_solves"]
        n_total = 36
        assert counts["extended"] == n_total
        assert counts["baseline"] == 2 * n_total
        report = solve_count_report(out / "manifest.json")
        assert "ratio=0.5" in report

    def test_report_requires_baseline(self, tmp_path):
        with pytest.raises(ValueError):
            solve_count_report({"summary": {}})

    def test_lowrank_ratio_arithmetic(self):
        report = solve_count_report(
            {"summary": {"backprop_solves": {"extended": 4, "baseline": 72, "route": "lowrank"}}}
        )
        assert "ratio=0.0555556" in report


class TestTccScanTask:
    def test_scan_passes_and_writes_csv(self, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(
            "tcc-scan", out, n=10, J=4,
            direction={"profile": "gaussian-bump", "center": [0.5, 0.5], "width": 0.2, "amplitude": 1.0},
            t_max=0.1, t_min=0.001, num_points=5,
        )
        cfg["model"]["params"]["c"] = {"profile": "constant", "value": 0.0}
        path = write_config(tmp_path, cfg)
        assert run(path) == 0
        lines = (out / "tcc_scan.csv").read_text().splitlines()
        assert lines[0] == "t,E_lin,image_diff,cross_term,bound_ratio"
        assert len(lines) == 6
        manifest = json.loads((out / "manifest.json").read_text())
        assert 1.9 <= manifest["summary"]["slopes"]["e_lin"] <= 2.1
        assert (out / "tcc_scan.png").stat().st_size > 0


class TestReconstructTask:
    def test_noiseless_reconstruction(self, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(
            "reconstruct", out, n=10, extent=3.0, J=8,
            noise_level=0.0, k_max=40, mu="auto", seed=3, blocks=["c"],
            init={"a": {"profile": "constant", "value": 1.0},
                  "c": {"profile": "constant", "value": 0.0},
                  "a_lower": 1.0},
        )
        cfg["model"]["params"]["c"]["width"] = 0.5
        cfg["model"]["params"]["c"]["amplitude"] = 0.6
        path = write_config(tmp_path, cfg)
        assert run(path) == 0
        lines = (out / "landweber_trace.csv").read_text().splitlines()
        assert lines[0] == "iteration,residual,param_error,mu,solves_cumulative,stop_reason"
        assert lines[-1].endswith("k_max")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["summary"]["final_residual"] < manifest["summary"]["initial_residual"]
        assert manifest["summary"]["final_param_error"] < 0.7 * manifest["summary"]["initial_param_error"]
        assert (out / "reconstruction.png").stat().st_size > 0
        assert (out / "landweber_trace.png").stat().st_size > 0
        assert (out / "reconstruction_c.bin").exists()

    def test_trace_deterministic(self, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            cfg = base_config(
                "reconstruct", out, n=8, extent=3.0, J=4,
                noise_level=0.02, k_max=10, mu="auto", seed=3, tau=1.5, blocks=["c"],
                init={"a": {"profile": "constant", "value": 1.0},
                      "c": {"profile": "constant", "value": 0.0},
                      "a_lower": 1.0},
            )
            path = write_config(tmp_path, cfg, f"cfg_{tag}.json")
            assert run(path) == 0
            outs.append((out / "landweber_trace.csv").read_bytes())
        assert outs[0] == outs[1]


class TestSolverTestTask:
    def test_convergence_window(self, tmp_path):
        out = tmp_path / "out"
        cfg = base_config("solver-test", out, n=16, n_values=[16, 32], ratio_window=[3.5, 4.5])
        cfg["model"]["params"]["a"] = {
            "profile": "gaussian-bump", "center": [0.45, 0.55], "width": 0.15,
            "amplitude": 0.5, "offset": 1.0,
        }
        cfg["model"]["params"]["c"] = {"profile": "constant", "value": 0.0}
        cfg["model"]["params"]["a_lower"] = 0.9
        path = write_config(tmp_path, cfg)
        assert run(path) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        ratio = manifest["summary"]["ratios"][0]
        assert 3.5 <= ratio <= 4.5
        assert (out / "solver_metrics.csv").exists()
        assert (out / "solver_convergence.png").stat().st_size > 0


class TestExitCodes:
    def test_unparseable_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        assert run(bad) == 2

    def test_missing_sections(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"model": {}}))
        assert run(path) == 2

    def test_admissibility_exit(self, tmp_path):
        cfg = base_config("forward", tmp_path / "out")
        cfg["model"]["params"]["a"] = {"profile": "constant", "value": 0.01}
        cfg["model"]["params"]["a_lower"] = 1.0
        path = write_config(tmp_path, cfg)
        assert run(path) == 3

    def test_cli_entrypoint_and_task_mismatch(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config("forward", out, J=2, n=6))
        runner = CliRunner()
        result = runner.invoke(main, ["forward", "--config", str(path)])
        assert result.exit_code == 0
        result = runner.invoke(main, ["tcc-scan", "--config", str(path)])
        assert result.exit_code == 2

    def test_threads_flag_accepted(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config("adjoint-test", out, n=6, J=2, pairs=1))
        runner = CliRunner()
        result = runner.invoke(main, ["adjoint-test", "--config", str(path), "--threads", "2"])
        assert result.exit_code == 0
