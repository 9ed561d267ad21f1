"""Config round-trips, command exit codes, and artifact formats."""

import csv
import json

import numpy as np
import pytest

from mfglat.cli import RunConfig, main
from mfglat.errors import ConfigurationError


def base_config(out_dir, picard=True, deltas=(0.4, 0.2), n_s=20):
    return {
        "problem": {"name": "custom1d", "drift": "-x",
                    "terminal": "abs(x-0.1)", "support": [-0.5, 0.5]},
        "discretization": {"n_t": 5, "n_s": n_s, "epsilon": 0.05,
                           "control_bound": 2.0},
        "solver": {"deltas": list(deltas), "max_iters": 200,
                   "picard": picard},
        "output": {"dir": str(out_dir)},
        "seed": 11,
    }


def write_config(tmp_path, name="run.json", **kw):
    out_dir = tmp_path / "artifacts"
    cfg = base_config(out_dir, **kw)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path, out_dir


class TestRunConfig:
    def test_save_load_round_trip(self, tmp_path):
        cfg = RunConfig(problem={"name": "example1"}, n_t=12, n_s=50,
                        epsilon=0.01, deltas=(0.2, 0.05), seed=3)
        p = tmp_path / "cfg.json"
        cfg.save(p)
        assert RunConfig.load(p) == cfg

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigurationError):
            RunConfig.from_dict({"problem": {"name": "example1"},
                                 "discretization": {"n_t": 2, "n_s": 4,
                                                    "epsilon": 0.1},
                                 "extra": 1})

    def test_unknown_section_key(self):
        with pytest.raises(ConfigurationError):
            RunConfig.from_dict({"problem": {"name": "example1"},
                                 "discretization": {"n_t": 2, "n_s": 4,
                                                    "epsilon": 0.1,
                                                    "typo_key": 7}})

    def test_missing_required_section(self):
        with pytest.raises(ConfigurationError):
            RunConfig.from_dict({"problem": {"name": "example1"}})

    def test_invalid_json_text(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        with pytest.raises(ConfigurationError):
            RunConfig.load(p)


class TestValidateCommand:
    def test_ok_config_exits_zero(self, tmp_path, capsys):
        path, _ = write_config(tmp_path)
        assert main(["validate", "--config", str(path)]) == 0
        out = capsys.readouterr().out
        assert "forecast |S_5|" in out

    def test_mesh_violation_exits_one(self, tmp_path, capsys):
        # dx = 1/6 exceeds control_bound * dt: no admissible lattice motion
        path, _ = write_config(tmp_path, n_s=6)
        cfg = json.loads(path.read_text())
        cfg["discretization"]["n_t"] = 30
        path.write_text(json.dumps(cfg))
        assert main(["validate", "--config", str(path)]) == 1

    def test_missing_file_exits_one(self, tmp_path, capsys):
        missing = tmp_path / "absent.json"
        assert main(["validate", "--config", str(missing)]) == 1
        assert "error:" in capsys.readouterr().err


class TestSolveCommand:
    def test_artifacts_and_exit_zero(self, tmp_path, capsys):
        path, out_dir = write_config(tmp_path)
        assert main(["solve", "--config", str(path)]) == 0
        for name in ("config.json", "flow.csv", "error_trace.csv",
                     "report.json", "solution.npz"):
            assert (out_dir / name).exists(), name

        with open(out_dir / "flow.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert set(rows[0]) == {"k", "t", "x1", "mass"}
        mass = {}
        for r in rows:
            mass[int(r["k"])] = mass.get(int(r["k"]), 0.0) + float(r["mass"])
        assert sorted(mass) == list(range(6))
        for k, total in mass.items():
            assert total == pytest.approx(1.0, abs=1e-12), k

        report = json.loads((out_dir / "report.json").read_text())
        assert report["converged"] is True
        assert report["exploitability"] >= 0.0
        assert [s["delta"] for s in report["stages"]] == [0.4, 0.2]
        assert report["rng"] == "philox4x64"

        with open(out_dir / "error_trace.csv") as fh:
            trace = list(csv.DictReader(fh))
        assert sum(s["iterations"] for s in report["stages"]) == len(trace)
        assert set(trace[0]) == {"stage", "delta", "n", "error"}

    def test_nonconvergence_exits_two(self, tmp_path, capsys):
        path, out_dir = write_config(tmp_path, picard=False,
                                     deltas=(0.001,))
        cfg = json.loads(path.read_text())
        cfg["solver"]["max_iters"] = 3
        path.write_text(json.dumps(cfg))
        assert main(["solve", "--config", str(path)]) == 2
        report = json.loads((out_dir / "report.json").read_text())
        assert report["converged"] is False
        assert report["stages"][0]["iterations"] == 3

    def test_invalid_discretization_exits_one(self, tmp_path, capsys):
        path, out_dir = write_config(tmp_path, n_s=6)
        cfg = json.loads(path.read_text())
        cfg["discretization"]["n_t"] = 30
        path.write_text(json.dumps(cfg))
        assert main(["solve", "--config", str(path)]) == 1
        assert not out_dir.exists()

    def test_cli_overrides_reach_report(self, tmp_path, capsys):
        path, out_dir = write_config(tmp_path)
        assert main(["solve", "--config", str(path),
                     "--deltas", "0.5", "--seed", "42"]) == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert [s["delta"] for s in report["stages"]] == [0.5]
        assert report["seed"] == 42

    def test_thread_count_never_changes_artifacts(self, tmp_path, capsys):
        path, out_dir = write_config(tmp_path, picard=False, deltas=(0.05,))
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["solve", "--config", str(path), "--out", str(a),
                     "--threads", "1"]) == 0
        assert main(["solve", "--config", str(path), "--out", str(b),
                     "--threads", "2"]) == 0
        for name in ("flow.csv", "error_trace.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_threads_env_override(self, tmp_path, capsys, monkeypatch):
        path, out_dir = write_config(tmp_path)
        monkeypatch.setenv("MFGLAT_THREADS", "3")
        assert main(["solve", "--config", str(path)]) == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert report["threads_requested"] == 3

    def test_threads_env_rejects_garbage(self, tmp_path, capsys, monkeypatch):
        path, _ = write_config(tmp_path)
        monkeypatch.setenv("MFGLAT_THREADS", "many")
        assert main(["solve", "--config", str(path)]) == 1

    def test_dump_flags_write_extras(self, tmp_path, capsys):
        path, out_dir = write_config(tmp_path)
        assert main(["solve", "--config", str(path), "--dump-values",
                     "--dump-levelsets", "--dump-kernels"]) == 0
        for name in ("values.csv", "levelsets.csv", "kernel.csv"):
            assert (out_dir / name).exists(), name
        with open(out_dir / "kernel.csv") as fh:
            krows = list(csv.DictReader(fh))
        by_src = {}
        for r in krows:
            key = (r["k"], r["src_i1"])
            by_src[key] = by_src.get(key, 0.0) + float(r["prob"])
        for key, total in by_src.items():
            assert total == pytest.approx(1.0, abs=1e-12), key


class TestSampleCommand:
    def test_sample_after_solve(self, tmp_path, capsys):
        path, out_dir = write_config(tmp_path)
        assert main(["solve", "--config", str(path)]) == 0
        assert main(["sample", "--config", str(path), "--count", "7"]) == 0
        with open(out_dir / "paths.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 7 * 6
        assert set(rows[0]) == {"path", "k", "t", "x1"}

    def test_sample_determinism(self, tmp_path, capsys):
        path, out_dir = write_config(tmp_path)
        assert main(["solve", "--config", str(path)]) == 0
        p1 = tmp_path / "p1.csv"
        p2 = tmp_path / "p2.csv"
        for dest in (p1, p2):
            assert main(["sample", "--config", str(path), "--count", "9",
                         "--paths-out", str(dest)]) == 0
        assert p1.read_bytes() == p2.read_bytes()

    def test_zero_count_writes_header_only(self, tmp_path, capsys):
        path, out_dir = write_config(tmp_path)
        assert main(["solve", "--config", str(path)]) == 0
        assert main(["sample", "--config", str(path), "--count", "0"]) == 0
        lines = (out_dir / "paths.csv").read_text().splitlines()
        assert lines == ["path,k,t,x1"]

    def test_sample_without_artifact_exits_one(self, tmp_path, capsys):
        path, _ = write_config(tmp_path)
        assert main(["sample", "--config", str(path), "--count", "3"]) == 1
        assert "run solve first" in capsys.readouterr().err
