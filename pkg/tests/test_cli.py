import json

import numpy as np
import pytest

from krrdeteq.cli import main


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


class TestDeteqCommand:
    def test_predictions_from_model_document(self, tmp_path):
        config = write_config(
            tmp_path,
            {
                "blocks": [[1.0, 200]],
                "alignment": [1.0],
                "residual_energy": 0.0,
                "noise_variance": 0.0,
                "lambda": 1.0,
                "n_grid": [100],
            },
        )
        out = tmp_path / "pred.csv"
        code = main(["deteq", "--config", str(config), "--out", str(out)])
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 2
        row = dict(zip(lines[0].split(","), lines[1].split(",")))
        assert float(row["lambda_star"]) == pytest.approx((101 + np.sqrt(10601)) / 200, rel=1e-10)
        assert float(row["prediction"]) == pytest.approx(0.50009, rel=1e-3)

    def test_partial_failure_exit_code(self, tmp_path):
        config = write_config(
            tmp_path,
            {
                "blocks": [[1.0, 30]],
                "alignment": [1.0],
                "residual_energy": 0.0,
                "noise_variance": 0.0,
                "lambda": 0.0,
                "n_grid": [10, 50],  # rank 30 <= 50: second row fails
            },
        )
        out = tmp_path / "pred.csv"
        code = main(["deteq", "--config", str(config), "--out", str(out)])
        assert code == 2
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 3
        assert "error" in lines[2]


class TestExperimentCommands:
    def test_simulate_roundtrip(self, tmp_path):
        config = write_config(
            tmp_path,
            {
                "kind": "gaussian_curve",
                "spectrum": {"kind": "power_law", "exponent": 2.0, "size": 40},
                "noise_variance": 0.1,
                "n_grid": [8, 16],
                "lambda": 0.1,
                "reps": 2,
                "seed": 3,
            },
        )
        out = tmp_path / "curve.csv"
        assert main(["simulate", "--config", str(config), "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 3

    def test_seed_override_changes_output(self, tmp_path):
        doc = {
            "kind": "gaussian_curve",
            "spectrum": {"kind": "power_law", "exponent": 2.0, "size": 40},
            "noise_variance": 0.1,
            "n_grid": [8],
            "lambda": 0.1,
            "reps": 2,
            "seed": 3,
        }
        config = write_config(tmp_path, doc)
        out1, out2, out3 = (tmp_path / f"c{i}.csv" for i in range(3))
        main(["simulate", "--config", str(config), "--out", str(out1)])
        main(["simulate", "--config", str(config), "--out", str(out2), "--seed", "99"])
        main(["simulate", "--config", str(config), "--out", str(out3), "--seed", "3"])
        assert out1.read_bytes() != out2.read_bytes()
        assert out1.read_bytes() == out3.read_bytes()

    def test_kind_mismatch_is_usage_error(self, tmp_path):
        config = write_config(tmp_path, {"kind": "gaussian_curve", "n_grid": [4], "reps": 1})
        out = tmp_path / "x.csv"
        assert main(["sphere", "--config", str(config), "--out", str(out)]) == 1

    def test_missing_config_flag_is_usage_error(self):
        assert main(["simulate"]) == 1

    def test_unknown_subcommand_is_usage_error(self):
        assert main(["frobnicate"]) == 1

    def test_missing_file(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", "x.csv"]) == 1

    def test_probe_functionals_command(self, tmp_path):
        config = write_config(
            tmp_path,
            {
                "kind": "functional_probe",
                "spectrum": {"kind": "power_law", "exponent": 2.0, "size": 30},
                "lambda": 0.5,
                "n_grid": [5],
                "reps": 2,
                "seed": 0,
            },
        )
        out = tmp_path / "probe.csv"
        assert main(["probe-functionals", "--config", str(config), "--out", str(out)]) == 0
        assert out.read_text().startswith("n,functional_index,median_rel_err")

    def test_json_format(self, tmp_path):
        config = write_config(
            tmp_path,
            {
                "kind": "gaussian_curve",
                "spectrum": {"kind": "power_law", "exponent": 2.0, "size": 30},
                "noise_variance": 0.0,
                "n_grid": [8],
                "lambda": 0.1,
                "reps": 1,
                "seed": 0,
            },
        )
        out = tmp_path / "rows.json"
        assert main(["simulate", "--config", str(config), "--out", str(out), "--format", "json"]) == 0
        doc = json.loads(out.read_text())
        assert doc["rows"][0]["status"] == "ok"

    @pytest.mark.parametrize(
        "command,doc",
        [
            (
                "sphere",
                {
                    "kind": "sphere_curve",
                    "d": 10,
                    "gap": 8.0,
                    "levels": 2,
                    "noise_variance": 0.1,
                    "n_grid": [8],
                    "lambda": 0.0,
                    "reps": 1,
                    "seed": 0,
                },
            ),
            (
                "gcv-sweep",
                {
                    "kind": "gcv_sweep",
                    "spectrum": {"kind": "power_law", "exponent": 2.0, "size": 30},
                    "noise_variance": 0.1,
                    "n": 12,
                    "lambda_grid": [0.1, 1.0],
                    "reps": 1,
                    "seed": 0,
                },
            ),
            (
                "estimate",
                {
                    "kind": "estimate_and_predict",
                    "spectrum": {"kind": "power_law", "exponent": 2.0, "size": 20},
                    "noise_variance": 0.05,
                    "holdout": 100,
                    "n_grid": [8],
                    "lambda": 0.05,
                    "reps": 1,
                    "seed": 0,
                },
            ),
        ],
    )
    def test_each_subcommand_runs(self, tmp_path, command, doc):
        config = write_config(tmp_path, doc)
        out = tmp_path / "rows.csv"
        assert main([command, "--config", str(config), "--out", str(out)]) == 0
        assert out.read_text().splitlines()[0].startswith("kind,")

    def test_threads_env_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv("KRRDETEQ_THREADS", "2")
        config = write_config(
            tmp_path,
            {
                "kind": "gaussian_curve",
                "spectrum": {"kind": "power_law", "exponent": 2.0, "size": 30},
                "noise_variance": 0.0,
                "n_grid": [8],
                "lambda": 0.1,
                "reps": 2,
                "seed": 0,
            },
        )
        out = tmp_path / "c.csv"
        assert main(["simulate", "--config", str(config), "--out", str(out)]) == 0
