"""
End-to-end runs of riq_runner: configuration handling, every command, exit
codes and byte-identical reruns.
"""
import json
import math
import shutil
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import riq_runner
from riq.constants import CONVERGENCE_COLUMNS, EVOLUTION_COLUMNS, TOOL_VERSION, VEC_CONVENTION
from riq.densela import dagger
from riq.perturb import dissipator_term

QUBIT_MODEL = {
    "d": 1,
    "n": 1,
    "h0": [[[-0.7, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.7, 0.0]]],
    "delta": [1.0],
    "V": [[[[0.2, 0.1], [0.3, -0.1]], [[0.25, 0.05], [-0.15, 0.2]]]],
    "beta": 1.0,
}


def from_pairs(pairs):
    arr = np.asarray(pairs, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


class TestRunnerEndToEnd:
    """Runs main() against temporary configs and output directories."""

    def setup_method(self):
        self.temp_dir = Path(tempfile.mkdtemp())
        self.out = self.temp_dir / "out"

    def teardown_method(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    @pytest.fixture(autouse=True)
    def _no_seed_env(self, monkeypatch):
        monkeypatch.delenv(riq_runner.SEED_ENV, raising=False)

    def write_config(self, name="run.json", model=None, **settings):
        config = {"out_dir": str(self.out), **settings}
        if model is not None:
            (self.temp_dir / "model.json").write_text(json.dumps(model))
            config["model_file"] = "model.json"
        path = self.temp_dir / name
        path.write_text(json.dumps(config))
        return path

    def run(self, *argv):
        return riq_runner.main([str(a) for a in argv])

    def read_json(self, name):
        return json.loads((self.out / name).read_text())

    def read_csv(self, name):
        """Tables carry a provenance comment line ahead of the header."""
        path = self.out / name
        first = path.read_text().splitlines()[0]
        assert first == f"# convention={VEC_CONVENTION}; version={TOOL_VERSION}"
        return pd.read_csv(path, comment="#")

    def test_validate_passes_on_seeded_model(self):
        config = self.write_config(random_model={"d": 1, "n": 1})
        assert self.run("validate", "--config", config) == 0
        report = self.read_json("validate.json")
        assert report["passed"] is True
        assert report["version"] == TOOL_VERSION
        assert "column-stacking" in report["convention"]
        assert all(check["passed"] for check in report["checks"])
        assert (self.out / "validate.md").exists()
        critical = [check for check in report["checks"] if check["check"] == "critical_commutator"]
        assert len(critical) == 1
        assert critical[0]["tolerance"] == 1e-3
        assert critical[0]["residual"] >= 1e-3
        assert critical[0]["passed"] is True

    def test_validate_uncoupled_model_has_tiny_residuals(self):
        model = dict(QUBIT_MODEL, V=[[[0, 0], [0, 0]]])
        config = self.write_config(model=model)
        assert self.run("validate", "--config", config) == 0
        checks = self.read_json("validate.json")["checks"]
        # Gamma_beta = 0 commutes with ad h0, so no lower bound is applied
        assert "critical_commutator" not in {check["check"] for check in checks}
        for check in checks:
            if "'" not in check["check"]:
                assert check["residual"] <= 1e-12, check["check"]

    def test_non_hermitian_h0_is_a_config_error(self, capsys):
        model = dict(QUBIT_MODEL, h0=[[0.0, 1.0], [0.0, 0.0]])
        config = self.write_config(model=model)
        assert self.run("validate", "--config", config) == 2
        assert "h0" in capsys.readouterr().out

    def test_generators_for_qubit_model(self):
        config = self.write_config(model=QUBIT_MODEL)
        assert self.run("generators", "--config", config) == 0
        for name in ("gamma_w", "gamma0_sharp", "gamma_w_beta", "gamma_beta", "lindblad_jumps"):
            document = self.read_json(f"{name}.json")
            assert document["version"] == TOOL_VERSION
        gamma_w_beta = self.read_json("gamma_w_beta.json")
        assert gamma_w_beta["qubit_cross_check"]["passed"] is True
        assert gamma_w_beta["tau"] == 1.0
        assert from_pairs(gamma_w_beta["matrix"]).shape == (4, 4)
        assert len(self.read_json("lindblad_jumps.json")["jump_operators"]) == 2

    def test_generators_cross_check_seeded_qubit(self):
        config = self.write_config(random_model={"d": 1, "n": 1}, seed=0)
        assert self.run("generators", "--config", config) == 0
        cross_check = self.read_json("gamma_w_beta.json")["qubit_cross_check"]
        assert cross_check["applicable"] is True
        assert cross_check["passed"] is True
        assert cross_check["residual"] <= 1e-9

    def test_generators_vanish_without_coupling(self):
        config = self.write_config(model=dict(QUBIT_MODEL, V=[[[0, 0], [0, 0]]]))
        assert self.run("generators", "--config", config) == 0
        for name in ("gamma_w", "gamma0_sharp", "gamma_w_beta", "gamma_beta"):
            assert np.allclose(from_pairs(self.read_json(f"{name}.json")["matrix"]), 0.0)

    def test_zero_temperature_gamma_beta(self):
        config = self.write_config(model=dict(QUBIT_MODEL, beta="inf"))
        assert self.run("generators", "--config", config) == 0
        document = self.read_json("gamma_beta.json")
        assert document["beta"] == "inf"
        V = from_pairs(QUBIT_MODEL["V"][0])
        assert np.allclose(from_pairs(document["matrix"]), dissipator_term(dagger(V)))

    @pytest.mark.parametrize("regime", ["weak", "regime2", "critical", "continuous"])
    def test_converge_each_regime(self, regime):
        config = self.write_config(
            model=QUBIT_MODEL,
            regimes={"regime2": {"k_list": [256, 1024, 4096]}},
        )
        assert self.run("converge", "--config", config, "--regime", regime) == 0
        frame = self.read_csv(f"converge_{regime}.csv")
        assert list(frame.columns) == CONVERGENCE_COLUMNS
        assert len(frame) == 3
        summary = self.read_json(f"converge_{regime}.json")
        assert summary["pass"] is True
        assert summary["regime"] == regime

    def test_converge_uncoupled_reports_exact(self):
        config = self.write_config(model=dict(QUBIT_MODEL, V=[[[0, 0], [0, 0]]]))
        assert self.run("converge", "--config", config, "--regime", "weak") == 0
        summary = self.read_json("converge_weak.json")
        assert summary["status"] == "exact"
        assert summary["fitted_order"] is None

    def test_converge_is_byte_identical_across_runs(self):
        config = self.write_config(random_model={"d": 1, "n": 1}, seed=11)
        first, second = self.temp_dir / "first", self.temp_dir / "second"
        assert self.run("converge", "--config", config, "--regime", "critical", "--out", first) == 0
        assert self.run("converge", "--config", config, "--regime", "critical", "--out", second) == 0
        for name in ("converge_critical.csv", "converge_critical.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_qubit_command(self):
        config = self.write_config(model=QUBIT_MODEL)
        assert self.run("qubit", "--config", config) == 0
        report = self.read_json("qubit.json")
        assert report["passed"] is True
        assert (self.out / "qubit.md").exists()

    def test_qubit_command_at_half_period(self):
        config = self.write_config(model=QUBIT_MODEL)
        assert self.run("qubit", "--config", config, "--tau", math.pi / 1.4) == 0
        report = self.read_json("qubit.json")
        assert report["passed"] is True
        assert report["sigma_branches_coincide"] is True
        assert any("sigma_+-" in note for note in report["notes"])
        assert "qubit_gamma_w_beta - Gamma^w_beta" in {check["check"] for check in report["checks"]}

    def test_qubit_command_rejects_bad_models_and_times(self):
        config = self.write_config(random_model={"d": 2, "n": 1})
        assert self.run("qubit", "--config", config) == 2
        config = self.write_config(name="qubit.json", model=QUBIT_MODEL)
        assert self.run("qubit", "--config", config, "--tau", math.pi / 0.7) == 2

    def test_evolve_tracks_semigroup(self):
        config = self.write_config(model=QUBIT_MODEL)
        assert self.run("evolve", "--config", config) == 0
        frame = self.read_csv("evolve.csv")
        assert list(frame.columns) == EVOLUTION_COLUMNS
        assert len(frame) == 65
        assert frame["trace_distance"].iloc[0] == 0.0
        assert frame["trace_distance"].max() < 0.1
        assert np.allclose(frame["population_ground"] + frame["population_excited"], 1.0)

    def test_seed_precedence(self, monkeypatch, capsys):
        config = self.write_config(seed=3)
        assert self.run("validate", "--config", config, "--check-config") == 0
        assert "seed=3" in capsys.readouterr().out
        assert self.run("validate", "--config", config, "--seed", 5, "--check-config") == 0
        assert "seed=5" in capsys.readouterr().out
        monkeypatch.setenv(riq_runner.SEED_ENV, "42")
        assert self.run("validate", "--config", config, "--seed", 5, "--check-config") == 0
        assert "seed=42" in capsys.readouterr().out

    def test_usage_errors(self):
        config = self.write_config()
        assert self.run("validate", "--config", self.temp_dir / "missing.yaml") == 2
        assert self.run("validate", "--config", config, "--k-list", "1,x") == 2
        assert self.run("converge", "--config", config, "--k-list", "64,256") == 2
        assert self.run("nonsense") == 2
        bad_schedule = self.write_config(name="bad.json", regimes={"critical": {"tau_list": [0.3, 0.1, 0.05]}})
        assert self.run("converge", "--config", bad_schedule, "--check-config") == 2
