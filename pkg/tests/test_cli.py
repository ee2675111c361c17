import json
from pathlib import Path

import numpy as np
import pytest

from qctl import __version__
from qctl.artifacts import read_csv
from qctl.cli import (COMMANDS, EXAMPLES, ConfigError, describe, main, validate_config)
from qctl.core import matrix_from_json
from qctl.dynamics import decay_model

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = sorted((ROOT / "configs").glob("*.json"))


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def tree_bytes(root: Path) -> dict:
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestSchemas:
    @pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
    def test_shipped_configs_validate(self, path):
        cfg = json.loads(path.read_text())
        assert validate_config(cfg) == cfg["command"]

    @pytest.mark.parametrize("command", COMMANDS)
    def test_examples_validate(self, command):
        assert validate_config(EXAMPLES[command]) == command

    def test_missing_command(self):
        with pytest.raises(ConfigError, match="missing 'command'"):
            validate_config({})

    def test_all_errors_listed(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"command": "sme"})
        text = " ".join(err.value.errors)
        for key in ("model", "rho0", "T", "dt", "n_traj"):
            assert repr(key) in text

    def test_unknown_key(self):
        cfg = dict(EXAMPLES["fme"], colour="blue")
        with pytest.raises(ConfigError, match="colour"):
            validate_config(cfg)

    def test_describe(self):
        d = describe("sme")
        assert d["schema"]["type"] == "object"
        assert any("--law" in str(f) for f in d["flags"])
        with pytest.raises(ConfigError):
            describe("bogus")


class TestExitCodes:
    @pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
    def test_shipped_configs_run(self, path, tmp_path, capsys):
        assert main(["run", str(path), "--out", str(tmp_path)]) == 0
        listed = capsys.readouterr().out.split()
        assert listed and all(Path(p).exists() for p in listed)

    def test_empty_config(self, tmp_path, capsys):
        assert main(["run", write_config(tmp_path, {}), "--out", str(tmp_path / "o")]) == 2
        assert "missing 'command'" in capsys.readouterr().err

    def test_subcommand_lists_missing(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"command": "sme"})
        assert main(["sme", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "'rho0' is a required property" in capsys.readouterr().err

    def test_command_mismatch(self, tmp_path):
        cfg = write_config(tmp_path, EXAMPLES["fme"])
        assert main(["dd", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_bad_json_and_missing_file(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert main(["run", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2

    def test_missing_out(self, tmp_path):
        assert main(["run", write_config(tmp_path, EXAMPLES["fme"])]) == 2

    def test_numerical_failure(self, tmp_path):
        cfg = dict(EXAMPLES["fme"], L="sigma_z")
        out = tmp_path / "o"
        assert main(["fme", write_config(tmp_path, cfg), "--out", str(out)]) == 3
        err = json.loads((out / "error.json").read_text())
        assert err["error"] == "numerical failure"
        assert "stabilizable" in err["message"]

    def test_describe_exit(self, capsys):
        assert main(["describe", "grape"]) == 0
        assert json.loads(capsys.readouterr().out)["command"] == "grape"
        assert main(["describe", "bogus"]) == 2

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["--version"])
        assert e.value.code == 0
        assert __version__ in capsys.readouterr().out


class TestArtifacts:
    def test_decay_populations(self, tmp_path):
        assert main(["run", str(ROOT / "configs" / "simulate_decay.json"),
                     "--out", str(tmp_path)]) == 0
        header, data = read_csv(tmp_path / "trajectory.csv")
        t, p1 = data[:, 0], data[:, header.index("p_1")]
        assert np.abs(p1 - np.exp(-t)).max() <= 1e-6
        header, data = read_csv(tmp_path / "trajectory_bloch.csv")
        assert header == ["t", "x", "y", "z"]

    def test_sme_reproducible(self, tmp_path):
        cfg = str(ROOT / "configs" / "sme_collapse_z0.json")
        runs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["sme", cfg, "--out", str(out), "--seed", "42", "--ntraj", "40"]) == 0
            runs.append(tree_bytes(out))
        assert runs[0] == runs[1]
        assert Path("trajectories/traj_00000.csv") in runs[0]

    def test_seed_flag_changes_output(self, tmp_path):
        cfg = str(ROOT / "configs" / "sme_collapse_z0.json")
        for seed in ("1", "2"):
            main(["sme", cfg, "--out", str(tmp_path / seed), "--seed", seed, "--ntraj", "5"])
        a = (tmp_path / "1" / "ensemble.csv").read_bytes()
        b = (tmp_path / "2" / "ensemble.csv").read_bytes()
        assert a != b
        summary = json.loads((tmp_path / "2" / "summary.json").read_text())
        assert summary["seed"] == 2 and summary["n_traj"] == 5

    def test_trajectory_rows(self, tmp_path):
        cfg = str(ROOT / "configs" / "sme_collapse_z0.json")
        main(["sme", cfg, "--out", str(tmp_path), "--ntraj", "3", "--dt", "0.002"])
        header, data = read_csv(tmp_path / "trajectories" / "traj_00000.csv")
        assert header == ["t", "x", "y", "z", "u", "dY"]
        assert np.array_equal(data[0], [0, 1, 0, 0, 0, 0])
        assert data[1, 0] == pytest.approx(0.02)
        assert np.all(np.linalg.norm(data[:, 1:4], axis=1) <= 1 + 1e-9)

    def test_law_override(self, tmp_path):
        cfg = str(ROOT / "configs" / "sme_affine.json")
        out = tmp_path / "o"
        assert main(["sme", cfg, "--out", str(out), "--ntraj", "4", "--law", "lyapunov"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["law"] == "lyapunov"
        # a diagonal start stays diagonal under sigma_z monitoring, so the law reads x = 0
        _, data = read_csv(out / "trajectories" / "traj_00000.csv")
        assert np.array_equal(data[:, 4], np.zeros(len(data)))

    def test_law_needs_control(self, tmp_path, capsys):
        cfg = str(ROOT / "configs" / "sme_collapse_z0.json")
        assert main(["sme", cfg, "--out", str(tmp_path), "--law", "affine"]) == 2
        assert "H1" in capsys.readouterr().err

    def test_slh_flags(self, tmp_path):
        nets = ROOT / "configs" / "networks"
        assert main(["slh", "--components", str(nets / "components.json"),
                     "--network", str(nets / "decay.net"), "--emit", "mme",
                     "--out", str(tmp_path)]) == 0
        mme = json.loads((tmp_path / "mme.json").read_text())
        ref = decay_model(1.0, 0.5)
        assert np.allclose(matrix_from_json(mme["H"]), ref.H)
        assert np.allclose(matrix_from_json(mme["noise_ops"][0]), ref.noise_ops[0])

    def test_float_round_trip(self, tmp_path):
        main(["run", str(ROOT / "configs" / "grape_qubit.json"), "--out", str(tmp_path)])
        summary = json.loads((tmp_path / "summary.json").read_text())
        _, hist = read_csv(tmp_path / "j_history.csv")
        assert summary["figure_of_merit"] >= 0.99
        assert np.all(np.diff(hist[:, -1]) >= 0)
