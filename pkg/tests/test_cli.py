"""Command-line surface: flags, exit codes, manifests, reproducibility."""

import json

import pytest

from cmdplab import cli
from cmdplab.tasks import model_from_json


def run_cli(*argv) -> int:
    return cli.main(list(argv))


class TestHelp:
    @pytest.mark.parametrize(
        "command", ["tasks", "oracle", "train", "profile", "sweep", "compare"]
    )
    def test_help_lists_flags_with_defaults(self, command, capsys):
        with pytest.raises(SystemExit) as exit_info:
            run_cli(command, "--help")
        assert exit_info.value.code == 0
        out = capsys.readouterr().out
        assert "default" in out


class TestTasks:
    def test_lists_four_tasks(self, capsys):
        assert run_cli("tasks") == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 4
        assert any("chain-speed" in line for line in out)

    def test_export_round_trips(self, tmp_path, capsys):
        path = tmp_path / "model.json"
        assert run_cli("tasks", "--export", "chain-speed", "--out", str(path)) == 0
        with open(path) as fh:
            model = model_from_json(json.load(fh))
        assert model.n_states == 8


class TestOracleCommand:
    def test_prints_lambda_star_json(self, capsys):
        assert run_cli("oracle", "--task", "chain-speed") == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["lambda_star"][0] == pytest.approx(1.2, abs=1e-6)
        assert doc["constraint_active"] == [True]


class TestTrainCommand:
    def _args(self, tmp_path, *extra):
        return (
            "train", "--task", "chain-speed", "--epochs", "2",
            "--steps-per-epoch", "1000", "--constraint-signal", "discounted",
            "--out", str(tmp_path), *extra,
        )

    def test_writes_csv_and_manifest(self, tmp_path, capsys):
        assert run_cli(*self._args(tmp_path)) == 0
        assert (tmp_path / "run_seed0.csv").exists()
        assert (tmp_path / "run_seed0.manifest.json").exists()

    def test_seed_override_recorded(self, tmp_path):
        assert run_cli(*self._args(tmp_path, "--seed", "7")) == 0
        with open(tmp_path / "run_seed7.manifest.json") as fh:
            manifest = json.load(fh)
        assert manifest["seed"] == 7
        assert manifest["config"]["seed"] == 7

    def test_malformed_json_names_location(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope}")
        code = run_cli("train", "--config", str(bad))
        assert code == cli.EXIT_CONFIG
        err = capsys.readouterr().err
        assert "line" in err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"task": "chain-speed", "bogus_knob": 1}))
        code = run_cli("train", "--config", str(bad))
        assert code == cli.EXIT_CONFIG
        assert "bogus_knob" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "diverge.json"
        cfg.write_text(
            json.dumps(
                {
                    "task": "chain-speed",
                    "epochs": 2,
                    "steps_per_epoch": 1000,
                    "learning_rate": float("inf"),
                    "constraint_signal": "discounted",
                }
            )
        )
        code = run_cli("train", "--config", str(cfg), "--out", str(tmp_path))
        assert code == cli.EXIT_DIVERGED

    def test_manifest_rerun_identical_csv(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli(*self._args(out_a, "--seed", "3")) == 0
        manifest = out_a / "run_seed3.manifest.json"
        assert run_cli("train", "--config", str(manifest), "--out", str(out_b)) == 0
        assert (out_a / "run_seed3.csv").read_bytes() == (out_b / "run_seed3.csv").read_bytes()


PROFILE_ARGS = (
    "--mode", "exact_dual", "--epochs", "3", "--grid", "0,0.5,1,2", "--seeds", "2",
)


class TestProfileCommand:
    def test_aggregate_has_one_row_per_grid_point(self, tmp_path, capsys):
        assert run_cli("profile", "--task", "chain-speed", *PROFILE_ARGS, "--out", str(tmp_path)) == 0
        rows = (tmp_path / "profile.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 4  # header + grid points
        assert rows[0].startswith("lambda,")

    def test_grid_must_contain_zero(self, tmp_path, capsys):
        code = run_cli("profile", "--task", "chain-speed", "--grid", "0.5,1", "--out", str(tmp_path))
        assert code == cli.EXIT_CONFIG

    def test_manifest_rerun_byte_identical(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli("profile", "--task", "chain-speed", *PROFILE_ARGS, "--out", str(out_a)) == 0
        assert run_cli("profile", "--config", str(out_a / "manifest.json"), "--out", str(out_b)) == 0
        assert (out_a / "profile.csv").read_bytes() == (out_b / "profile.csv").read_bytes()


class TestSweepCommand:
    def test_writes_sweep_csv(self, tmp_path, capsys):
        assert (
            run_cli(
                "sweep", "--task", "chain-speed", "--mode", "exact_dual", "--epochs", "3",
                "--limits", "10,20,60", "--seeds", "1", "--out", str(tmp_path),
            )
            == 0
        )
        rows = (tmp_path / "sweep.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 3
        assert rows[0].startswith("cost_limit,")


class TestCompareCommand:
    def test_report_columns(self, tmp_path, capsys):
        assert (
            run_cli(
                "compare", "--task", "chain-speed", "--mode", "sampled",
                "--steps-per-epoch", "1000", "--constraint-signal", "discounted",
                "--epochs", "4", "--seeds", "1", "--out", str(tmp_path),
            )
            == 0
        )
        rows = (tmp_path / "compare.csv").read_text().strip().splitlines()
        assert rows[0] == (
            "method,best_return,best_return_epoch,violation_rate,"
            "lambda_std,n_seeds,n_seeds_with_metrics"
        )
        assert rows[1].startswith("ga,")
        assert rows[2].startswith("pid,")
