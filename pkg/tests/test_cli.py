# tests/test_cli.py
"""
Unit tests for the command-line surface: parsing, overrides and exit codes.
"""
import pytest
import yaml

import flier_app
from flier_app import EXIT_FAILURE, EXIT_OK, EXIT_UNEXPECTED, build_parser, config_overrides, main


@pytest.fixture
def config_file(tmp_path, tiny_run_config_dict):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(tiny_run_config_dict))
    return path


def _run(*argv):
    return main([str(a) for a in argv])


class TestParser:
    """Tests for build_parser and config_overrides."""

    @pytest.mark.unit
    def test_train_flags(self):
        """--shots, --alpha and --mode on train."""
        args = build_parser().parse_args(
            ["train", "--shots", "4", "--alpha", "0.3", "--mode", "finetune", "--seed", "9"]
        )

        assert args.mode == "finetune"
        assert config_overrides(args) == {"seed": 9, "shots": 4, "train": {"alpha": 0.3}}

    @pytest.mark.unit
    def test_ablate_shots_restrict_grid(self):
        """--shots on ablate narrows the grid to one shot count."""
        args = build_parser().parse_args(["ablate", "--axis", "alpha", "--shots", "2", "--jobs", "3"])

        assert config_overrides(args) == {
            "shots": 2,
            "ablation": {"shots": [2], "jobs": 3},
        }

    @pytest.mark.unit
    def test_build_cache_count(self):
        """--count sets the records per class."""
        args = build_parser().parse_args(["build-cache", "--count", "20"])
        assert config_overrides(args) == {"diffusion": {"count_per_class": 20}}

    @pytest.mark.unit
    def test_no_flags_no_overrides(self):
        """Plain commands leave the config alone."""
        assert config_overrides(build_parser().parse_args(["eval"])) == {}

    @pytest.mark.unit
    @pytest.mark.parametrize("command", ["eval", "report"])
    def test_force_only_on_rebuilding_commands(self, command, capsys):
        """Commands that always rewrite their outputs reject --force."""
        assert build_parser().parse_args(["train", "--force"]).force
        with pytest.raises(SystemExit) as excinfo:
            build_parser().parse_args([command, "--force"])
        assert excinfo.value.code == 2

    @pytest.mark.unit
    def test_ablate_requires_axis(self, capsys):
        """The axis is mandatory."""
        with pytest.raises(SystemExit) as excinfo:
            build_parser().parse_args(["ablate"])
        assert excinfo.value.code == 2

    @pytest.mark.unit
    def test_unknown_mode_rejected(self, capsys):
        """Only the three training protocols are accepted."""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["train", "--mode", "distill"])


@pytest.mark.usefixtures("isolated_logging")
class TestMain:
    """Tests for main() exit codes."""

    @pytest.mark.unit
    def test_gen_data_succeeds_then_skips(self, tmp_path, config_file, capsys):
        """First run writes the dataset; the second is a no-op."""
        assert _run("gen-data", "--config", config_file, "--output-root", tmp_path) == EXIT_OK
        assert "content hash" in capsys.readouterr().out

        assert _run("gen-data", "--config", config_file, "--output-root", tmp_path) == EXIT_OK
        assert "already present" in capsys.readouterr().out

    @pytest.mark.unit
    def test_changed_settings_need_force(self, tmp_path, config_file, capsys):
        """A different seed against an existing dataset fails unless forced."""
        _run("gen-data", "--config", config_file, "--output-root", tmp_path)
        capsys.readouterr()

        code = _run("gen-data", "--config", config_file, "--output-root", tmp_path, "--seed", "8")
        assert code == EXIT_FAILURE
        assert "different settings" in capsys.readouterr().err

        code = _run(
            "gen-data", "--config", config_file, "--output-root", tmp_path, "--seed", "8", "--force"
        )
        assert code == EXIT_OK

    @pytest.mark.unit
    def test_missing_upstream_artifact(self, tmp_path, config_file, capsys):
        """eval before train exits 1 naming the producing command."""
        code = _run("eval", "--config", config_file, "--output-root", tmp_path)

        assert code == EXIT_FAILURE
        err = capsys.readouterr().err
        assert "error: missing artifact (run 'train' first)" in err

    @pytest.mark.unit
    def test_invalid_config(self, tmp_path, capsys):
        """An unknown key exits 1 with its location."""
        path = tmp_path / "bad.yaml"
        path.write_text("train:\n  alpah: 0.3\n")

        code = _run("gen-data", "--config", path, "--output-root", tmp_path)

        assert code == EXIT_FAILURE
        assert "train.alpah" in capsys.readouterr().err

    @pytest.mark.unit
    def test_unsupported_shots_for_ablate(self, tmp_path, config_file, capsys):
        """A shot count outside the supported set is a configuration error."""
        code = _run(
            "ablate", "--axis", "alpha", "--shots", "3",
            "--config", config_file, "--output-root", tmp_path,
        )
        assert code == EXIT_FAILURE
        assert "shots" in capsys.readouterr().err

    @pytest.mark.unit
    def test_unexpected_error(self, tmp_path, config_file, capsys, monkeypatch):
        """Anything outside the expected failures exits 2."""

        def explode(*args, **kwargs):
            raise RuntimeError("boom")

        monkeypatch.setattr(flier_app, "dispatch", explode)

        code = _run("gen-data", "--config", config_file, "--output-root", tmp_path)

        assert code == EXIT_UNEXPECTED
        assert "unexpected RuntimeError: boom" in capsys.readouterr().err

    @pytest.mark.unit
    def test_report_without_reports(self, tmp_path, config_file, capsys):
        """report with nothing to render exits 1."""
        code = _run("report", "--config", config_file, "--output-root", tmp_path)
        assert code == EXIT_FAILURE
        assert "no ablation grids" in capsys.readouterr().err
