# tests/integration/test_pipeline.py
"""
End-to-end tests of the pipeline stages.

Tests the complete flow on the tiny configuration:
1. Synthetic dataset generated
2. Autoencoder and denoiser trained, generation cache filled
3. One episode trained, checkpoint and report written
4. Checkpoint evaluated with raw and EMA weights
5. Ablation grid run and rendered
"""
import json

import pytest

from src.handlers.commands import (
    cmd_ablate,
    cmd_build_cache,
    cmd_eval,
    cmd_gen_data,
    cmd_report,
    cmd_train,
)
from src.models.config import AblationAxis, TrainMode
from src.models.reports import TrainReport
from src.nn.checkpoint import load_models
from src.services.generation_cache import load_cache, load_manifest
from src.services.reporting import load_grid
from src.services.synthetic_data import load_dataset
from src.utils.constants import EVAL_REPORT_FILE, MODEL_CHECKPOINT, TRAIN_REPORT_FILE
from src.utils.errors import ArtifactError, MissingArtifactError

pytestmark = pytest.mark.integration


class TestDataStages:
    """gen-data and build-cache."""

    def test_cache_matches_dataset(self, built_workspace, tiny_run_config):
        """The cache manifest records the dataset it was built from."""
        dataset = load_dataset(built_workspace / "dataset")
        manifest = load_manifest(built_workspace / "cache")
        cache = load_cache(built_workspace / "cache")

        assert manifest.dataset_hash == dataset.content_hash()
        assert manifest.classes == [0, 1]
        assert manifest.count_per_class == 2
        for class_label, records in cache.records.items():
            assert len(records) == 2
            for record in records:
                assert record.class_label == class_label
                assert record.latent.shape == (2, 2, 2)
                assert record.image.shape == (3, 16, 16)

    def test_rerun_is_noop(self, workspace, tiny_run_config):
        """Both data stages skip when their outputs exist."""
        before = (workspace / "cache" / "manifest.json").read_bytes()

        assert cmd_gen_data(tiny_run_config, workspace).skipped
        assert cmd_build_cache(tiny_run_config, workspace).skipped
        assert (workspace / "cache" / "manifest.json").read_bytes() == before

    def test_cache_needs_dataset(self, tmp_path, tiny_run_config):
        """build-cache before gen-data names the missing stage."""
        with pytest.raises(MissingArtifactError, match="gen-data"):
            cmd_build_cache(tiny_run_config, tmp_path)

    def test_cache_from_other_dataset_rejected(self, workspace, tiny_run_config):
        """A cache built from another dataset is not used for training."""
        other = tiny_run_config.model_copy(update={"seed": 11})
        cmd_gen_data(other, workspace, force=True)

        with pytest.raises(ArtifactError, match="different dataset"):
            cmd_train(other, workspace)


class TestTrainAndEval:
    """train, eval and report on a built workspace."""

    def test_train_writes_checkpoint_and_report(self, workspace, tiny_run_config):
        """A checkpoint with EMA shadow and a JSONL report with a summary."""
        outcome = cmd_train(tiny_run_config, workspace)

        assert not outcome.skipped
        models, ema, metadata = load_models(workspace / "checkpoints" / MODEL_CHECKPOINT)
        assert models.num_classes == 2
        assert ema is not None
        assert metadata["mode"] == "flier"
        assert metadata["shots"] == 2

        text = (workspace / "reports" / TRAIN_REPORT_FILE).read_text()
        report = TrainReport.from_jsonl(text)
        # 2-shot doubles the single configured epoch
        assert report.summary.epochs_run == 2
        assert all(r.test_top1_raw is not None for r in report.epochs)

    def test_train_is_deterministic(self, workspace, tmp_path, built_workspace, tiny_run_config):
        """Two runs from the same inputs write byte-identical checkpoints."""
        import shutil

        other = tmp_path / "other"
        shutil.copytree(built_workspace, other)
        cmd_train(tiny_run_config, workspace)
        cmd_train(tiny_run_config, other)

        path = f"checkpoints/{MODEL_CHECKPOINT}"
        assert (workspace / path).read_bytes() == (other / path).read_bytes()

    def test_train_skips_then_forces(self, workspace, tiny_run_config):
        """Existing outputs are kept unless forced."""
        cmd_train(tiny_run_config, workspace)
        assert cmd_train(tiny_run_config, workspace).skipped
        assert not cmd_train(tiny_run_config, workspace, force=True).skipped

    def test_finetune_needs_no_cache(self, tmp_path, tiny_run_config):
        """Fine-tuning trains from the dataset alone."""
        cmd_gen_data(tiny_run_config, tmp_path)
        outcome = cmd_train(tiny_run_config, tmp_path, mode=TrainMode.FINETUNE)
        assert "finetune" in outcome.message

    def test_eval_reports_raw_and_ema(self, workspace, tiny_run_config):
        """eval.json carries both results, the chosen weights and parameter counts."""
        cmd_train(tiny_run_config, workspace)
        cmd_eval(tiny_run_config, workspace)

        payload = json.loads((workspace / "reports" / EVAL_REPORT_FILE).read_text())
        assert set(payload["results"]) == {"raw", "ema"}
        assert payload["weights_used"] in ("raw", "ema")
        assert payload["param_counts"]["latent_encoder"] < payload["param_counts"]["image_encoder"]
        dataset = load_dataset(workspace / "dataset")
        assert payload["test_split_hash"] == dataset.test_split_hash()

    def test_eval_is_repeatable(self, workspace, tiny_run_config):
        """Evaluating twice writes the same bytes."""
        cmd_train(tiny_run_config, workspace)
        path = workspace / "reports" / EVAL_REPORT_FILE
        cmd_eval(tiny_run_config, workspace)
        first = path.read_bytes()
        cmd_eval(tiny_run_config, workspace)
        assert path.read_bytes() == first

    def test_eval_before_train(self, workspace, tiny_run_config):
        """No checkpoint: eval points to train and writes nothing."""
        with pytest.raises(MissingArtifactError, match="train"):
            cmd_eval(tiny_run_config, workspace)
        assert not (workspace / "reports" / EVAL_REPORT_FILE).exists()

    def test_corrupted_checkpoint(self, workspace, tiny_run_config):
        """A damaged checkpoint is a parse error and no report is written."""
        cmd_train(tiny_run_config, workspace)
        path = workspace / "checkpoints" / MODEL_CHECKPOINT
        data = bytearray(path.read_bytes())
        data[-1] ^= 0xFF
        path.write_bytes(bytes(data))

        with pytest.raises(ArtifactError, match="parse error"):
            cmd_eval(tiny_run_config, workspace)
        assert not (workspace / "reports" / EVAL_REPORT_FILE).exists()


class TestAblateAndReport:
    """ablate and report."""

    def test_ablation_grid_written(self, workspace, tiny_run_config):
        """One cell per (α, shots, seed); all four report files exist."""
        outcome = cmd_ablate(tiny_run_config, workspace, AblationAxis.ALPHA)

        assert set(outcome.outputs) == {"grid", "csv", "summary", "table"}
        grid = load_grid(outcome.outputs["grid"])
        assert len(grid.cells) == 1
        assert grid.cells[0].axis_value == "0.5"
        assert grid.shared_test_split()
        assert "shot-2" in outcome.message

    def test_report_renders_everything(self, workspace, tiny_run_config):
        """report covers saved grids, the evaluation and the train report."""
        cmd_train(tiny_run_config, workspace)
        cmd_eval(tiny_run_config, workspace)
        cmd_ablate(tiny_run_config, workspace, AblationAxis.DATA)

        outcome = cmd_report(tiny_run_config, workspace)

        assert "== ablation_data_" in outcome.message
        assert "== evaluation" in outcome.message
        assert "== training" in outcome.message
        assert "flier - finetune" in outcome.message
