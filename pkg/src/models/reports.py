# src/models/reports.py
"""
Pydantic Models for Reports and Manifests

Training reports, evaluation results, ablation grids and the manifests
written next to persisted artifacts. All serialize deterministically
(sorted keys, Python float repr).

Version: 1.0.0
"""
import json
import math
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from src.models.config import AblationAxis, TrainMode


class WeightsUsed(str, Enum):
    """Which weight set produced an evaluation."""

    RAW = "raw"
    EMA = "ema"


class CellStatus(str, Enum):
    OK = "ok"
    ERROR = "error"


def dump_json_line(model: BaseModel) -> str:
    """One compact, key-sorted JSON line."""
    return json.dumps(model.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


# =============================================================================
# TRAINING
# =============================================================================


class EpochRecord(BaseModel):
    """Per-epoch losses, learning rates and accuracies."""

    epoch: int = Field(..., ge=0)
    loss_v: Optional[float] = Field(None, description="L(θ)_V, phase V mean")
    loss_v_prime: Optional[float] = Field(None, description="L(θ)_V', phase G mean")
    loss_lg_prime: Optional[float] = Field(None, description="L(θ)_LG', phase G mean")
    loss_g: Optional[float] = Field(None, description="L(θ)_G, phase G mean")
    lr_top: float = Field(..., ge=0.0, description="Probe learning rate at epoch end")
    lr_bottom: float = Field(..., ge=0.0, description="Deepest-decayed layer learning rate")
    steps: int = Field(..., ge=0, description="Optimizer steps completed so far")
    test_top1_raw: Optional[float] = None
    test_top1_ema: Optional[float] = None


class TrainSummary(BaseModel):
    """Final record of a training run."""

    mode: TrainMode
    epochs_run: int
    total_steps: int
    initial_loss_v: Optional[float] = None
    final_loss_v: Optional[float] = None
    initial_loss_g: Optional[float] = None
    final_loss_g: Optional[float] = None
    test_top1_raw: Optional[float] = None
    test_top1_ema: Optional[float] = None
    best_weights: Optional[WeightsUsed] = None


class TrainReport(BaseModel):
    """One EpochRecord per epoch, then the summary."""

    epochs: List[EpochRecord] = Field(default_factory=list)
    summary: TrainSummary

    def loss_trajectory(self, name: str) -> List[Optional[float]]:
        return [getattr(record, name) for record in self.epochs]

    def to_jsonl(self) -> str:
        lines = [dump_json_line(record) for record in self.epochs]
        lines.append(
            json.dumps(
                {"summary": self.summary.model_dump(mode="json")},
                sort_keys=True,
                separators=(",", ":"),
            )
        )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainReport":
        epochs: List[EpochRecord] = []
        summary: Optional[TrainSummary] = None
        for line in text.splitlines():
            if not line.strip():
                continue
            payload = json.loads(line)
            if "summary" in payload:
                summary = TrainSummary.model_validate(payload["summary"])
            else:
                epochs.append(EpochRecord.model_validate(payload))
        if summary is None:
            raise ValueError("train report has no summary record")
        return cls(epochs=epochs, summary=summary)


# =============================================================================
# EVALUATION
# =============================================================================


class EvalResult(BaseModel):
    """Top-1 / top-5 accuracy on the test split."""

    top1: float = Field(..., ge=0.0, le=1.0)
    top5: float = Field(..., ge=0.0, le=1.0)
    per_class: List[float] = Field(default_factory=list)
    n_test: int = Field(..., ge=1)
    weights_used: WeightsUsed = WeightsUsed.RAW

    @model_validator(mode="after")
    def validate_topk(self) -> "EvalResult":
        """top-5 can never be below top-1."""
        if self.top5 + 1e-12 < self.top1:
            raise ValueError(f"top5 {self.top5} < top1 {self.top1}")
        return self


class ParamCounts(BaseModel):
    """Trainable scalars per component."""

    image_encoder: int
    image_probe: int
    latent_encoder: int
    latent_probe: int

    @property
    def encoder_ratio(self) -> float:
        """count(Ψ_l) / count(Ψ_v)"""
        return self.latent_encoder / self.image_encoder


# =============================================================================
# ABLATION
# =============================================================================


class AblationCell(BaseModel):
    """One (axis value, shots, seed) run."""

    index: int = Field(..., ge=0)
    axis_value: str
    shots: int
    seed: int
    status: CellStatus = CellStatus.OK
    top1: Optional[float] = None
    top5: Optional[float] = None
    weights_used: Optional[WeightsUsed] = None
    test_split_hash: str = ""
    loss_v: List[Optional[float]] = Field(default_factory=list)
    loss_g: List[Optional[float]] = Field(default_factory=list)
    error: Optional[str] = None


class CellSummary(BaseModel):
    """Mean ± std over the seeds of one (axis value, shots) cell."""

    axis_value: str
    shots: int
    n_ok: int
    n_failed: int
    mean_top1: Optional[float] = None
    std_top1: Optional[float] = None
    mean_top5: Optional[float] = None
    std_top5: Optional[float] = None


class DirectionCheck(BaseModel):
    """
    Paired-seed comparison of flier vs augdata vs finetune at one shot count.

    Reported as measured; nothing here is asserted.
    """

    shots: int
    seeds: int
    mean_flier: Optional[float] = None
    mean_augdata: Optional[float] = None
    mean_finetune: Optional[float] = None
    mean_improvement: Optional[float] = Field(
        None, description="mean over paired seeds of top1(flier) - top1(finetune)"
    )
    wins: int = 0
    ordering_holds: bool = False
    sign_test_passes: bool = False


class AlphaShapeCheck(BaseModel):
    """
    Interior-optimum check of a latent-factor sweep at one shot count:
    every interior α must reach at least the mean top-1 of the reference α.
    """

    shots: int
    reference_alpha: str
    reference_mean: Optional[float] = None
    interior_means: Dict[str, Optional[float]] = Field(default_factory=dict)
    holds: bool = False


class AblationGrid(BaseModel):
    """All cells of one ablation, in cell-index order."""

    axis: AblationAxis
    axis_values: List[str]
    shots: List[int]
    seeds: List[int]
    test_split_hash: str
    cells: List[AblationCell] = Field(default_factory=list)
    direction_checks: List[DirectionCheck] = Field(default_factory=list)
    alpha_shape_checks: List[AlphaShapeCheck] = Field(default_factory=list)
    extra: Dict[str, Any] = Field(default_factory=dict)

    def summaries(self) -> List[CellSummary]:
        """Per (axis value, shots) mean and population std over ok seeds."""
        out: List[CellSummary] = []
        for value in self.axis_values:
            for shots in self.shots:
                group = [c for c in self.cells if c.axis_value == value and c.shots == shots]
                ok = [c for c in group if c.status == CellStatus.OK]
                summary = CellSummary(
                    axis_value=value,
                    shots=shots,
                    n_ok=len(ok),
                    n_failed=len(group) - len(ok),
                )
                if ok:
                    top1 = [c.top1 for c in ok]
                    top5 = [c.top5 for c in ok]
                    summary.mean_top1 = _mean(top1)
                    summary.std_top1 = _std(top1)
                    summary.mean_top5 = _mean(top5)
                    summary.std_top5 = _std(top5)
                out.append(summary)
        return out

    def shared_test_split(self) -> bool:
        """True when every completed cell evaluated on the grid's test split."""
        return all(
            c.test_split_hash == self.test_split_hash
            for c in self.cells
            if c.status == CellStatus.OK
        )


def _mean(values: List[float]) -> float:
    return math.fsum(values) / len(values)


def _std(values: List[float]) -> float:
    mu = _mean(values)
    return math.sqrt(math.fsum((v - mu) ** 2 for v in values) / len(values))


# =============================================================================
# MANIFESTS
# =============================================================================


class DatasetManifest(BaseModel):
    """Written next to dataset.bin."""

    version: int
    num_classes: int
    per_class_train: int
    per_class_test: int
    image_size: int
    noise_level: float
    seed: int
    train_seed_range: List[int]
    test_seed_range: List[int]
    class_params: List[Dict[str, Any]]
    content_hash: str
    test_split_hash: str


class CacheManifest(BaseModel):
    """Written next to the per-class generation files."""

    version: int
    classes: List[int]
    count_per_class: int
    seeds: Dict[str, List[int]]
    tokens: Dict[str, List[int]]
    schedule_hash: str
    decoder_hash: str
    dataset_hash: str
    denoiser_validation_mse: Optional[float] = None
    denoiser_initial_mse: Optional[float] = None
    denoiser_converged: Optional[bool] = None
