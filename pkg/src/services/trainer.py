# src/services/trainer.py
"""
Joint Training Engine

Two-phase training of the image and latent branches on one episode:

- phase V: support images through Ψ_v + W_v, loss L_V
- phase G: generated images through Ψ_v + W_v (L_V') and their latents
  through Ψ_l + W_l (L_LG'), combined into L_G by the latent factor

Both phases run once per epoch in the configured order and share one
cosine schedule. The baselines reuse the same loop: fine-tuning skips
phase G, AugData runs phase G without the latent branch.

Version: 1.0.0
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.models.config import ModelConfig, PhaseOrder, TrainConfig, TrainMode
from src.models.data import Episode
from src.models.reports import EpochRecord, TrainReport, TrainSummary, WeightsUsed
from src.nn.encoders import FlierModels
from src.services.augmentation import augment
from src.services.evaluator import evaluate_best
from src.services.losses import joint_loss, smoothed_cross_entropy
from src.services.optim import AdamW, EmaShadow, cosine_lr, layer_learning_rates
from src.tensor.tape import Tape, backward
from src.tensor.tensor import Tensor
from src.utils.constants import LOW_SHOT_SETTINGS
from src.utils.errors import EpisodeError, NumericalDivergenceError
from src.utils.logging import get_logger
from src.utils.seeding import derive_seed, shuffled_batches, stream

logger = get_logger(__name__)

TestSet = Tuple[np.ndarray, np.ndarray]

PHASE_V = "V"
PHASE_G = "G"


@dataclass
class TrainResult:
    """Trained models (raw weights), their EMA shadow and the report."""

    models: FlierModels
    ema: EmaShadow
    report: TrainReport


@dataclass
class _PhaseLosses:
    loss_v: List[float] = field(default_factory=list)
    loss_v_prime: List[float] = field(default_factory=list)
    loss_lg_prime: List[float] = field(default_factory=list)
    loss_g: List[float] = field(default_factory=list)


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def init_models(cfg: ModelConfig, num_classes: int, seed: int) -> FlierModels:
    """Fresh Ψ_v, W_v, Ψ_l, W_l from the model geometry."""
    return FlierModels.init(
        stream(seed, "models", "init"),
        num_classes,
        cfg.image_size,
        cfg.image_widths,
        cfg.latent_channels,
        cfg.latent_size,
        cfg.latent_widths,
    )


def effective_epochs(cfg: TrainConfig, shots: int) -> int:
    """Configured epochs, multiplied for the 1- and 2-shot settings."""
    if shots in LOW_SHOT_SETTINGS:
        return cfg.epochs * cfg.low_shot_epoch_multiplier
    return cfg.epochs


class _JointTrainer:
    """One training run; owns its optimizer, EMA shadow and seed streams."""

    def __init__(
        self,
        episode: Episode,
        models: FlierModels,
        cfg: TrainConfig,
        mode: TrainMode,
        test_set: Optional[TestSet],
    ) -> None:
        self.episode = episode
        self.models = models
        self.cfg = cfg
        self.mode = mode
        self.test_set = test_set

        self.run_g = mode != TrainMode.FINETUNE and cfg.joint_phase
        self.use_latent = self.run_g and mode == TrainMode.FLIER and cfg.latent_branch
        if self.run_g and not episode.has_generated:
            raise EpisodeError(f"{mode.value} training needs generated data in the episode")

        self.image_names = list(models.image_branch)
        self.latent_names = list(models.latent_branch)
        self.params = models.params

        # LLRD scales per branch: each probe sits at the top of its own branch
        self.lr_scales: Dict[str, float] = {}
        self.lr_scales.update(layer_learning_rates(models.image_branch, 1.0, cfg.llrd_decay))
        self.lr_scales.update(layer_learning_rates(models.latent_branch, 1.0, cfg.llrd_decay))

        self.optimizer = AdamW(
            self.params,
            cfg.weight_decay,
            tuple(cfg.adam_betas),
            cfg.adam_eps,
            exclude_vectors=cfg.exclude_bias_decay,
        )
        self.ema = EmaShadow(self.params, cfg.ema_momentum)

        self.batch_v = min(cfg.batch_size, episode.train_images.shape[0])
        self.batch_g = min(cfg.batch_size, max(episode.generated_images.shape[0], 1))
        self.epochs = effective_epochs(cfg, episode.shots)
        steps_v = math.ceil(episode.train_images.shape[0] / self.batch_v)
        steps_g = (
            math.ceil(episode.generated_images.shape[0] / self.batch_g) if self.run_g else 0
        )
        self.total_steps = self.epochs * (steps_v + steps_g)
        self.step = 0

        self.rng_v = stream(cfg.seed, "train", "batches", PHASE_V)
        self.rng_g = stream(cfg.seed, "train", "batches", PHASE_G)

    # -------------------------------------------------------------------------

    def _phase_g_names(self) -> List[str]:
        """Parameters with a non-zero weight in L_G."""
        if not self.use_latent:
            return self.image_names
        names: List[str] = []
        if self.cfg.alpha < 1.0:
            names.extend(self.image_names)
        if self.cfg.alpha > 0.0:
            names.extend(self.latent_names)
        return names

    def _learning_rates(self, names: List[str]) -> Dict[str, float]:
        lr = cosine_lr(self.step, self.total_steps, self.cfg.base_lr)
        return {name: lr * self.lr_scales[name] for name in names}

    def _augmented(self, images: np.ndarray, phase: str, epoch: int, batch: int) -> Tensor:
        seed = derive_seed(self.cfg.seed, "train", "augment", phase, epoch, batch)
        return Tensor.wrap(augment(images, self.cfg.augment_policy, seed))

    def _check_finite(self, value: float, epoch: int, phase: str) -> None:
        if not np.isfinite(value):
            logger.error(
                "training_diverged", epoch=epoch, phase=phase, step=self.step, value=value
            )
            raise NumericalDivergenceError(
                "train", epoch=epoch, phase=phase, step=self.step, value=value
            )

    def _apply(self, loss: Tensor, tape: Tape, names: List[str]) -> None:
        backward(loss, tape, self.params)
        self.optimizer.step(self._learning_rates(names), names)
        self.ema.update(self.params, names)
        self.step += 1

    # -------------------------------------------------------------------------

    def _run_phase_v(self, epoch: int, losses: _PhaseLosses) -> None:
        episode, cfg = self.episode, self.cfg
        count = episode.train_images.shape[0]
        for b, batch in enumerate(shuffled_batches(count, self.batch_v, self.rng_v)):
            images = self._augmented(episode.train_images[batch], PHASE_V, epoch, b)
            with Tape() as tape:
                loss = smoothed_cross_entropy(
                    self.models.image_logits(images),
                    episode.train_labels[batch],
                    cfg.epsilon,
                    cfg.gamma,
                )
            value = loss.item()
            self._check_finite(value, epoch, PHASE_V)
            self._apply(loss, tape, self.image_names)
            losses.loss_v.append(value)
            logger.debug("train_step", phase=PHASE_V, epoch=epoch, step=self.step, loss=value)

    def _run_phase_g(self, epoch: int, losses: _PhaseLosses) -> None:
        episode, cfg = self.episode, self.cfg
        names = self._phase_g_names()
        count = episode.generated_images.shape[0]
        for b, batch in enumerate(shuffled_batches(count, self.batch_g, self.rng_g)):
            labels = episode.generated_labels[batch]
            images = self._augmented(episode.generated_images[batch], PHASE_G, epoch, b)
            with Tape() as tape:
                loss_v_prime = smoothed_cross_entropy(
                    self.models.image_logits(images), labels, cfg.epsilon, cfg.gamma
                )
                if self.use_latent:
                    loss_lg_prime = smoothed_cross_entropy(
                        self.models.latent_logits(Tensor.wrap(episode.latents[batch])),
                        labels,
                        cfg.epsilon,
                        cfg.gamma,
                    )
                    loss = joint_loss(loss_v_prime, loss_lg_prime, cfg.alpha)
                else:
                    loss = loss_v_prime
            value = loss.item()
            self._check_finite(value, epoch, PHASE_G)
            self._apply(loss, tape, names)
            losses.loss_g.append(value)
            losses.loss_v_prime.append(loss_v_prime.item())
            if self.use_latent:
                losses.loss_lg_prime.append(loss_lg_prime.item())
            logger.debug("train_step", phase=PHASE_G, epoch=epoch, step=self.step, loss=value)

    # -------------------------------------------------------------------------

    def _epoch_record(self, epoch: int, losses: _PhaseLosses) -> EpochRecord:
        lr = cosine_lr(min(self.step, self.total_steps), self.total_steps, self.cfg.base_lr)
        active = self.image_names + (self.latent_names if self.use_latent else [])
        record = EpochRecord(
            epoch=epoch,
            loss_v=_mean(losses.loss_v),
            loss_v_prime=_mean(losses.loss_v_prime),
            loss_lg_prime=_mean(losses.loss_lg_prime),
            loss_g=_mean(losses.loss_g),
            lr_top=lr,
            lr_bottom=lr * min(self.lr_scales[name] for name in active),
            steps=self.step,
        )
        if self.test_set is not None:
            raw, shadow, _ = evaluate_best(
                self.models, self.test_set[0], self.test_set[1], self.cfg.gamma, self.ema
            )
            record.test_top1_raw = raw.top1
            record.test_top1_ema = shadow.top1 if shadow is not None else None
        return record

    def run(self) -> TrainResult:
        order = [PHASE_V, PHASE_G]
        if self.cfg.phase_order == PhaseOrder.G_FIRST:
            order.reverse()

        logger.info(
            "training_started",
            mode=self.mode.value,
            shots=self.episode.shots,
            epochs=self.epochs,
            total_steps=self.total_steps,
            phase_g=self.run_g,
            latent_branch=self.use_latent,
            alpha=self.cfg.alpha,
        )
        records: List[EpochRecord] = []
        for epoch in range(self.epochs):
            losses = _PhaseLosses()
            for phase in order:
                if phase == PHASE_V:
                    self._run_phase_v(epoch, losses)
                elif self.run_g:
                    self._run_phase_g(epoch, losses)
            record = self._epoch_record(epoch, losses)
            records.append(record)
            logger.info(
                "epoch_completed",
                epoch=epoch,
                loss_v=record.loss_v,
                loss_g=record.loss_g,
                lr_top=record.lr_top,
                test_top1_raw=record.test_top1_raw,
            )

        report = TrainReport(epochs=records, summary=self._summary(records))
        logger.info(
            "training_completed",
            mode=self.mode.value,
            steps=self.step,
            final_loss_v=report.summary.final_loss_v,
            final_loss_g=report.summary.final_loss_g,
        )
        return TrainResult(self.models, self.ema, report)

    def _summary(self, records: List[EpochRecord]) -> TrainSummary:
        summary = TrainSummary(
            mode=self.mode,
            epochs_run=len(records),
            total_steps=self.step,
            initial_loss_v=records[0].loss_v if records else None,
            final_loss_v=records[-1].loss_v if records else None,
            initial_loss_g=records[0].loss_g if records else None,
            final_loss_g=records[-1].loss_g if records else None,
        )
        if records and self.test_set is not None:
            last = records[-1]
            summary.test_top1_raw = last.test_top1_raw
            summary.test_top1_ema = last.test_top1_ema
            ema_better = last.test_top1_ema is not None and last.test_top1_ema > last.test_top1_raw
            summary.best_weights = WeightsUsed.EMA if ema_better else WeightsUsed.RAW
        return summary


def train_flier(
    episode: Episode,
    models: FlierModels,
    cfg: TrainConfig,
    test_set: Optional[TestSet] = None,
    mode: TrainMode = TrainMode.FLIER,
) -> TrainResult:
    """
    Train the image and latent branches jointly on one episode.

    Models are updated in place. Parameters whose loss weight in a phase
    is zero are left out of that phase's optimizer and EMA step, so α = 0
    leaves Ψ_l and W_l at their initial values and α = 1 keeps phase G off
    Ψ_v and W_v.

    Args:
        episode: Support images plus K' generated images and latents per class
        models: Ψ_v, W_v, Ψ_l, W_l (fresh or loaded)
        cfg: Training hyperparameters; cfg.seed drives batch order and
            augmentation
        test_set: Optional (images, labels) evaluated after every epoch with
            raw and EMA weights
        mode: Protocol; FINETUNE skips phase G, AUGDATA drops the latent branch

    Returns:
        TrainResult with the per-epoch report

    Raises:
        EpisodeError: If phase G is enabled and the episode has no generated data
        NumericalDivergenceError: If a loss becomes NaN/Inf
    """
    return _JointTrainer(episode, models, cfg, mode, test_set).run()


def train_baseline_finetune(
    episode: Episode,
    models: FlierModels,
    cfg: TrainConfig,
    use_generated: bool,
    test_set: Optional[TestSet] = None,
) -> TrainResult:
    """
    Image-branch-only baselines.

    use_generated=False trains on the support images alone (fine-tuning);
    use_generated=True adds a phase over the generated images without any
    latent loss (AugData). The latent branch is never touched.
    """
    mode = TrainMode.AUGDATA if use_generated else TrainMode.FINETUNE
    return train_flier(episode, models, cfg, test_set=test_set, mode=mode)
