# src/services/ablation.py
"""
Ablation Harness

Grids of independent training runs over one axis (latent factor, shot
count, data mode or phase order) × shots × seeds. Every cell samples its
episode, initializes fresh models, trains, and evaluates on the shared
test split. A failing cell is recorded and the sweep continues.

Cells may run in a process pool; results are ordered by cell index, so a
grid does not depend on scheduling.

Version: 1.0.0
"""
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.models.config import AblationAxis, ModelConfig, PhaseOrder, TrainConfig, TrainMode
from src.models.data import Episode, GenerationCache, SyntheticDataset
from src.models.reports import (
    AblationCell,
    AblationGrid,
    AlphaShapeCheck,
    CellStatus,
    DirectionCheck,
)
from src.services.episode_sampler import sample_episode
from src.services.evaluator import evaluate_best
from src.services.trainer import init_models, train_flier
from src.utils.constants import (
    ABLATION_ALPHAS,
    ALPHA_SHAPE_INTERIOR,
    ALPHA_SHAPE_REFERENCE,
    SIGN_TEST_MIN_FRACTION,
)
from src.utils.logging import get_logger
from src.utils.seeding import derive_seed

logger = get_logger(__name__)

# Source handed to pool workers once, at start-up
_worker_source: Optional["EpisodeSource"] = None


@dataclass
class EpisodeSource:
    """
    Everything a cell needs besides its own settings: the dataset, the
    generation cache and the model geometry.
    """

    dataset: SyntheticDataset
    cache: Optional[GenerationCache]
    model: ModelConfig

    def episode(self, shots: int, seed: int, include_generated: bool) -> Episode:
        """
        Episode of one (shots, seed) pair.

        The support set depends only on (shots, seed), so cells that differ
        in mode or hyperparameters train on the same support images.
        """
        return sample_episode(
            self.dataset,
            self.cache,
            shots,
            derive_seed(seed, "episode", shots),
            include_generated=include_generated,
        )


@dataclass(frozen=True)
class CellPlan:
    index: int
    axis_value: str
    shots: int
    seed: int
    mode: TrainMode
    train: TrainConfig


def _run_cell(plan: CellPlan, source: Optional[EpisodeSource] = None) -> AblationCell:
    source = source if source is not None else _worker_source
    if source is None:
        raise RuntimeError("ablation worker started without an episode source")
    cell = AblationCell(
        index=plan.index,
        axis_value=plan.axis_value,
        shots=plan.shots,
        seed=plan.seed,
        test_split_hash=source.dataset.test_split_hash(),
    )
    try:
        episode = source.episode(
            plan.shots, plan.seed, include_generated=plan.mode != TrainMode.FINETUNE
        )
        models = init_models(source.model, source.dataset.num_classes, plan.seed)
        result = train_flier(episode, models, plan.train, mode=plan.mode)
        _, _, best = evaluate_best(
            result.models,
            source.dataset.test_images,
            source.dataset.test_labels,
            plan.train.gamma,
            result.ema,
        )
    except Exception as e:
        logger.warning(
            "ablation_cell_failed",
            index=plan.index,
            axis_value=plan.axis_value,
            shots=plan.shots,
            seed=plan.seed,
            error=str(e),
        )
        cell.status = CellStatus.ERROR
        cell.error = f"{type(e).__name__}: {e}"
        return cell

    cell.top1 = best.top1
    cell.top5 = best.top5
    cell.weights_used = best.weights_used
    cell.loss_v = result.report.loss_trajectory("loss_v")
    cell.loss_g = result.report.loss_trajectory("loss_g")
    logger.info(
        "ablation_cell_completed",
        index=plan.index,
        axis_value=plan.axis_value,
        shots=plan.shots,
        seed=plan.seed,
        top1=cell.top1,
    )
    return cell


def _init_worker(source: EpisodeSource) -> None:
    global _worker_source
    _worker_source = source


def run_cells(
    plans: Sequence[CellPlan], source: EpisodeSource, jobs: int = 1
) -> List[AblationCell]:
    """Run cells in-process (jobs=1) or in a pool of at most jobs workers."""
    if jobs < 1:
        raise ValueError(f"jobs must be positive, got {jobs}")
    if jobs == 1 or len(plans) <= 1:
        cells = [_run_cell(plan, source) for plan in plans]
    else:
        with ProcessPoolExecutor(
            max_workers=min(jobs, len(plans)),
            initializer=_init_worker,
            initargs=(source,),
        ) as pool:
            cells = list(pool.map(_run_cell, plans))
    return sorted(cells, key=lambda c: c.index)


def _cell_train_config(base: TrainConfig, seed: int, **updates: object) -> TrainConfig:
    return base.model_copy(update={"seed": derive_seed(seed, "train"), **updates})


def _grid(
    axis: AblationAxis,
    values: Dict[str, Dict[str, object]],
    source: EpisodeSource,
    cfg: TrainConfig,
    seeds: Sequence[int],
    shots: Sequence[int],
    jobs: int,
) -> AblationGrid:
    """
    Build and run the cells of one axis.

    values maps each axis value to its mode ("mode") and TrainConfig
    updates; cells are enumerated value-major, then shots, then seeds.
    """
    if not seeds:
        raise ValueError("an ablation needs at least one seed")
    if not shots:
        raise ValueError("an ablation needs at least one shot count")
    plans: List[CellPlan] = []
    for value, settings in values.items():
        settings = dict(settings)
        mode = settings.pop("mode", TrainMode.FLIER)
        for k in shots:
            for seed in seeds:
                plans.append(
                    CellPlan(
                        index=len(plans),
                        axis_value=value,
                        shots=k,
                        seed=seed,
                        mode=mode,
                        train=_cell_train_config(cfg, seed, **settings),
                    )
                )
    logger.info(
        "ablation_started",
        axis=axis.value,
        values=list(values),
        shots=list(shots),
        seeds=len(seeds),
        cells=len(plans),
        jobs=jobs,
    )
    grid = AblationGrid(
        axis=axis,
        axis_values=list(values),
        shots=list(shots),
        seeds=list(seeds),
        test_split_hash=source.dataset.test_split_hash(),
        cells=run_cells(plans, source, jobs),
    )
    if not grid.shared_test_split():
        raise RuntimeError("ablation cells evaluated on different test splits")
    failed = sum(1 for c in grid.cells if c.status == CellStatus.ERROR)
    logger.info("ablation_completed", axis=axis.value, cells=len(grid.cells), failed=failed)
    return grid


# =============================================================================
# SWEEPS
# =============================================================================


def sweep_latent_factor(
    source: EpisodeSource,
    cfg: TrainConfig,
    seeds: Sequence[int],
    shots: Sequence[int],
    alphas: Sequence[float] = ABLATION_ALPHAS,
    jobs: int = 1,
) -> AblationGrid:
    """
    One joint-training run per (α, shots, seed).

    When the sweep includes the reference α, the grid carries one
    AlphaShapeCheck per shot count.
    """
    for alpha in alphas:
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"latent factor alpha must lie in [0, 1], got {alpha}")
    values = {f"{a:g}": {"alpha": float(a)} for a in alphas}
    grid = _grid(AblationAxis.ALPHA, values, source, cfg, seeds, shots, jobs)
    if f"{ALPHA_SHAPE_REFERENCE:g}" in values:
        grid.alpha_shape_checks = [alpha_shape_check(grid, k) for k in grid.shots]
    return grid


def sweep_shots(
    source: EpisodeSource,
    cfg: TrainConfig,
    seeds: Sequence[int],
    shots: Sequence[int],
    jobs: int = 1,
) -> AblationGrid:
    """Joint training at every shot count with the configured settings."""
    values = {TrainMode.FLIER.value: {}}
    return _grid(AblationAxis.SHOTS, values, source, cfg, seeds, shots, jobs)


def ablate_data_mode(
    source: EpisodeSource,
    cfg: TrainConfig,
    seeds: Sequence[int],
    shots: Sequence[int],
    jobs: int = 1,
) -> AblationGrid:
    """
    Fine-tuning vs AugData vs joint training, paired by seed.

    The grid carries one DirectionCheck per shot count.
    """
    values = {mode.value: {"mode": mode} for mode in TrainMode}
    grid = _grid(AblationAxis.DATA, values, source, cfg, seeds, shots, jobs)
    grid.direction_checks = [direction_check(grid, k) for k in grid.shots]
    return grid


def ablate_stage_order(
    source: EpisodeSource,
    cfg: TrainConfig,
    seeds: Sequence[int],
    shots: Sequence[int],
    jobs: int = 1,
) -> AblationGrid:
    """
    V-first vs G-first phase order.

    grid.extra["order_gap"] holds, per shot count, the mean absolute top-1
    difference between the two orders over paired seeds.
    """
    values = {order.value: {"phase_order": order} for order in PhaseOrder}
    grid = _grid(AblationAxis.ORDER, values, source, cfg, seeds, shots, jobs)
    gaps: Dict[str, Optional[float]] = {}
    for k in grid.shots:
        first = _top1_by_seed(grid, PhaseOrder.V_FIRST.value, k)
        second = _top1_by_seed(grid, PhaseOrder.G_FIRST.value, k)
        paired = sorted(set(first) & set(second))
        gaps[str(k)] = (
            float(np.mean([abs(first[s] - second[s]) for s in paired])) if paired else None
        )
    grid.extra["order_gap"] = gaps
    return grid


# =============================================================================
# DIRECTION CHECK
# =============================================================================


def _top1_by_seed(grid: AblationGrid, axis_value: str, shots: int) -> Dict[int, float]:
    return {
        c.seed: c.top1
        for c in grid.cells
        if c.axis_value == axis_value and c.shots == shots and c.status == CellStatus.OK
    }


def direction_check(grid: AblationGrid, shots: int) -> DirectionCheck:
    """
    Paired-seed comparison of joint training against both baselines.

    ordering_holds: mean flier >= mean augdata >= mean finetune.
    sign_test_passes: flier beats finetune on at least the configured
    fraction of paired seeds. Both are reported, never enforced.
    """
    flier = _top1_by_seed(grid, TrainMode.FLIER.value, shots)
    augdata = _top1_by_seed(grid, TrainMode.AUGDATA.value, shots)
    finetune = _top1_by_seed(grid, TrainMode.FINETUNE.value, shots)

    def mean(values: Dict[int, float]) -> Optional[float]:
        return float(np.mean(list(values.values()))) if values else None

    paired = sorted(set(flier) & set(finetune))
    check = DirectionCheck(
        shots=shots,
        seeds=len(paired),
        mean_flier=mean(flier),
        mean_augdata=mean(augdata),
        mean_finetune=mean(finetune),
    )
    if paired:
        diffs = [flier[s] - finetune[s] for s in paired]
        check.mean_improvement = float(np.mean(diffs))
        check.wins = sum(1 for d in diffs if d > 0)
        check.sign_test_passes = check.wins >= math.ceil(SIGN_TEST_MIN_FRACTION * len(paired))
    if None not in (check.mean_flier, check.mean_augdata, check.mean_finetune):
        check.ordering_holds = check.mean_flier >= check.mean_augdata >= check.mean_finetune
    return check


def alpha_shape_check(
    grid: AblationGrid,
    shots: int,
    interior: Sequence[float] = ALPHA_SHAPE_INTERIOR,
    reference: float = ALPHA_SHAPE_REFERENCE,
) -> AlphaShapeCheck:
    """
    Whether every interior α matches or beats the reference α in mean top-1.

    A missing or fully failed α leaves its mean unset and the check false.
    Reported, never enforced.
    """

    def mean(alpha: float) -> Optional[float]:
        scores = _top1_by_seed(grid, f"{alpha:g}", shots)
        return float(np.mean(list(scores.values()))) if scores else None

    check = AlphaShapeCheck(
        shots=shots,
        reference_alpha=f"{reference:g}",
        reference_mean=mean(reference),
        interior_means={f"{a:g}": mean(a) for a in interior},
    )
    means = list(check.interior_means.values())
    if check.reference_mean is not None and None not in means:
        check.holds = all(m >= check.reference_mean for m in means)
    return check


def run_ablation(
    axis: AblationAxis,
    source: EpisodeSource,
    cfg: TrainConfig,
    seeds: Sequence[int],
    shots: Sequence[int],
    alphas: Sequence[float] = ABLATION_ALPHAS,
    jobs: int = 1,
) -> AblationGrid:
    """Dispatch to the sweep of one axis."""
    if axis == AblationAxis.ALPHA:
        return sweep_latent_factor(source, cfg, seeds, shots, alphas, jobs)
    if axis == AblationAxis.SHOTS:
        return sweep_shots(source, cfg, seeds, shots, jobs)
    if axis == AblationAxis.DATA:
        return ablate_data_mode(source, cfg, seeds, shots, jobs)
    return ablate_stage_order(source, cfg, seeds, shots, jobs)
