# src/handlers/commands.py
"""
Pipeline Command Handlers

Orchestrates the pipeline stages behind the command line:
1. gen-data: synthetic dataset
2. build-cache: autoencoder + denoiser, then the generation cache
3. train: one episode, joint (or baseline) training, checkpoint + report
4. eval: raw and EMA accuracy of a checkpoint
5. ablate: one ablation grid (CSV, summary JSON, text table)
6. report: re-render saved grids and evaluations

Every artifact is written atomically, and each command either completes
or leaves its outputs untouched. Rerunning with identical inputs is a
no-op unless force is set.

Version: 1.0.0
"""
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from pydantic import ValidationError

from src.models.config import AblationAxis, RunConfig, TrainMode
from src.models.data import GenerationCache, SyntheticDataset
from src.models.reports import DatasetManifest, EvalResult, TrainReport
from src.nn.checkpoint import (
    load_autoencoder,
    load_denoiser,
    load_models,
    save_autoencoder,
    save_denoiser,
    save_models,
)
from src.services.ablation import EpisodeSource, run_ablation
from src.services.diffusion import (
    NoiseSchedule,
    decoder_digest,
    encode_dataset_latents,
    generate_class_set,
    train_autoencoder,
    train_denoiser,
)
from src.services.episode_sampler import sample_episode
from src.services.evaluator import count_params, evaluate_best
from src.services.generation_cache import (
    cache_complete,
    load_cache,
    load_manifest,
    save_cache,
)
from src.services.optim import EmaShadow
from src.services.reporting import (
    GRID_SUFFIX,
    ReportFormatter,
    find_grids,
    grid_csv,
    load_grid,
    save_grid,
)
from src.services.synthetic_data import load_dataset, make_synthetic_dataset, save_dataset
from src.services.trainer import init_models, train_flier
from src.utils.artifact_store import read_json, write_json_atomic, write_text_atomic
from src.utils.constants import (
    AUTOENCODER_CHECKPOINT,
    DENOISER_CHECKPOINT,
    EVAL_REPORT_FILE,
    MANIFEST_FILE,
    MODEL_CHECKPOINT,
    TRAIN_REPORT_FILE,
)
from src.utils.errors import ArtifactError
from src.utils.logging import bind_logging_context, clear_logging_context, get_logger
from src.utils.seeding import derive_seed

logger = get_logger(__name__)


@dataclass
class CommandOutcome:
    """What a command did: its outputs and a human-readable message."""

    command: str
    message: str
    outputs: Dict[str, str] = field(default_factory=dict)
    skipped: bool = False


@dataclass(frozen=True)
class Workspace:
    """Artifact directories of one run, resolved against the output root."""

    root: Path
    dataset_dir: Path
    cache_dir: Path
    checkpoint_dir: Path
    report_dir: Path

    @classmethod
    def from_config(cls, config: RunConfig, output_root: Path) -> "Workspace":
        root = Path(output_root)

        def resolve(path: str) -> Path:
            candidate = Path(path)
            return candidate if candidate.is_absolute() else root / candidate

        return cls(
            root=root,
            dataset_dir=resolve(config.paths.dataset_dir),
            cache_dir=resolve(config.paths.cache_dir),
            checkpoint_dir=resolve(config.paths.checkpoint_dir),
            report_dir=resolve(config.paths.report_dir),
        )


def _start(command: str, config: RunConfig) -> None:
    clear_logging_context()
    bind_logging_context(command=command, root_seed=config.seed, run_id=uuid.uuid4().hex[:12])
    logger.info("command_started")


def _load_cache_for(ws: Workspace, dataset: SyntheticDataset) -> GenerationCache:
    """Load the cache and check it was generated from this dataset."""
    manifest = load_manifest(ws.cache_dir, "build-cache")
    if manifest.dataset_hash != dataset.content_hash():
        raise ArtifactError(
            ws.cache_dir / MANIFEST_FILE,
            "generation cache was built from a different dataset; rerun 'build-cache --force'",
        )
    return load_cache(ws.cache_dir, "build-cache")


# =============================================================================
# GEN-DATA
# =============================================================================


def cmd_gen_data(config: RunConfig, output_root: Path, force: bool = False) -> CommandOutcome:
    """
    Create and persist the synthetic dataset.

    An existing dataset built from the same settings is kept; one built
    from different settings is only replaced with force.

    Raises:
        ArtifactError: If an incompatible dataset exists and force is unset
    """
    _start("gen-data", config)
    ws = Workspace.from_config(config, output_root)
    ds = config.dataset
    manifest_path = ws.dataset_dir / MANIFEST_FILE

    if manifest_path.exists() and not force:
        try:
            existing = DatasetManifest.model_validate(read_json(manifest_path, "gen-data"))
        except ValidationError as e:
            raise ArtifactError(manifest_path, "parse error: invalid dataset manifest") from e
        expected = (
            ds.num_classes,
            ds.per_class_train,
            ds.per_class_test,
            ds.noise_level,
            config.model.image_size,
            config.seed,
        )
        found = (
            existing.num_classes,
            existing.per_class_train,
            existing.per_class_test,
            existing.noise_level,
            existing.image_size,
            existing.seed,
        )
        if found != expected:
            raise ArtifactError(
                manifest_path, "dataset was built with different settings; rerun with --force"
            )
        logger.info("dataset_exists", content_hash=existing.content_hash)
        return CommandOutcome(
            "gen-data",
            f"dataset already present (content hash {existing.content_hash}); use --force to rebuild",
            {"manifest": str(manifest_path)},
            skipped=True,
        )

    dataset = make_synthetic_dataset(
        ds.num_classes,
        ds.per_class_train,
        ds.per_class_test,
        config.seed,
        ds.noise_level,
        config.model.image_size,
    )
    manifest = save_dataset(ws.dataset_dir, dataset)
    return CommandOutcome(
        "gen-data",
        f"dataset: {manifest.num_classes} classes, {manifest.per_class_train} train / "
        f"{manifest.per_class_test} test per class, content hash {manifest.content_hash}",
        {"manifest": str(manifest_path)},
    )


# =============================================================================
# BUILD-CACHE
# =============================================================================


def cmd_build_cache(config: RunConfig, output_root: Path, force: bool = False) -> CommandOutcome:
    """
    Train the autoencoder and denoiser (unless present), then generate
    count_per_class records for every class.

    Raises:
        MissingArtifactError: If the dataset has not been generated
        NumericalDivergenceError: If diffusion training or sampling diverges
    """
    _start("build-cache", config)
    ws = Workspace.from_config(config, output_root)
    dcfg = config.diffusion

    if cache_complete(ws.cache_dir) and not force:
        logger.info("generation_cache_exists", path=str(ws.cache_dir))
        return CommandOutcome(
            "build-cache",
            "generation cache already present; use --force to rebuild",
            {"manifest": str(ws.cache_dir / MANIFEST_FILE)},
            skipped=True,
        )

    dataset = load_dataset(ws.dataset_dir, "gen-data")
    if force:
        # A half-rebuilt cache must never look complete
        (ws.cache_dir / MANIFEST_FILE).unlink(missing_ok=True)

    ae_path = ws.cache_dir / AUTOENCODER_CHECKPOINT
    if ae_path.exists() and not force:
        autoencoder = load_autoencoder(ae_path)
    else:
        autoencoder = train_autoencoder(
            dataset.train_images, dcfg, derive_seed(config.seed, "diffusion", "autoencoder")
        ).autoencoder
        save_autoencoder(ae_path, autoencoder)

    schedule = NoiseSchedule.from_config(dcfg)
    dn_path = ws.cache_dir / DENOISER_CHECKPOINT
    initial_mse = validation_mse = converged = None
    if dn_path.exists() and not force:
        denoiser = load_denoiser(dn_path)
    else:
        result = train_denoiser(
            encode_dataset_latents(autoencoder, dataset.train_images),
            dataset.train_labels,
            schedule,
            dcfg,
            dataset.num_classes,
            derive_seed(config.seed, "diffusion", "denoiser"),
        )
        denoiser = result.denoiser
        initial_mse, validation_mse = result.initial_mse, result.validation_mse
        converged = result.converged
        save_denoiser(dn_path, denoiser)

    latent_size = config.model.latent_size
    latent_shape = (dcfg.latent_channels, latent_size, latent_size)
    seed_base = derive_seed(config.seed, "diffusion", "generate")
    decoder = autoencoder.decoder
    records = {}
    for class_label in range(dataset.num_classes):
        records[class_label] = generate_class_set(
            denoiser,
            decoder,
            class_label,
            schedule,
            seed_base,
            latent_shape,
            count=dcfg.count_per_class,
            batch_size=dcfg.generation_batch_size,
            variants_per_class=dcfg.variants_per_class,
            x0_clip=dcfg.sampler_x0_clip,
        )
        logger.info("class_generated", class_label=class_label, count=len(records[class_label]))

    cache = GenerationCache(
        records=records,
        schedule_hash=schedule.digest(),
        decoder_hash=decoder_digest(decoder),
    )
    manifest = save_cache(
        ws.cache_dir,
        cache,
        dataset.content_hash(),
        denoiser_initial_mse=initial_mse,
        denoiser_validation_mse=validation_mse,
        denoiser_converged=converged,
    )
    return CommandOutcome(
        "build-cache",
        f"generation cache: {len(manifest.classes)} classes × {manifest.count_per_class} records",
        {"manifest": str(ws.cache_dir / MANIFEST_FILE)},
    )


# =============================================================================
# TRAIN
# =============================================================================


def cmd_train(
    config: RunConfig,
    output_root: Path,
    force: bool = False,
    mode: TrainMode = TrainMode.FLIER,
) -> CommandOutcome:
    """
    Sample one episode, train, and write the checkpoint and train report.

    Raises:
        MissingArtifactError: If the dataset or (for generated-data modes)
            the cache is missing
        InsufficientCacheError: If the cache holds fewer than K records for a class
        NumericalDivergenceError: If training diverges
    """
    _start("train", config)
    ws = Workspace.from_config(config, output_root)
    ckpt_path = ws.checkpoint_dir / MODEL_CHECKPOINT
    report_path = ws.report_dir / TRAIN_REPORT_FILE
    if ckpt_path.exists() and report_path.exists() and not force:
        return CommandOutcome(
            "train",
            "checkpoint and train report already present; use --force to retrain",
            {"checkpoint": str(ckpt_path), "report": str(report_path)},
            skipped=True,
        )

    dataset = load_dataset(ws.dataset_dir, "gen-data")
    with_generated = mode != TrainMode.FINETUNE
    cache = _load_cache_for(ws, dataset) if with_generated else None
    episode = sample_episode(
        dataset,
        cache,
        config.shots,
        derive_seed(config.seed, "episode"),
        include_generated=with_generated,
    )
    models = init_models(config.model, dataset.num_classes, derive_seed(config.seed, "models"))
    train_cfg = config.train.model_copy(update={"seed": derive_seed(config.seed, "train")})
    result = train_flier(
        episode,
        models,
        train_cfg,
        test_set=(dataset.test_images, dataset.test_labels),
        mode=mode,
    )

    summary = result.report.summary
    save_models(
        ckpt_path,
        result.models,
        result.ema.shadow,
        {
            "mode": mode.value,
            "shots": config.shots,
            "root_seed": config.seed,
            "alpha": train_cfg.alpha,
            "gamma": train_cfg.gamma,
            "ema_momentum": train_cfg.ema_momentum,
            "best_weights": summary.best_weights.value if summary.best_weights else None,
        },
    )
    write_text_atomic(report_path, result.report.to_jsonl())
    return CommandOutcome(
        "train",
        f"trained {mode.value} ({summary.epochs_run} epochs, {summary.total_steps} steps); "
        f"test top-1 raw {summary.test_top1_raw:.4f}, ema {summary.test_top1_ema:.4f}",
        {"checkpoint": str(ckpt_path), "report": str(report_path)},
    )


# =============================================================================
# EVAL
# =============================================================================


def cmd_eval(config: RunConfig, output_root: Path) -> CommandOutcome:
    """
    Evaluate the trained checkpoint (raw and EMA) on the test split.

    Nothing is written unless the checkpoint loads and evaluation succeeds.

    Raises:
        MissingArtifactError: If the checkpoint or dataset is missing
        ArtifactError: If the checkpoint is corrupted
    """
    _start("eval", config)
    ws = Workspace.from_config(config, output_root)
    models, ema_values, metadata = load_models(ws.checkpoint_dir / MODEL_CHECKPOINT, "train")
    dataset = load_dataset(ws.dataset_dir, "gen-data")
    if models.num_classes != dataset.num_classes:
        raise ArtifactError(
            ws.checkpoint_dir / MODEL_CHECKPOINT,
            f"checkpoint has {models.num_classes} classes, dataset {dataset.num_classes}",
        )

    ema = None
    if ema_values is not None:
        momentum = float(metadata.get("ema_momentum", config.train.ema_momentum))
        ema = EmaShadow(models.params, momentum)
        ema.shadow = {name: np.array(value) for name, value in ema_values.items()}
    gamma = float(metadata.get("gamma", config.train.gamma))
    raw, shadow, best = evaluate_best(
        models, dataset.test_images, dataset.test_labels, gamma, ema
    )
    counts = count_params(models)

    results: Dict[str, EvalResult] = {"raw": raw}
    if shadow is not None:
        results["ema"] = shadow
    payload = {
        "results": {label: r.model_dump(mode="json") for label, r in results.items()},
        "best": best.model_dump(mode="json"),
        "weights_used": best.weights_used.value,
        "test_split_hash": dataset.test_split_hash(),
        "param_counts": counts.model_dump(),
        "encoder_ratio": counts.encoder_ratio,
        "checkpoint": {k: metadata.get(k) for k in ("mode", "shots", "root_seed", "alpha")},
    }
    out = write_json_atomic(ws.report_dir / EVAL_REPORT_FILE, payload)
    table = ReportFormatter().format_eval(results)
    return CommandOutcome(
        "eval",
        table + f"best: {best.weights_used.value} (top-1 {best.top1:.4f})",
        {"eval": str(out)},
    )


# =============================================================================
# ABLATE / REPORT
# =============================================================================


def cmd_ablate(
    config: RunConfig,
    output_root: Path,
    axis: AblationAxis,
) -> CommandOutcome:
    """
    Run one ablation grid and write it under the report directory.

    Each run writes a new timestamped set of files; their content depends
    only on the configuration and root seed.
    """
    _start("ablate", config)
    bind_logging_context(axis=axis.value)
    ws = Workspace.from_config(config, output_root)
    dataset = load_dataset(ws.dataset_dir, "gen-data")
    cache = _load_cache_for(ws, dataset)
    source = EpisodeSource(dataset=dataset, cache=cache, model=config.model)

    acfg = config.ablation
    seeds = [derive_seed(config.seed, "ablation", i) for i in range(acfg.num_seeds)]
    grid = run_ablation(
        axis,
        source,
        config.train,
        seeds,
        acfg.shots,
        alphas=acfg.alphas,
        jobs=acfg.jobs,
    )
    paths = save_grid(ws.report_dir, grid)
    return CommandOutcome(
        "ablate",
        ReportFormatter().format_grid(grid),
        {kind: str(path) for kind, path in paths.items()},
    )


def cmd_report(
    config: RunConfig, output_root: Path, report_dir: Optional[Path] = None
) -> CommandOutcome:
    """
    Render every saved grid (table + CSV) and the last evaluation.

    Raises:
        ArtifactError: If the directory holds no grid, evaluation or train report
    """
    _start("report", config)
    ws = Workspace.from_config(config, output_root)
    directory = Path(report_dir) if report_dir is not None else ws.report_dir
    formatter = ReportFormatter()

    sections = []
    outputs: Dict[str, str] = {}
    for path in find_grids(directory):
        grid = load_grid(path)
        base = path.name[: -len(GRID_SUFFIX)]
        table = formatter.format_grid(grid)
        outputs[f"{base}.txt"] = str(write_text_atomic(directory / f"{base}.txt", table))
        outputs[f"{base}.csv"] = str(write_text_atomic(directory / f"{base}.csv", grid_csv(grid)))
        sections.append(f"== {base}\n{table}")

    eval_path = directory / EVAL_REPORT_FILE
    if eval_path.exists():
        payload = read_json(eval_path, "eval")
        results = {
            label: EvalResult.model_validate(value)
            for label, value in payload.get("results", {}).items()
        }
        sections.append(f"== evaluation\n{formatter.format_eval(results)}")

    train_path = directory / TRAIN_REPORT_FILE
    if train_path.exists():
        try:
            report = TrainReport.from_jsonl(train_path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise ArtifactError(train_path, f"parse error: invalid train report ({e})") from e
        s = report.summary
        sections.append(
            f"== training\nmode {s.mode.value}, {s.epochs_run} epochs, "
            f"loss_v {s.initial_loss_v} -> {s.final_loss_v}, "
            f"loss_g {s.initial_loss_g} -> {s.final_loss_g}\n"
        )

    if not sections:
        raise ArtifactError(
            directory, "no ablation grids or evaluation found (run 'ablate' or 'eval' first)"
        )
    return CommandOutcome("report", "\n".join(sections).rstrip("\n"), outputs)
