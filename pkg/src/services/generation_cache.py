# src/services/generation_cache.py
"""
Generation Cache

One tensor container per class holding its GenerationRecords, plus a
manifest written last. Joint training reads the cache instead of
re-sampling.

Version: 1.0.0
"""
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from src.models.data import GenerationCache, GenerationRecord
from src.models.reports import CacheManifest
from src.utils.artifact_store import (
    PathLike,
    load_container,
    read_json,
    save_container,
    write_json_atomic,
)
from src.utils.constants import MANIFEST_FILE, MANIFEST_VERSION
from src.utils.errors import ArtifactError
from src.utils.logging import get_logger

logger = get_logger(__name__)


def class_file(directory: PathLike, class_label: int) -> Path:
    return Path(directory) / f"class_{class_label:03d}.bin"


def cache_complete(directory: PathLike) -> bool:
    """True when a manifest exists (it is written after every class file)."""
    return (Path(directory) / MANIFEST_FILE).exists()


def save_cache(
    directory: PathLike,
    cache: GenerationCache,
    dataset_hash: str,
    denoiser_initial_mse: Optional[float] = None,
    denoiser_validation_mse: Optional[float] = None,
    denoiser_converged: Optional[bool] = None,
) -> CacheManifest:
    """Persist every class, then the manifest."""
    root = Path(directory)
    counts = {len(records) for records in cache.records.values()}
    if len(counts) > 1:
        raise ValueError(f"cache classes hold different record counts: {sorted(counts)}")

    for class_label in cache.classes:
        records = cache.records[class_label]
        save_container(
            class_file(root, class_label),
            {
                "latents": np.stack([r.latent for r in records]) if records else np.zeros((0,)),
                "images": np.stack([r.image for r in records]) if records else np.zeros((0,)),
                "tokens": np.array([r.token for r in records], dtype=np.int64),
                "seeds": np.array([r.seed for r in records], dtype=np.int64),
            },
            {"class_label": class_label, "count": len(records)},
        )

    manifest = CacheManifest(
        version=MANIFEST_VERSION,
        classes=cache.classes,
        count_per_class=counts.pop() if counts else 0,
        seeds={str(c): [r.seed for r in cache.records[c]] for c in cache.classes},
        tokens={str(c): [r.token for r in cache.records[c]] for c in cache.classes},
        schedule_hash=cache.schedule_hash,
        decoder_hash=cache.decoder_hash,
        dataset_hash=dataset_hash,
        denoiser_initial_mse=denoiser_initial_mse,
        denoiser_validation_mse=denoiser_validation_mse,
        denoiser_converged=denoiser_converged,
    )
    write_json_atomic(root / MANIFEST_FILE, manifest.model_dump(mode="json"))
    logger.info(
        "generation_cache_saved",
        path=str(root),
        classes=len(manifest.classes),
        count_per_class=manifest.count_per_class,
    )
    return manifest


def load_manifest(directory: PathLike, producer: str = "build-cache") -> CacheManifest:
    path = Path(directory) / MANIFEST_FILE
    try:
        return CacheManifest.model_validate(read_json(path, producer))
    except ValidationError as e:
        raise ArtifactError(path, "parse error: invalid cache manifest") from e


def load_cache(directory: PathLike, producer: str = "build-cache") -> GenerationCache:
    """
    Read every class listed in the manifest.

    Raises:
        MissingArtifactError: If the manifest or a class file is absent
        ArtifactError: If a class file disagrees with the manifest
    """
    root = Path(directory)
    manifest = load_manifest(root, producer)
    records: Dict[int, List[GenerationRecord]] = {}
    for class_label in manifest.classes:
        path = class_file(root, class_label)
        arrays, _ = load_container(path, producer)
        seeds = arrays["seeds"].tolist()
        if seeds != manifest.seeds.get(str(class_label)):
            raise ArtifactError(path, "generation seeds do not match the cache manifest")
        records[class_label] = [
            GenerationRecord(
                latent=arrays["latents"][i],
                image=arrays["images"][i],
                class_label=class_label,
                token=int(arrays["tokens"][i]),
                seed=int(seeds[i]),
            )
            for i in range(len(seeds))
        ]
    return GenerationCache(
        records=records,
        schedule_hash=manifest.schedule_hash,
        decoder_hash=manifest.decoder_hash,
    )
