# src/nn/checkpoint.py
"""
Checkpoints

Parameter sets persisted in the deterministic tensor container. Depths and
architecture hyperparameters travel in the JSON header, so a checkpoint is
enough to rebuild its network.

Version: 1.0.0
"""
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from src.nn.encoders import (
    DenoiserNet,
    FlierModels,
    ImageEncoder,
    LatentAutoencoder,
    LatentEncoder,
    LinearProbe,
)
from src.tensor.tensor import Parameter, ParameterSet
from src.utils.artifact_store import PathLike, load_container, save_container
from src.utils.errors import ArtifactError, ShapeMismatchError
from src.utils.logging import get_logger

logger = get_logger(__name__)

_RAW = "raw/"
_EMA = "ema/"
_PRIOR_MEANS = "prior/class_means"
_PRIOR_VARIANCES = "prior/class_variances"


def save_checkpoint(
    path: PathLike,
    params: ParameterSet,
    metadata: Optional[Mapping[str, Any]] = None,
    prefix: str = "",
    extra: Optional[Mapping[str, np.ndarray]] = None,
) -> Path:
    """
    Write params (and optional extra arrays) to a checkpoint container.

    Args:
        path: Target file
        params: Parameters to store; their depths go into the header
        metadata: JSON-serializable architecture/run metadata
        prefix: Name prefix for parameter arrays
        extra: Additional named arrays stored verbatim

    Returns:
        Written path
    """
    arrays: Dict[str, np.ndarray] = {
        f"{prefix}{name}": param.data for name, param in params.items()
    }
    arrays.update(extra or {})
    header = dict(metadata or {})
    header["depths"] = params.depths()
    return save_container(path, arrays, header)


def _rebuild(
    arrays: Mapping[str, np.ndarray], depths: Mapping[str, int], prefix: str, source: Path
) -> ParameterSet:
    params = ParameterSet()
    for name in sorted(depths):
        key = f"{prefix}{name}"
        if key not in arrays:
            raise ArtifactError(source, f"parse error: checkpoint lacks tensor '{key}'")
        params.register(Parameter(arrays[key], name=name, depth=int(depths[name])))
    return params


def load_checkpoint(
    path: PathLike, producer: str, prefix: str = ""
) -> Tuple[ParameterSet, Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Read a checkpoint.

    Returns:
        (params, metadata, all_arrays)

    Raises:
        MissingArtifactError: If the file is absent
        ArtifactError: If it is corrupt or incomplete
    """
    source = Path(path)
    arrays, metadata = load_container(source, producer)
    depths = metadata.get("depths")
    if not isinstance(depths, dict):
        raise ArtifactError(source, "parse error: checkpoint header has no depth map")
    return _rebuild(arrays, depths, prefix, source), metadata, arrays


def _require(metadata: Mapping[str, Any], keys: Tuple[str, ...], source: Path) -> None:
    missing = [k for k in keys if k not in metadata]
    if missing:
        raise ArtifactError(source, f"parse error: checkpoint metadata lacks {missing}")


def _split(params: ParameterSet, prefix: str) -> ParameterSet:
    return params.subset(n for n in params if n.startswith(prefix + "."))


# =============================================================================
# FLIER MODELS
# =============================================================================


def save_models(
    path: PathLike,
    models: FlierModels,
    ema_values: Optional[Mapping[str, np.ndarray]] = None,
    metadata: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Store Ψ_v, W_v, Ψ_l, W_l plus the EMA shadow (if any)."""
    header = dict(metadata or {})
    header.update(
        {
            "kind": "flier",
            "num_classes": models.num_classes,
            "image_size": models.image_encoder.image_size,
            "image_widths": list(models.image_encoder.widths),
            "latent_channels": models.latent_encoder.latent_channels,
            "latent_size": models.latent_encoder.latent_size,
            "latent_widths": list(models.latent_encoder.widths),
            "has_ema": ema_values is not None,
        }
    )
    params = models.params
    extra = {}
    if ema_values is not None:
        params.check_compatible(ema_values)
        extra = {f"{_EMA}{name}": np.asarray(v) for name, v in ema_values.items()}
    target = save_checkpoint(path, params, header, prefix=_RAW, extra=extra)
    logger.info("models_checkpoint_saved", path=str(target), scalars=params.num_scalars())
    return target


def load_models(
    path: PathLike, producer: str = "train"
) -> Tuple[FlierModels, Optional[Dict[str, np.ndarray]], Dict[str, Any]]:
    """
    Rebuild FlierModels from a checkpoint.

    Returns:
        (models, ema_values or None, metadata)
    """
    source = Path(path)
    params, metadata, arrays = load_checkpoint(source, producer, prefix=_RAW)
    _require(
        metadata,
        ("num_classes", "image_size", "image_widths", "latent_channels", "latent_size", "latent_widths"),
        source,
    )
    if metadata.get("kind") != "flier":
        raise ArtifactError(source, f"parse error: not a model checkpoint ({metadata.get('kind')})")

    try:
        models = FlierModels(
            ImageEncoder(
                _split(params, ImageEncoder.prefix),
                metadata["image_size"],
                metadata["image_widths"],
            ),
            LinearProbe(_split(params, "image_probe"), "image_probe"),
            LatentEncoder(
                _split(params, LatentEncoder.prefix),
                metadata["latent_channels"],
                metadata["latent_size"],
                tuple(metadata["latent_widths"]),
            ),
            LinearProbe(_split(params, "latent_probe"), "latent_probe"),
        )
    except (KeyError, ShapeMismatchError, ValueError) as e:
        raise ArtifactError(source, f"parse error: inconsistent checkpoint ({e})") from e

    ema_values = None
    if metadata.get("has_ema"):
        ema_values = {}
        for name in params:
            key = f"{_EMA}{name}"
            if key not in arrays:
                raise ArtifactError(source, f"parse error: checkpoint lacks tensor '{key}'")
            ema_values[name] = arrays[key]
        try:
            params.check_compatible(ema_values)
        except ShapeMismatchError as e:
            raise ArtifactError(source, f"parse error: {e}") from e
    return models, ema_values, metadata


# =============================================================================
# DIFFUSION NETWORKS
# =============================================================================


def save_autoencoder(path: PathLike, autoencoder: LatentAutoencoder) -> Path:
    return save_checkpoint(
        path,
        autoencoder.params,
        {
            "kind": "autoencoder",
            "latent_channels": autoencoder.latent_channels,
            "widths": list(autoencoder.widths),
            "latent_scale": autoencoder.latent_scale,
        },
    )


def load_autoencoder(path: PathLike, producer: str = "build-cache") -> LatentAutoencoder:
    source = Path(path)
    params, metadata, _ = load_checkpoint(source, producer)
    _require(metadata, ("latent_channels", "widths", "latent_scale"), source)
    return LatentAutoencoder(
        params, metadata["latent_channels"], metadata["widths"], metadata["latent_scale"]
    )


def save_denoiser(path: PathLike, denoiser: DenoiserNet) -> Path:
    """Weights plus, when fitted, the per-class latent prior."""
    extra = {}
    if denoiser.has_prior:
        extra = {
            _PRIOR_MEANS: denoiser.class_means,
            _PRIOR_VARIANCES: denoiser.class_variances,
        }
    return save_checkpoint(
        path,
        denoiser.params,
        {
            "kind": "denoiser",
            "latent_channels": denoiser.latent_channels,
            "hidden": denoiser.hidden,
            "time_embed_dim": denoiser.time_embed_dim,
            "num_tokens": denoiser.num_tokens,
        },
        extra=extra,
    )


def load_denoiser(path: PathLike, producer: str = "build-cache") -> DenoiserNet:
    source = Path(path)
    params, metadata, arrays = load_checkpoint(source, producer)
    _require(metadata, ("latent_channels", "hidden", "time_embed_dim", "num_tokens"), source)
    denoiser = DenoiserNet(
        params,
        metadata["latent_channels"],
        metadata["hidden"],
        metadata["time_embed_dim"],
        metadata["num_tokens"],
    )
    if _PRIOR_MEANS in arrays and _PRIOR_VARIANCES in arrays:
        try:
            denoiser.set_prior(arrays[_PRIOR_MEANS], arrays[_PRIOR_VARIANCES])
        except ShapeMismatchError as e:
            raise ArtifactError(source, f"parse error: {e}") from e
    return denoiser
