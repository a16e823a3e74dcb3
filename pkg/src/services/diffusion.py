# src/services/diffusion.py
"""
Toy Latent Diffusion

Two-stage class-conditional generator: an autoencoder maps images to
latents at 1/8 resolution, then an ε-prediction denoiser is trained on
those latents. Training also fits a per-class Gaussian over the latents,
which sets the sampler's starting state. Sampling runs a deterministic
first-order (DDIM, η = 0) sampler and decodes the final latent into an
image.

Version: 1.0.0
"""
import hashlib
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.models.config import DiffusionConfig
from src.models.data import GenerationRecord
from src.nn.encoders import DenoiserNet, LatentAutoencoder, LatentDecoder
from src.services.optim import AdamW
from src.tensor import ops
from src.tensor.tape import Tape, backward, no_grad
from src.tensor.tensor import Tensor
from src.utils.artifact_store import sha256_of_arrays
from src.utils.constants import (
    DENOISER_MIN_IMPROVEMENT,
    DENOISER_VALIDATION_FRACTION,
)
from src.utils.errors import NumericalDivergenceError, ShapeMismatchError
from src.utils.logging import get_logger
from src.utils.seeding import derive_seed, shuffled_batches, stream

logger = get_logger(__name__)

# Noise draws per validation latent
_VALIDATION_DRAWS = 4


# =============================================================================
# NOISE SCHEDULE
# =============================================================================


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Linear β schedule over T steps.

    betas[t - 1] is β_t for t = 1..T; alpha_bars[t] is ᾱ_t with ᾱ_0 = 1.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ValueError("betas must be a non-empty vector")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(betas) < 0):
            raise ValueError("betas must be non-decreasing")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(
            self, "alpha_bars", np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        )

    @classmethod
    def linear(cls, steps: int, beta_start: float, beta_end: float) -> "NoiseSchedule":
        """betas evenly spaced from beta_start (t = 1) to beta_end (t = T)."""
        return cls(np.linspace(beta_start, beta_end, steps))

    @classmethod
    def from_config(cls, cfg: DiffusionConfig) -> "NoiseSchedule":
        return cls.linear(cfg.steps, cfg.beta_start, cfg.beta_end)

    @property
    def steps(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        self._check_step(t)
        return float(self.alpha_bars[t])

    def _check_step(self, t: object) -> None:
        t_arr = np.asarray(t)
        if np.any(t_arr < 1) or np.any(t_arr > self.steps):
            raise ValueError(f"timestep out of range [1, {self.steps}]: {t}")

    def digest(self) -> str:
        return hashlib.sha256(self.betas.tobytes()).hexdigest()


def add_noise(
    x0: np.ndarray, t: object, noise: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """
    Forward process: √ᾱ_t · x0 + √(1 − ᾱ_t) · noise.

    Args:
        x0: Clean samples
        t: Step index in [1, T], or one index per leading row
        noise: Same shape as x0
        schedule: Noise schedule

    Raises:
        ValueError: If t is out of range or shapes differ
    """
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ValueError(f"noise shape {noise.shape} differs from x0 shape {x0.shape}")
    schedule._check_step(t)
    alpha_bar = schedule.alpha_bars[np.asarray(t, dtype=np.int64)]
    if np.ndim(alpha_bar):
        alpha_bar = alpha_bar.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * noise


def condition_tokens(labels: np.ndarray, variants_per_class: int) -> np.ndarray:
    """
    Token of each sample: class * variants + variant.

    Variants cycle through the samples of each class in index order.
    """
    labels = np.asarray(labels, dtype=np.int64)
    tokens = np.empty_like(labels)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        tokens[idx] = c * variants_per_class + np.arange(idx.size) % variants_per_class
    return tokens


# =============================================================================
# AUTOENCODER (STAGE 1)
# =============================================================================


@dataclass
class AutoencoderResult:
    autoencoder: LatentAutoencoder
    epoch_losses: List[float]


def train_autoencoder(
    images: np.ndarray, cfg: DiffusionConfig, seed: int
) -> AutoencoderResult:
    """
    Fit the autoencoder with an MSE reconstruction objective, then set its
    latent scale to 1 / std of the training latents.

    Raises:
        ValueError: If images is empty
        NumericalDivergenceError: If the loss becomes NaN/Inf
    """
    if len(images) == 0:
        raise ValueError("autoencoder training needs at least one image")
    autoencoder = LatentAutoencoder.init(
        stream(seed, "autoencoder", "init"),
        cfg.latent_channels,
        cfg.downsampling_factor,
        cfg.autoencoder_widths,
    )
    optimizer = AdamW(autoencoder.params, weight_decay=0.0)
    batch_rng = stream(seed, "autoencoder", "batches")

    epoch_losses: List[float] = []
    step = 0
    for epoch in range(cfg.autoencoder_epochs):
        losses = []
        for batch in shuffled_batches(len(images), cfg.autoencoder_batch_size, batch_rng):
            x = Tensor.wrap(images[batch])
            with Tape() as tape:
                loss = ops.mse(autoencoder.reconstruct(x), x)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalDivergenceError("autoencoder", epoch=epoch, step=step, value=value)
            backward(loss, tape, autoencoder.params)
            optimizer.step(cfg.autoencoder_lr)
            losses.append(value)
            step += 1
        epoch_losses.append(float(np.mean(losses)))
        logger.debug("autoencoder_epoch_completed", epoch=epoch, loss=epoch_losses[-1])

    with no_grad():
        raw = autoencoder.encode_unscaled(Tensor.wrap(images)).data
    std = float(raw.std())
    autoencoder.latent_scale = 1.0 / std if std > 0 else 1.0
    logger.info(
        "autoencoder_trained",
        epochs=cfg.autoencoder_epochs,
        final_loss=epoch_losses[-1] if epoch_losses else None,
        latent_scale=autoencoder.latent_scale,
    )
    return AutoencoderResult(autoencoder, epoch_losses)


def encode_dataset_latents(autoencoder: LatentAutoencoder, images: np.ndarray) -> np.ndarray:
    """Scaled latents of every image, [N, C_lat, h, w]."""
    with no_grad():
        return autoencoder.encode(Tensor.wrap(np.asarray(images, dtype=np.float64))).data


def decode_latent(decoder: LatentDecoder, latent: np.ndarray) -> np.ndarray:
    """Decode one latent [C_lat, h, w] into one image [3, H, W]."""
    with no_grad():
        return decoder.decode(Tensor.wrap(latent[None])).data[0]


# =============================================================================
# DENOISER (STAGE 2)
# =============================================================================


@dataclass
class DenoiserResult:
    """Trained denoiser plus its validation diagnostics."""

    denoiser: DenoiserNet
    initial_mse: float
    validation_mse: float
    epoch_mse: List[float]
    epoch_losses: List[float]

    @property
    def improvement(self) -> float:
        """Relative drop of validation MSE against the untrained network."""
        if self.initial_mse <= 0:
            return 0.0
        return 1.0 - self.validation_mse / self.initial_mse

    @property
    def converged(self) -> bool:
        return self.improvement >= DENOISER_MIN_IMPROVEMENT


def fit_class_prior(
    latents: np.ndarray, labels: np.ndarray, num_classes: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Elementwise mean and variance of the latents of each class.

    A class without latents gets the standard-normal moments (0, 1).

    Returns:
        (means, variances), each [num_classes, C_lat, h, w]
    """
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    shape = (num_classes,) + latents.shape[1:]
    means, variances = np.zeros(shape), np.ones(shape)
    for c in range(num_classes):
        members = latents[labels == c]
        if members.shape[0]:
            means[c] = members.mean(axis=0)
            variances[c] = members.var(axis=0)
    return means, variances


def _denoiser_mse(
    denoiser: DenoiserNet,
    latents: np.ndarray,
    tokens: np.ndarray,
    steps: np.ndarray,
    noise: np.ndarray,
    schedule: NoiseSchedule,
) -> float:
    with no_grad():
        x_t = add_noise(latents, steps, noise, schedule)
        prediction = denoiser.predict_noise(Tensor.wrap(x_t), steps, tokens)
        return float(np.mean((prediction.data - noise) ** 2))


def train_denoiser(
    latents: np.ndarray,
    labels: np.ndarray,
    schedule: NoiseSchedule,
    cfg: DiffusionConfig,
    num_classes: int,
    seed: int,
) -> DenoiserResult:
    """
    Train ε̂(x_t, t, c) with the objective ‖ε − ε̂‖².

    A held-out fraction of the latents (the whole set when it is too small
    to split) is noised once with fixed draws and used to measure
    validation MSE before training and after every epoch.
    The per-class latent moments are fitted onto the returned denoiser as
    the sampler's terminal-state prior.

    Args:
        latents: Scaled latents [N, C_lat, h, w]
        labels: Class label per latent
        schedule: Noise schedule
        cfg: Diffusion settings (network width, epochs, lr, batch size)
        num_classes: Number of classes; tokens span num_classes × variants
        seed: Root of the denoiser seed streams

    Raises:
        ValueError: If the dataset is empty
        NumericalDivergenceError: If the loss becomes NaN/Inf
    """
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if latents.shape[0] == 0:
        raise ValueError("denoiser training needs at least one latent")
    tokens = condition_tokens(labels, cfg.variants_per_class)
    denoiser = DenoiserNet.init(
        stream(seed, "denoiser", "init"),
        latents.shape[1],
        cfg.denoiser_hidden,
        cfg.time_embed_dim,
        num_classes * cfg.variants_per_class,
    )

    count = latents.shape[0]
    order = stream(seed, "denoiser", "split").permutation(count)
    n_val = int(count * DENOISER_VALIDATION_FRACTION)
    if n_val == 0 or n_val == count:
        val_idx, train_idx = order, order
    else:
        val_idx, train_idx = order[:n_val], order[n_val:]

    val_rng = stream(seed, "denoiser", "validation")
    val_latents = np.repeat(latents[val_idx], _VALIDATION_DRAWS, axis=0)
    val_tokens = np.repeat(tokens[val_idx], _VALIDATION_DRAWS)
    val_steps = val_rng.integers(1, schedule.steps + 1, size=val_latents.shape[0])
    val_noise = val_rng.standard_normal(val_latents.shape)

    def validate() -> float:
        return _denoiser_mse(denoiser, val_latents, val_tokens, val_steps, val_noise, schedule)

    initial_mse = validate()
    optimizer = AdamW(denoiser.params, weight_decay=0.0)
    batch_rng = stream(seed, "denoiser", "batches")
    noise_rng = stream(seed, "denoiser", "noise")

    epoch_mse: List[float] = []
    epoch_losses: List[float] = []
    step = 0
    for epoch in range(cfg.denoiser_epochs):
        losses = []
        for batch in shuffled_batches(train_idx.size, cfg.denoiser_batch_size, batch_rng):
            idx = train_idx[batch]
            t = noise_rng.integers(1, schedule.steps + 1, size=idx.size)
            noise = noise_rng.standard_normal(latents[idx].shape)
            x_t = add_noise(latents[idx], t, noise, schedule)
            with Tape() as tape:
                prediction = denoiser.predict_noise(Tensor.wrap(x_t), t, tokens[idx])
                loss = ops.mse(prediction, noise)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalDivergenceError("denoiser", epoch=epoch, step=step, value=value)
            backward(loss, tape, denoiser.params)
            optimizer.step(cfg.denoiser_lr)
            losses.append(value)
            step += 1
        epoch_losses.append(float(np.mean(losses)))
        epoch_mse.append(validate())
        logger.debug(
            "denoiser_epoch_completed",
            epoch=epoch,
            train_loss=epoch_losses[-1],
            validation_mse=epoch_mse[-1],
        )

    denoiser.set_prior(*fit_class_prior(latents, labels, num_classes))
    result = DenoiserResult(
        denoiser=denoiser,
        initial_mse=initial_mse,
        validation_mse=epoch_mse[-1] if epoch_mse else initial_mse,
        epoch_mse=epoch_mse,
        epoch_losses=epoch_losses,
    )
    logger.info(
        "denoiser_trained",
        epochs=cfg.denoiser_epochs,
        initial_mse=result.initial_mse,
        validation_mse=result.validation_mse,
        improvement=result.improvement,
    )
    if not result.converged:
        logger.warning(
            "denoiser_below_target_improvement",
            improvement=result.improvement,
            target=DENOISER_MIN_IMPROVEMENT,
        )
    return result


# =============================================================================
# SAMPLING
# =============================================================================


def sample_latents(
    denoiser: DenoiserNet,
    tokens: Sequence[int],
    seeds: Sequence[int],
    schedule: NoiseSchedule,
    latent_shape: Tuple[int, int, int],
    x0_clip: Optional[float] = None,
) -> np.ndarray:
    """
    Deterministic DDIM sampling of a batch.

    Each row starts from its own seed's standard-normal draw z. With a
    class prior on the denoiser the terminal state matches q(x_T | c):
    x_T = √ᾱ_T·μ_c + √(ᾱ_T·σ²_c + 1 − ᾱ_T)·z; without one x_T = z. The chain
    then runs t = T..1 with x_{t-1} = √ᾱ_{t-1}·x̂0 + √(1 − ᾱ_{t-1})·ε̂.

    Returns:
        Final latents [B, *latent_shape]

    Raises:
        ShapeMismatchError: If the class prior does not match latent_shape
        NumericalDivergenceError: With the step index if the state turns NaN/Inf
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape[0] != len(seeds):
        raise ValueError(f"{tokens.shape[0]} tokens for {len(seeds)} seeds")
    x = np.stack([stream(int(s), "sampler").standard_normal(latent_shape) for s in seeds])
    if denoiser.has_prior:
        x = _terminal_state(denoiser, tokens, x, schedule.alpha_bars[-1])

    with no_grad():
        for t in range(schedule.steps, 0, -1):
            steps = np.full(tokens.shape[0], t)
            eps = denoiser.predict_noise(Tensor.wrap(x), steps, tokens).data
            alpha_bar = schedule.alpha_bars[t]
            alpha_prev = schedule.alpha_bars[t - 1]
            x0_hat = (x - np.sqrt(1.0 - alpha_bar) * eps) / np.sqrt(alpha_bar)
            if x0_clip is not None:
                x0_hat = np.clip(x0_hat, -x0_clip, x0_clip)
            x = np.sqrt(alpha_prev) * x0_hat + np.sqrt(1.0 - alpha_prev) * eps
            if not np.all(np.isfinite(x)):
                raise NumericalDivergenceError("sampler", step=t)
    return x


def _terminal_state(
    denoiser: DenoiserNet, tokens: np.ndarray, z: np.ndarray, alpha_bar: float
) -> np.ndarray:
    if denoiser.class_means.shape[1:] != z.shape[1:]:
        raise ShapeMismatchError(
            f"class prior has latent shape {denoiser.class_means.shape[1:]}, "
            f"sampling {z.shape[1:]}"
        )
    classes = denoiser.token_classes(tokens)
    means = denoiser.class_means[classes]
    variances = denoiser.class_variances[classes]
    return np.sqrt(alpha_bar) * means + np.sqrt(alpha_bar * variances + 1.0 - alpha_bar) * z


def sample_latent(
    denoiser: DenoiserNet,
    token: int,
    schedule: NoiseSchedule,
    seed: int,
    latent_shape: Tuple[int, int, int],
    x0_clip: Optional[float] = None,
) -> np.ndarray:
    """Single-latent form of sample_latents: [C_lat, h, w]."""
    return sample_latents(denoiser, [token], [seed], schedule, latent_shape, x0_clip)[0]


def generation_seeds(seed_base: int, class_label: int, count: int) -> List[int]:
    """count distinct consecutive seeds for one class."""
    start = derive_seed(seed_base, "generate", class_label)
    return [(start + i) & 0x7FFFFFFF for i in range(count)]


def generate_class_set(
    denoiser: DenoiserNet,
    decoder: LatentDecoder,
    class_label: int,
    schedule: NoiseSchedule,
    seed_base: int,
    latent_shape: Tuple[int, int, int],
    count: int = 20,
    batch_size: int = 2,
    variants_per_class: int = 10,
    x0_clip: Optional[float] = None,
) -> List[GenerationRecord]:
    """
    Generate count (latent, image) records for one class.

    Record i uses token class * variants + (i mod variants), so 20 records
    over 10 variants give two images per variant. Sampling runs batch_size
    records at a time; each latent is decoded on its own.

    Raises:
        ValueError: If count is negative or batch_size is not positive
        NumericalDivergenceError: Propagated from the sampler
    """
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    seeds = generation_seeds(seed_base, class_label, count)
    tokens = [class_label * variants_per_class + i % variants_per_class for i in range(count)]

    records: List[GenerationRecord] = []
    for start in range(0, count, batch_size):
        batch_seeds = seeds[start : start + batch_size]
        batch_tokens = tokens[start : start + batch_size]
        latents = sample_latents(
            denoiser, batch_tokens, batch_seeds, schedule, latent_shape, x0_clip
        )
        for latent, token, seed in zip(latents, batch_tokens, batch_seeds):
            records.append(
                GenerationRecord(
                    latent=latent,
                    image=decode_latent(decoder, latent),
                    class_label=class_label,
                    token=token,
                    seed=seed,
                )
            )
    logger.debug("class_set_generated", class_label=class_label, count=len(records))
    return records


def decoder_digest(decoder: LatentDecoder) -> str:
    """Content hash of decoder weights and latent scale."""
    names = sorted(decoder.params)
    return sha256_of_arrays(
        np.array([decoder.latent_scale]), *(decoder.params[n].data for n in names)
    )
