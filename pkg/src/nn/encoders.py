# src/nn/encoders.py
"""
Encoders, Probes and Diffusion Networks

Image encoder Ψ_v, latent encoder Ψ_l, linear probes W_v / W_l, and the
toy latent-diffusion networks (denoiser, autoencoder). Every network is a
pure function of its ParameterSet and input.

Version: 1.0.0
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from src.tensor import ops
from src.tensor.tensor import ParameterSet, Tensor, as_tensor
from src.utils.constants import IMAGE_CHANNELS
from src.utils.errors import ShapeMismatchError, StructuralInvariantError
from src.utils.logging import get_logger

logger = get_logger(__name__)


# =============================================================================
# INITIALIZATION
# =============================================================================


def kaiming_uniform(
    rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int
) -> np.ndarray:
    """He-uniform init: U(-√(6/fan_in), √(6/fan_in))."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _add_conv(
    params: ParameterSet,
    rng: np.random.Generator,
    name: str,
    in_channels: int,
    out_channels: int,
    kernel: int,
    depth: int,
    zero: bool = False,
) -> None:
    shape = (out_channels, in_channels, kernel, kernel)
    weights = (
        np.zeros(shape)
        if zero
        else kaiming_uniform(rng, shape, in_channels * kernel * kernel)
    )
    params.add(f"{name}.kernel", weights, depth)
    params.add(f"{name}.bias", np.zeros(out_channels), depth)


def _add_conv_transpose(
    params: ParameterSet,
    rng: np.random.Generator,
    name: str,
    in_channels: int,
    out_channels: int,
    kernel: int,
) -> None:
    shape = (in_channels, out_channels, kernel, kernel)
    params.add(f"{name}.kernel", kaiming_uniform(rng, shape, in_channels), 0)
    params.add(f"{name}.bias", np.zeros(out_channels), 0)


def _add_linear(
    params: ParameterSet,
    rng: np.random.Generator,
    name: str,
    in_dim: int,
    out_dim: int,
    depth: int,
    zero: bool = False,
) -> None:
    shape = (in_dim, out_dim)
    weights = np.zeros(shape) if zero else kaiming_uniform(rng, shape, in_dim)
    params.add(f"{name}.weight", weights, depth)
    params.add(f"{name}.bias", np.zeros(out_dim), depth)


# =============================================================================
# ENCODERS
# =============================================================================


class ImageEncoder:
    """
    Ψ_v: stack of conv3×3 → relu → maxpool2×2 blocks, then global mean pool.

    Block i has depth i, so the probe on top sits at depth len(widths).
    """

    prefix = "image"

    def __init__(self, params: ParameterSet, image_size: int, widths: Sequence[int]) -> None:
        self.params = params
        self.image_size = image_size
        self.widths = tuple(widths)

    @classmethod
    def init(
        cls, rng: np.random.Generator, image_size: int, widths: Sequence[int]
    ) -> "ImageEncoder":
        params = ParameterSet()
        in_channels = IMAGE_CHANNELS
        for depth, width in enumerate(widths):
            _add_conv(params, rng, f"{cls.prefix}.block{depth}", in_channels, width, 3, depth)
            in_channels = width
        return cls(params, image_size, widths)

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    @property
    def num_blocks(self) -> int:
        return len(self.widths)

    def encode(self, images: Tensor) -> Tensor:
        """
        f = Ψ_v(I)

        Args:
            images: Batch [B, 3, H, W] at the configured resolution

        Returns:
            Features [B, D]

        Raises:
            ShapeMismatchError: If the resolution or channel count differs
        """
        expected = (IMAGE_CHANNELS, self.image_size, self.image_size)
        if images.ndim != 4 or images.shape[1:] != expected:
            raise ShapeMismatchError(
                f"image encoder expects [B, {IMAGE_CHANNELS}, {self.image_size}, "
                f"{self.image_size}], got {images.shape}"
            )
        h = images
        for depth in range(self.num_blocks):
            name = f"{self.prefix}.block{depth}"
            h = ops.conv2d(h, self.params[f"{name}.kernel"], self.params[f"{name}.bias"], 1, 1)
            h = ops.max_pool2d(ops.relu(h))
        return ops.mean_pool(h)


class LatentEncoder:
    """
    Ψ_l: exactly two conv3×3 layers with relu, then global mean pool.

    conv1 has depth 0 and conv2 depth 1; the latent probe sits at depth 2.
    """

    prefix = "latent"

    def __init__(
        self,
        params: ParameterSet,
        latent_channels: int,
        latent_size: int,
        widths: Tuple[int, int],
    ) -> None:
        if len(widths) != 2:
            raise StructuralInvariantError(
                f"latent encoder has exactly two conv layers, got widths {widths}"
            )
        self.params = params
        self.latent_channels = latent_channels
        self.latent_size = latent_size
        self.widths = tuple(widths)

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        latent_channels: int,
        latent_size: int,
        widths: Tuple[int, int],
    ) -> "LatentEncoder":
        params = ParameterSet()
        _add_conv(params, rng, f"{cls.prefix}.conv1", latent_channels, widths[0], 3, 0)
        _add_conv(params, rng, f"{cls.prefix}.conv2", widths[0], widths[1], 3, 1)
        return cls(params, latent_channels, latent_size, widths)

    @property
    def feature_dim(self) -> int:
        return self.widths[1]

    def encode(self, latents: Tensor) -> Tensor:
        """
        f_L' = Ψ_l(F)

        Raises:
            ShapeMismatchError: If the latent is not image size ÷ downsampling
        """
        expected = (self.latent_channels, self.latent_size, self.latent_size)
        if latents.ndim != 4 or latents.shape[1:] != expected:
            raise ShapeMismatchError(
                f"latent encoder expects [B, {self.latent_channels}, {self.latent_size}, "
                f"{self.latent_size}] (image size ÷ downsampling factor), got {latents.shape}"
            )
        p = self.params
        h = ops.relu(
            ops.conv2d(latents, p[f"{self.prefix}.conv1.kernel"], p[f"{self.prefix}.conv1.bias"], 1, 1)
        )
        h = ops.relu(
            ops.conv2d(h, p[f"{self.prefix}.conv2.kernel"], p[f"{self.prefix}.conv2.bias"], 1, 1)
        )
        return ops.mean_pool(h)


class LinearProbe:
    """Linear head W ∈ R^{D×K} with bias, producing class logits."""

    def __init__(self, params: ParameterSet, prefix: str) -> None:
        self.params = params
        self.prefix = prefix

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        prefix: str,
        in_dim: int,
        num_classes: int,
        depth: int,
    ) -> "LinearProbe":
        params = ParameterSet()
        _add_linear(params, rng, prefix, in_dim, num_classes, depth)
        return cls(params, prefix)

    @property
    def weight(self) -> Tensor:
        return self.params[f"{self.prefix}.weight"]

    @property
    def bias(self) -> Tensor:
        return self.params[f"{self.prefix}.bias"]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    def logits(self, features: Tensor) -> Tensor:
        """logits = W^T f + b"""
        return ops.linear(features, self.weight, self.bias)


def encode_image(encoder: ImageEncoder, images: object) -> Tensor:
    return encoder.encode(as_tensor(images))


def encode_latent(encoder: LatentEncoder, latents: object) -> Tensor:
    return encoder.encode(as_tensor(latents))


def probe_logits(probe: LinearProbe, features: object) -> Tensor:
    return probe.logits(as_tensor(features))


@dataclass
class FlierModels:
    """
    The four trainable components: Ψ_v, W_v, Ψ_l, W_l.

    Probe input dimensions are checked against encoder feature dimensions
    at construction.
    """

    image_encoder: ImageEncoder
    image_probe: LinearProbe
    latent_encoder: LatentEncoder
    latent_probe: LinearProbe

    def __post_init__(self) -> None:
        if self.image_probe.in_dim != self.image_encoder.feature_dim:
            raise StructuralInvariantError(
                f"image probe expects D={self.image_probe.in_dim}, "
                f"encoder produces D={self.image_encoder.feature_dim}"
            )
        if self.latent_probe.in_dim != self.latent_encoder.feature_dim:
            raise StructuralInvariantError(
                f"latent probe expects D_l={self.latent_probe.in_dim}, "
                f"encoder produces D_l={self.latent_encoder.feature_dim}"
            )
        if self.image_probe.num_classes != self.latent_probe.num_classes:
            raise StructuralInvariantError("image and latent probes disagree on K")

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        num_classes: int,
        image_size: int,
        image_widths: Sequence[int],
        latent_channels: int,
        latent_size: int,
        latent_widths: Tuple[int, int],
    ) -> "FlierModels":
        image_encoder = ImageEncoder.init(rng, image_size, image_widths)
        latent_encoder = LatentEncoder.init(rng, latent_channels, latent_size, latent_widths)
        image_probe = LinearProbe.init(
            rng, "image_probe", image_encoder.feature_dim, num_classes, image_encoder.num_blocks
        )
        latent_probe = LinearProbe.init(
            rng, "latent_probe", latent_encoder.feature_dim, num_classes, 2
        )
        return cls(image_encoder, image_probe, latent_encoder, latent_probe)

    @property
    def num_classes(self) -> int:
        return self.image_probe.num_classes

    @property
    def image_branch(self) -> ParameterSet:
        """Ψ_v ∪ W_v"""
        return ParameterSet.merge(self.image_encoder.params, self.image_probe.params)

    @property
    def latent_branch(self) -> ParameterSet:
        """Ψ_l ∪ W_l"""
        return ParameterSet.merge(self.latent_encoder.params, self.latent_probe.params)

    @property
    def params(self) -> ParameterSet:
        return ParameterSet.merge(self.image_branch, self.latent_branch)

    def image_logits(self, images: Tensor) -> Tensor:
        return self.image_probe.logits(self.image_encoder.encode(images))

    def latent_logits(self, latents: Tensor) -> Tensor:
        return self.latent_probe.logits(self.latent_encoder.encode(latents))


# =============================================================================
# DIFFUSION NETWORKS
# =============================================================================


def timestep_embedding(steps: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps: [B] -> [B, dim]."""
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = np.asarray(steps, dtype=np.float64)[:, None] * freqs[None, :]
    embedding = np.concatenate([np.cos(args), np.sin(args)], axis=-1)
    if dim % 2:
        embedding = np.pad(embedding, ((0, 0), (0, 1)))
    return embedding


class DenoiserNet:
    """
    ε̂(x_t, t, c): conv_in → FiLM → relu → conv_mid → FiLM → relu → conv_out.

    The condition vector relu(time embedding + token embedding) sets a
    per-channel scale (1 + γ) and shift β after each hidden conv. The γ
    projections and conv_out start at zero, so an untrained net predicts
    zero noise.

    class_means / class_variances, when set, hold the per-class elementwise
    moments of the training latents [num_classes, C_lat, h, w]; the sampler
    draws its terminal state from them.
    """

    FILM_LAYERS = ("in", "mid")

    def __init__(
        self,
        params: ParameterSet,
        latent_channels: int,
        hidden: int,
        time_embed_dim: int,
        num_tokens: int,
        class_means: Optional[np.ndarray] = None,
        class_variances: Optional[np.ndarray] = None,
    ) -> None:
        self.params = params
        self.latent_channels = latent_channels
        self.hidden = hidden
        self.time_embed_dim = time_embed_dim
        self.num_tokens = num_tokens
        self.class_means = class_means
        self.class_variances = class_variances

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        latent_channels: int,
        hidden: int,
        time_embed_dim: int,
        num_tokens: int,
    ) -> "DenoiserNet":
        params = ParameterSet()
        _add_conv(params, rng, "denoiser.conv_in", latent_channels, hidden, 3, 0)
        _add_linear(params, rng, "denoiser.time", time_embed_dim, hidden, 0)
        _add_linear(params, rng, "denoiser.token", num_tokens, hidden, 0)
        _add_conv(params, rng, "denoiser.conv_mid", hidden, hidden, 3, 0)
        for layer in cls.FILM_LAYERS:
            _add_linear(params, rng, f"denoiser.scale_{layer}", hidden, hidden, 0, zero=True)
            _add_linear(params, rng, f"denoiser.shift_{layer}", hidden, hidden, 0)
        _add_conv(params, rng, "denoiser.conv_out", hidden, latent_channels, 3, 0, zero=True)
        return cls(params, latent_channels, hidden, time_embed_dim, num_tokens)

    @property
    def has_prior(self) -> bool:
        return self.class_means is not None and self.class_variances is not None

    def set_prior(self, means: np.ndarray, variances: np.ndarray) -> None:
        """
        Raises:
            ShapeMismatchError: If the moments disagree in shape or channels,
                or num_tokens is not a multiple of the class count
        """
        means = np.asarray(means, dtype=np.float64)
        variances = np.asarray(variances, dtype=np.float64)
        if means.shape != variances.shape or means.ndim != 4:
            raise ShapeMismatchError(
                f"prior moments must share a [classes, C, h, w] shape, "
                f"got {means.shape} and {variances.shape}"
            )
        if means.shape[1] != self.latent_channels:
            raise ShapeMismatchError(
                f"prior has {means.shape[1]} channels, denoiser {self.latent_channels}"
            )
        if self.num_tokens % means.shape[0]:
            raise ShapeMismatchError(
                f"{self.num_tokens} tokens do not split over {means.shape[0]} classes"
            )
        self.class_means = means
        self.class_variances = np.maximum(variances, 0.0)

    def token_classes(self, tokens: np.ndarray) -> np.ndarray:
        """Class of each token: token // variants_per_class."""
        if self.class_means is None:
            raise StructuralInvariantError("denoiser has no class prior")
        variants = self.num_tokens // self.class_means.shape[0]
        return np.asarray(tokens, dtype=np.int64) // variants

    def _film(self, h: Tensor, condition: Tensor, layer: str) -> Tensor:
        p = self.params
        batch = h.shape[0]
        gamma = ops.linear(
            condition, p[f"denoiser.scale_{layer}.weight"], p[f"denoiser.scale_{layer}.bias"]
        )
        beta = ops.linear(
            condition, p[f"denoiser.shift_{layer}.weight"], p[f"denoiser.shift_{layer}.bias"]
        )
        gain = ops.reshape(ops.add(gamma, 1.0), (batch, self.hidden, 1, 1))
        return ops.add(ops.mul(h, gain), ops.reshape(beta, (batch, self.hidden, 1, 1)))

    def predict_noise(self, x_t: Tensor, steps: np.ndarray, tokens: np.ndarray) -> Tensor:
        """
        Args:
            x_t: Noisy latents [B, C_lat, h, w]
            steps: Timestep indices [B] in 1..T
            tokens: Condition tokens [B] in 0..num_tokens-1

        Returns:
            Predicted noise, same shape as x_t
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.min() < 0 or tokens.max() >= self.num_tokens:
            raise ValueError(
                f"condition tokens must lie in [0, {self.num_tokens}), "
                f"got range [{tokens.min()}, {tokens.max()}]"
            )
        batch = x_t.shape[0]
        p = self.params
        one_hot = np.zeros((batch, self.num_tokens))
        one_hot[np.arange(batch), tokens] = 1.0

        time_embed = ops.linear(
            Tensor.wrap(timestep_embedding(steps, self.time_embed_dim)),
            p["denoiser.time.weight"],
            p["denoiser.time.bias"],
        )
        token_embed = ops.linear(
            Tensor.wrap(one_hot), p["denoiser.token.weight"], p["denoiser.token.bias"]
        )
        condition = ops.relu(ops.add(time_embed, token_embed))

        h = ops.conv2d(x_t, p["denoiser.conv_in.kernel"], p["denoiser.conv_in.bias"], 1, 1)
        h = ops.relu(self._film(h, condition, "in"))
        h = ops.conv2d(h, p["denoiser.conv_mid.kernel"], p["denoiser.conv_mid.bias"], 1, 1)
        h = ops.relu(self._film(h, condition, "mid"))
        return ops.conv2d(h, p["denoiser.conv_out.kernel"], p["denoiser.conv_out.bias"], 1, 1)


def _stage_count(downsampling_factor: int) -> int:
    stages = int(round(np.log2(downsampling_factor)))
    if 2**stages != downsampling_factor or stages < 1:
        raise StructuralInvariantError(
            f"downsampling factor must be a power of two >= 2, got {downsampling_factor}"
        )
    return stages


class LatentDecoder:
    """Transposed-conv stack (k=2, s=2 per stage): [C_lat, h, w] -> [3, h·f, w·f]."""

    def __init__(self, params: ParameterSet, channels: Sequence[int], latent_scale: float) -> None:
        self.params = params
        self.channels = tuple(channels)
        self.latent_scale = float(latent_scale)

    @property
    def upsampling_factor(self) -> int:
        return 2 ** (len(self.channels) - 1)

    def decode(self, latents: Tensor) -> Tensor:
        """Map scaled latents back to images."""
        if latents.ndim != 4 or latents.shape[1] != self.channels[0]:
            raise ShapeMismatchError(
                f"decoder expects [B, {self.channels[0]}, h, w], got {latents.shape}"
            )
        h = ops.scale(latents, 1.0 / self.latent_scale)
        stages = len(self.channels) - 1
        for i in range(stages):
            name = f"decoder.up{i}"
            h = ops.conv_transpose2d(h, self.params[f"{name}.kernel"], self.params[f"{name}.bias"], 2)
            if i < stages - 1:
                h = ops.relu(h)
        return h


class LatentAutoencoder:
    """
    Stride-2 conv encoder paired with a LatentDecoder.

    encode() returns latents multiplied by latent_scale (1 / std of the
    training latents) so diffusion runs on roughly unit-variance latents;
    decode() undoes the scaling.
    """

    def __init__(
        self,
        params: ParameterSet,
        latent_channels: int,
        widths: Sequence[int],
        latent_scale: float = 1.0,
    ) -> None:
        self.params = params
        self.latent_channels = latent_channels
        self.widths = tuple(widths)
        self.latent_scale = float(latent_scale)

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        latent_channels: int,
        downsampling_factor: int,
        widths: Sequence[int],
    ) -> "LatentAutoencoder":
        stages = _stage_count(downsampling_factor)
        if len(widths) != stages - 1:
            raise StructuralInvariantError(
                f"{stages} downsampling stages need {stages - 1} hidden widths, got {len(widths)}"
            )
        params = ParameterSet()
        channels = (IMAGE_CHANNELS, *widths, latent_channels)
        for i in range(stages):
            _add_conv(params, rng, f"encoder.down{i}", channels[i], channels[i + 1], 3, 0)
        reverse = channels[::-1]
        for i in range(stages):
            _add_conv_transpose(params, rng, f"decoder.up{i}", reverse[i], reverse[i + 1], 2)
        return cls(params, latent_channels, widths)

    @property
    def downsampling_factor(self) -> int:
        return 2 ** (len(self.widths) + 1)

    def _decoder(self, latent_scale: float) -> LatentDecoder:
        channels = (self.latent_channels, *self.widths[::-1], IMAGE_CHANNELS)
        decoder_params = self.params.subset(n for n in self.params if n.startswith("decoder."))
        return LatentDecoder(decoder_params, channels, latent_scale)

    @property
    def decoder(self) -> LatentDecoder:
        return self._decoder(self.latent_scale)

    def encode_unscaled(self, images: Tensor) -> Tensor:
        stages = len(self.widths) + 1
        h = images
        for i in range(stages):
            name = f"encoder.down{i}"
            h = ops.conv2d(h, self.params[f"{name}.kernel"], self.params[f"{name}.bias"], 2, 1)
            if i < stages - 1:
                h = ops.relu(h)
        return h

    def encode(self, images: Tensor) -> Tensor:
        return ops.scale(self.encode_unscaled(images), self.latent_scale)

    def decode(self, latents: Tensor) -> Tensor:
        return self.decoder.decode(latents)

    def reconstruct(self, images: Tensor) -> Tensor:
        """Unscaled encode → decode, used by the reconstruction objective."""
        return self._decoder(1.0).decode(self.encode_unscaled(images))
