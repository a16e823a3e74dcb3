# tests/test_diffusion.py
"""
Unit tests for the toy latent diffusion model and the generation cache.
"""
import numpy as np
import pytest

from src.models.config import DiffusionConfig
from src.models.data import GenerationCache
from src.nn.encoders import DenoiserNet, LatentAutoencoder
from src.services.diffusion import (
    NoiseSchedule,
    add_noise,
    condition_tokens,
    decode_latent,
    generate_class_set,
    generation_seeds,
    sample_latent,
    sample_latents,
    train_autoencoder,
    train_denoiser,
)
from src.services.generation_cache import (
    cache_complete,
    class_file,
    load_cache,
    load_manifest,
    save_cache,
)
from src.tensor.tensor import Tensor
from src.utils.artifact_store import save_container
from src.utils.errors import (
    ArtifactError,
    MissingArtifactError,
    NumericalDivergenceError,
    ShapeMismatchError,
)
from src.utils.seeding import stream

from tests.conftest import TINY_LATENT_CHANNELS, make_cache

LATENT_SHAPE = (TINY_LATENT_CHANNELS, 2, 2)


def tiny_diffusion_config(**overrides) -> DiffusionConfig:
    values = dict(
        steps=10,
        beta_start=0.01,
        beta_end=0.2,
        latent_channels=TINY_LATENT_CHANNELS,
        downsampling_factor=8,
        autoencoder_widths=(4, 4),
        autoencoder_epochs=2,
        autoencoder_batch_size=8,
        denoiser_hidden=8,
        time_embed_dim=4,
        denoiser_epochs=2,
        denoiser_lr=1e-2,
        denoiser_batch_size=16,
        variants_per_class=2,
    )
    values.update(overrides)
    return DiffusionConfig(**values)


@pytest.fixture
def schedule():
    return NoiseSchedule.from_config(tiny_diffusion_config())


@pytest.fixture
def denoiser(rng):
    """Untrained denoiser with random conv_out so samples depend on tokens."""
    net = DenoiserNet.init(rng, TINY_LATENT_CHANNELS, hidden=4, time_embed_dim=4, num_tokens=6)
    kernel = net.params["denoiser.conv_out.kernel"]
    kernel.data[...] = rng.standard_normal(kernel.shape) * 0.05
    return net


@pytest.fixture
def decoder(rng):
    return LatentAutoencoder.init(rng, TINY_LATENT_CHANNELS, 8, (4, 4)).decoder


class TestNoiseSchedule:
    """Tests for NoiseSchedule."""

    @pytest.mark.unit
    def test_default_schedule(self):
        """50 linear steps from 1e-4 to 0.02: ᾱ decreases monotonically."""
        sched = NoiseSchedule.linear(50, 1e-4, 0.02)

        assert sched.steps == 50
        assert np.all(sched.betas > 0)
        assert np.all(np.diff(sched.betas) >= 0)
        assert sched.betas[0] == 1e-4
        assert sched.betas[-1] == 0.02
        assert np.all(np.diff(sched.alpha_bars) < 0)
        assert sched.alpha_bar(50) < sched.alpha_bar(1)
        assert sched.alpha_bar(50) == pytest.approx(np.prod(1 - np.linspace(1e-4, 0.02, 50)))

    @pytest.mark.unit
    def test_config_schedule_is_not_rescaled(self):
        """The default config spans exactly 1e-4 .. 0.02 over 50 steps."""
        sched = NoiseSchedule.from_config(DiffusionConfig())

        np.testing.assert_array_equal(sched.betas, np.linspace(1e-4, 0.02, 50))
        assert 0.55 < sched.alpha_bar(50) < 0.65

    @pytest.mark.unit
    @pytest.mark.parametrize("t", [0, 11, -1])
    def test_step_outside_one_to_t(self, schedule, t):
        """alpha_bar accepts only 1 ≤ t ≤ T."""
        with pytest.raises(ValueError, match="timestep"):
            schedule.alpha_bar(t)

    @pytest.mark.unit
    @pytest.mark.parametrize(
        "betas", [[0.1, 0.0], [0.2, 0.1], [0.5, 1.0], []]
    )
    def test_invalid_betas_rejected(self, betas):
        """Betas must be positive, below one, non-decreasing and non-empty."""
        with pytest.raises(ValueError):
            NoiseSchedule(np.array(betas))

    @pytest.mark.unit
    def test_digest_tracks_betas(self):
        """Schedules with different betas hash differently."""
        a = NoiseSchedule.linear(10, 1e-4, 0.02)
        b = NoiseSchedule.linear(10, 1e-4, 0.03)
        assert a.digest() == NoiseSchedule.linear(10, 1e-4, 0.02).digest()
        assert a.digest() != b.digest()


class TestAddNoise:
    """Tests for the forward process."""

    @pytest.mark.unit
    def test_no_noise_limit(self, rng):
        """A step whose ᾱ rounds to 1 returns x0."""
        sched = NoiseSchedule(np.array([1e-300, 0.1]))
        x0 = rng.standard_normal((3, 2, 2))

        assert sched.alpha_bar(1) == 1.0
        np.testing.assert_array_equal(add_noise(x0, 1, rng.standard_normal(x0.shape), sched), x0)

    @pytest.mark.unit
    def test_zero_signal(self, schedule, rng):
        """x0 = 0 gives √(1 − ᾱ_t)·noise."""
        noise = rng.standard_normal((4, 2, 2, 2))
        out = add_noise(np.zeros_like(noise), 3, noise, schedule)

        np.testing.assert_allclose(out, np.sqrt(1 - schedule.alpha_bar(3)) * noise, atol=1e-15)

    @pytest.mark.unit
    def test_per_row_steps(self, schedule, rng):
        """One step index per leading row."""
        x0 = rng.standard_normal((2, 3))
        noise = rng.standard_normal((2, 3))
        out = add_noise(x0, np.array([1, 5]), noise, schedule)

        np.testing.assert_allclose(out[1], add_noise(x0[1], 5, noise[1], schedule))

    @pytest.mark.unit
    def test_empirical_variance(self, schedule):
        """Var(out) ≈ ᾱ_t·Var(x0) + (1 − ᾱ_t) over 10⁵ samples."""
        gen = np.random.default_rng(11)
        x0 = gen.standard_normal(100_000) * 2.0
        noise = gen.standard_normal(100_000)
        t = 4
        alpha_bar = schedule.alpha_bar(t)

        expected = alpha_bar * 4.0 + (1 - alpha_bar)
        assert np.var(add_noise(x0, t, noise, schedule)) == pytest.approx(expected, rel=0.05)

    @pytest.mark.unit
    @pytest.mark.parametrize("t", [0, 11])
    def test_out_of_range_step(self, schedule, t):
        """t outside 1..T raises, including t = 0."""
        with pytest.raises(ValueError, match="timestep"):
            add_noise(np.zeros(2), t, np.zeros(2), schedule)

    @pytest.mark.unit
    def test_shape_mismatch(self, schedule):
        """noise must match x0."""
        with pytest.raises(ValueError, match="shape"):
            add_noise(np.zeros(2), 1, np.zeros(3), schedule)


class TestConditionTokens:
    """Tests for class-variant condition tokens."""

    @pytest.mark.unit
    def test_variants_cycle_within_class(self):
        """class × variants + (rank mod variants)."""
        labels = np.array([0, 1, 0, 0, 1])
        tokens = condition_tokens(labels, variants_per_class=2)
        np.testing.assert_array_equal(tokens, [0, 2, 1, 0, 3])


class TestTraining:
    """Tests for autoencoder and denoiser training."""

    @pytest.mark.unit
    def test_autoencoder_sets_latent_scale(self, tiny_dataset):
        """Latent scale normalizes the latents to unit std."""
        result = train_autoencoder(tiny_dataset.train_images, tiny_diffusion_config(), seed=0)

        assert len(result.epoch_losses) == 2
        assert all(np.isfinite(result.epoch_losses))
        latents = result.autoencoder.encode(Tensor(tiny_dataset.train_images)).data
        assert latents.shape == (len(tiny_dataset.train_images),) + LATENT_SHAPE
        assert np.std(latents) == pytest.approx(1.0, rel=1e-6)

    @pytest.mark.unit
    def test_autoencoder_needs_images(self):
        """An empty image set raises."""
        with pytest.raises(ValueError):
            train_autoencoder(np.zeros((0, 3, 16, 16)), tiny_diffusion_config(), seed=0)

    @pytest.mark.unit
    def test_untrained_denoiser_mse_is_noise_energy(self, rng):
        """A zero predictor scores E‖ε‖² = 1."""
        net = DenoiserNet.init(rng, TINY_LATENT_CHANNELS, hidden=4, time_embed_dim=4, num_tokens=2)
        gen = np.random.default_rng(3)
        noise = gen.standard_normal((20_000,) + LATENT_SHAPE)
        steps = gen.integers(1, 11, size=20_000)
        tokens = gen.integers(0, 2, size=20_000)

        prediction = net.predict_noise(Tensor(noise), steps, tokens).data

        assert np.mean((prediction - noise) ** 2) == pytest.approx(1.0, rel=0.02)

    @pytest.mark.unit
    def test_denoiser_improves_on_untrained(self, schedule):
        """Validation MSE drops below the untrained network's."""
        gen = np.random.default_rng(0)
        labels = np.repeat([0, 1], 40)
        latents = gen.standard_normal((80,) + LATENT_SHAPE) * 0.3 + (labels * 2.0 - 1.0)[
            :, None, None, None
        ]
        cfg = tiny_diffusion_config(denoiser_epochs=20)

        result = train_denoiser(latents, labels, schedule, cfg, num_classes=2, seed=0)

        assert len(result.epoch_mse) == 20
        assert result.validation_mse < result.initial_mse
        assert result.improvement > 0.0

    @pytest.mark.unit
    def test_validation_mse_falls_each_early_epoch(self, schedule):
        """With a fixed seed, validation MSE strictly decreases over the first 3 epochs."""
        gen = np.random.default_rng(0)
        labels = np.repeat([0, 1], 40)
        latents = gen.standard_normal((80,) + LATENT_SHAPE) * 0.3 + (labels * 2.0 - 1.0)[
            :, None, None, None
        ]
        cfg = tiny_diffusion_config(
            denoiser_hidden=16, denoiser_epochs=3, denoiser_batch_size=8, denoiser_lr=5e-3
        )

        result = train_denoiser(latents, labels, schedule, cfg, num_classes=2, seed=0)

        mse = [result.initial_mse] + result.epoch_mse
        assert all(later < earlier for earlier, later in zip(mse, mse[1:]))

    @pytest.mark.unit
    @pytest.mark.slow
    def test_single_sample_overfits(self):
        """Training on one latent drives its ε-prediction MSE below 0.1."""
        sched = NoiseSchedule.linear(10, 0.1, 0.5)
        latent = np.random.default_rng(1).standard_normal((1,) + LATENT_SHAPE)
        cfg = tiny_diffusion_config(
            denoiser_hidden=16,
            time_embed_dim=8,
            denoiser_epochs=1500,
            denoiser_lr=5e-3,
            denoiser_batch_size=1,
        )

        result = train_denoiser(latent, np.array([0]), sched, cfg, num_classes=1, seed=0)

        gen = np.random.default_rng(2)
        steps = np.repeat(np.arange(1, 11), 20)
        noise = gen.standard_normal((steps.size,) + LATENT_SHAPE)
        x_t = add_noise(np.repeat(latent, steps.size, axis=0), steps, noise, sched)
        tokens = np.zeros(steps.size, dtype=int)
        prediction = result.denoiser.predict_noise(Tensor(x_t), steps, tokens).data
        assert np.mean((prediction - noise) ** 2) < 0.1

    @pytest.mark.unit
    def test_training_fits_class_prior(self, schedule):
        """The trained denoiser carries per-class latent moments."""
        gen = np.random.default_rng(0)
        labels = np.repeat([0, 1], 10)
        latents = gen.standard_normal((20,) + LATENT_SHAPE) + (labels * 4.0 - 2.0)[
            :, None, None, None
        ]

        result = train_denoiser(
            latents, labels, schedule, tiny_diffusion_config(denoiser_epochs=1),
            num_classes=3, seed=0,
        )

        denoiser = result.denoiser
        assert denoiser.class_means.shape == (3,) + LATENT_SHAPE
        np.testing.assert_allclose(denoiser.class_means[1], latents[10:].mean(axis=0))
        np.testing.assert_allclose(denoiser.class_variances[0], latents[:10].var(axis=0))
        np.testing.assert_array_equal(denoiser.class_means[2], 0.0)
        np.testing.assert_array_equal(denoiser.class_variances[2], 1.0)

    @pytest.mark.unit
    def test_zero_epochs_keeps_initial(self, schedule):
        """Without training, validation MSE equals the initial MSE."""
        gen = np.random.default_rng(0)
        latents = gen.standard_normal((10,) + LATENT_SHAPE)
        result = train_denoiser(
            latents, np.zeros(10, dtype=int), schedule,
            tiny_diffusion_config(denoiser_epochs=0), num_classes=1, seed=0,
        )

        assert result.validation_mse == result.initial_mse
        assert not result.converged

    @pytest.mark.unit
    def test_denoiser_needs_data(self, schedule):
        """An empty latent set raises."""
        with pytest.raises(ValueError):
            train_denoiser(
                np.zeros((0,) + LATENT_SHAPE), np.zeros(0, dtype=int), schedule,
                tiny_diffusion_config(), num_classes=1, seed=0,
            )


class TestSampling:
    """Tests for the deterministic sampler and class-set generation."""

    @pytest.mark.unit
    def test_same_seed_bit_identical(self, denoiser, schedule):
        """(seed, token, params) determines the latent."""
        a = sample_latent(denoiser, 1, schedule, seed=42, latent_shape=LATENT_SHAPE)
        b = sample_latent(denoiser, 1, schedule, seed=42, latent_shape=LATENT_SHAPE)

        np.testing.assert_array_equal(a, b)
        assert np.all(np.isfinite(a))

    @pytest.mark.unit
    def test_different_seeds_differ(self, denoiser, schedule):
        """Distinct seeds give distinct latents."""
        a = sample_latent(denoiser, 1, schedule, seed=1, latent_shape=LATENT_SHAPE)
        b = sample_latent(denoiser, 1, schedule, seed=2, latent_shape=LATENT_SHAPE)
        assert np.linalg.norm(a - b) > 0

    @pytest.mark.unit
    def test_batching_does_not_change_samples(self, denoiser, schedule):
        """A latent is the same whether sampled alone or in a batch."""
        batch = sample_latents(denoiser, [0, 3], [5, 6], schedule, LATENT_SHAPE)
        alone = sample_latent(denoiser, 3, schedule, seed=6, latent_shape=LATENT_SHAPE)

        np.testing.assert_allclose(batch[1], alone, rtol=0, atol=1e-12)

    @pytest.mark.unit
    def test_terminal_state_follows_class_prior(self, rng, schedule):
        """With a zero predictor the chain returns x_T / √ᾱ_T around the class mean."""
        net = DenoiserNet.init(rng, TINY_LATENT_CHANNELS, hidden=4, time_embed_dim=4, num_tokens=4)
        means = np.stack([np.full(LATENT_SHAPE, -3.0), np.full(LATENT_SHAPE, 3.0)])
        net.set_prior(means, np.full_like(means, 0.25))
        alpha_bar = schedule.alpha_bar(schedule.steps)

        latent = sample_latent(net, 3, schedule, seed=7, latent_shape=LATENT_SHAPE)

        z = stream(7, "sampler").standard_normal(LATENT_SHAPE)
        spread = np.sqrt(0.25 + (1.0 - alpha_bar) / alpha_bar)
        np.testing.assert_allclose(latent, 3.0 + spread * z, rtol=1e-10, atol=1e-12)

    @pytest.mark.unit
    def test_prior_shape_must_match(self, rng, schedule):
        """A prior fitted on other latent geometry is refused."""
        net = DenoiserNet.init(rng, TINY_LATENT_CHANNELS, hidden=4, time_embed_dim=4, num_tokens=2)
        shape = (1, TINY_LATENT_CHANNELS, 3, 3)
        net.set_prior(np.zeros(shape), np.ones(shape))

        with pytest.raises(ShapeMismatchError, match="class prior"):
            sample_latent(net, 0, schedule, seed=0, latent_shape=LATENT_SHAPE)

    @pytest.mark.unit
    def test_nan_state_aborts_with_step(self, denoiser, schedule):
        """A NaN denoiser output stops sampling at the first step."""
        denoiser.params["denoiser.conv_out.bias"].data[0] = np.nan
        with pytest.raises(NumericalDivergenceError) as excinfo:
            sample_latent(denoiser, 0, schedule, seed=0, latent_shape=LATENT_SHAPE)

        assert excinfo.value.stage == "sampler"
        assert excinfo.value.step == schedule.steps

    @pytest.mark.unit
    def test_class_set_records(self, denoiser, decoder, schedule):
        """count records in batches, distinct seeds, image == decode(latent)."""
        records = generate_class_set(
            denoiser, decoder, 1, schedule, seed_base=9, latent_shape=LATENT_SHAPE,
            count=6, batch_size=2, variants_per_class=3,
        )

        assert len(records) == 6
        assert len({r.seed for r in records}) == 6
        assert [r.token for r in records] == [3, 4, 5, 3, 4, 5]
        assert all(r.class_label == 1 for r in records)
        for record in records:
            np.testing.assert_array_equal(record.image, decode_latent(decoder, record.latent))
            assert record.image.shape == (3, 16, 16)

    @pytest.mark.unit
    def test_twenty_records_in_batches_of_two(self, denoiser, decoder, schedule):
        """The default 20 records use 20 distinct seeds."""
        records = generate_class_set(
            denoiser, decoder, 0, schedule, seed_base=0, latent_shape=LATENT_SHAPE,
            variants_per_class=3,
        )
        assert len(records) == 20
        assert [r.seed for r in records] == generation_seeds(0, 0, 20)
        assert len(set(generation_seeds(0, 0, 20))) == 20

    @pytest.mark.unit
    def test_empty_class_set(self, denoiser, decoder, schedule):
        """count = 0 is allowed."""
        assert generate_class_set(
            denoiser, decoder, 0, schedule, seed_base=0, latent_shape=LATENT_SHAPE, count=0
        ) == []

    @pytest.mark.unit
    def test_negative_count_rejected(self, denoiser, decoder, schedule):
        """count must be non-negative."""
        with pytest.raises(ValueError):
            generate_class_set(
                denoiser, decoder, 0, schedule, seed_base=0, latent_shape=LATENT_SHAPE, count=-1
            )


class TestGenerationCache:
    """Tests for persisting generation records."""

    @pytest.mark.unit
    def test_round_trip_bit_exact(self, tmp_path):
        """Records reload bit-exactly with their provenance hashes."""
        cache = make_cache(2, 3)
        save_cache(tmp_path, cache, dataset_hash="h" * 64)
        loaded = load_cache(tmp_path)

        assert loaded.classes == [0, 1]
        assert loaded.schedule_hash == cache.schedule_hash
        for c in cache.classes:
            for original, reloaded in zip(cache.records[c], loaded.records[c]):
                np.testing.assert_array_equal(original.latent, reloaded.latent)
                np.testing.assert_array_equal(original.image, reloaded.image)
                assert (original.token, original.seed) == (reloaded.token, reloaded.seed)

    @pytest.mark.unit
    def test_manifest_contents(self, tmp_path):
        """The manifest lists classes, counts, seeds and hashes."""
        cache = make_cache(2, 3)
        save_cache(tmp_path, cache, dataset_hash="h" * 64, denoiser_converged=True)
        manifest = load_manifest(tmp_path)

        assert cache_complete(tmp_path)
        assert manifest.count_per_class == 3
        assert manifest.seeds["1"] == [r.seed for r in cache.records[1]]
        assert manifest.dataset_hash == "h" * 64
        assert manifest.denoiser_converged is True

    @pytest.mark.unit
    def test_unequal_counts_rejected(self):
        """Every class must hold the same number of records."""
        cache = make_cache(2, 3)
        cache.records[1] = cache.records[1][:2]
        with pytest.raises(ValueError, match="different record counts"):
            save_cache("unused", cache, dataset_hash="h" * 64)

    @pytest.mark.unit
    def test_missing_cache_points_to_build(self, tmp_path):
        """No manifest: run build-cache first."""
        assert not cache_complete(tmp_path)
        with pytest.raises(MissingArtifactError, match="build-cache"):
            load_cache(tmp_path)

    @pytest.mark.unit
    def test_seed_mismatch_rejected(self, tmp_path):
        """A class file whose seeds disagree with the manifest is rejected."""
        cache = make_cache(2, 2)
        save_cache(tmp_path, cache, dataset_hash="h" * 64)
        records = cache.records[0]
        save_container(
            class_file(tmp_path, 0),
            {
                "latents": np.stack([r.latent for r in records]),
                "images": np.stack([r.image for r in records]),
                "tokens": np.array([r.token for r in records]),
                "seeds": np.array([99, 98]),
            },
        )
        with pytest.raises(ArtifactError, match="seeds"):
            load_cache(tmp_path)

    @pytest.mark.unit
    def test_empty_cache_object(self):
        """An empty cache has no classes and min_count 0."""
        cache = GenerationCache(records={})
        assert cache.classes == []
        assert cache.min_count == 0
