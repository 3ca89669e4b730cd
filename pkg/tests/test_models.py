"""Architecture tests: shapes, parameter accounting, determinism, and an
end-to-end gradient check of the discriminator-of-generator composite."""

import numpy as np
import pytest

from ecgrestore.errors import ConfigurationError
from ecgrestore.models import (
    DiscriminatorConfig,
    GeneratorConfig,
    build_discriminator,
    build_generator,
    count_params,
    quad_width_presets,
)
from ecgrestore.selfonn import grad_check

MINI_GEN = GeneratorConfig(encoder_channels=(2, 3, 4, 5, 6))
MINI_DISC = DiscriminatorConfig(channels=(2, 3, 4, 5, 6))


class TestGeneratorShapes:
    def test_encoder_decoder_length_ladder(self):
        g = build_generator(MINI_GEN, seed=0)
        lengths = [4000]
        for layer in g.encoder:
            lengths.append(layer.output_length(lengths[-1]))
        assert lengths == [4000, 2000, 1000, 500, 250, 125]
        for layer in g.decoder:
            lengths.append(layer.output_length(lengths[-1]))
        assert lengths[-5:] == [250, 500, 1000, 2000, 4000]

    def test_forward_preserves_shape(self):
        g = build_generator(MINI_GEN, seed=0)
        for length in (4000, 4032):
            x = np.zeros((2, 1, length))
            assert g.forward(x).shape == (2, 1, length)

    def test_output_strictly_inside_unit_interval(self):
        g = build_generator(MINI_GEN, seed=1)
        x = np.random.default_rng(0).uniform(-1, 1, size=(2, 1, 4000))
        y = g.forward(x)
        assert np.all(np.abs(y) < 1.0)
        assert np.all(np.isfinite(y))

    def test_zero_input_finite(self):
        g = build_generator(MINI_GEN, seed=2)
        y = g.forward(np.zeros((1, 1, 4000)))
        assert np.all(np.isfinite(y)) and np.all(np.abs(y) < 1.0)

    def test_length_not_divisible_by_32_rejected(self):
        g = build_generator(MINI_GEN, seed=0)
        with pytest.raises(ConfigurationError):
            g.forward(np.zeros((1, 1, 4001)))

    def test_channel_count_enforced(self):
        g = build_generator(MINI_GEN, seed=0)
        with pytest.raises(ConfigurationError):
            g.forward(np.zeros((1, 2, 4000)))

    def test_repeated_forward_bit_identical(self):
        g = build_generator(MINI_GEN, seed=3)
        x = np.random.default_rng(1).uniform(-1, 1, size=(1, 1, 4000))
        assert np.array_equal(g.forward(x), g.forward(x))


class TestDeterminism:
    def test_same_seed_same_generator(self):
        a = build_generator(GeneratorConfig(), seed=[5, 0, 0])
        b = build_generator(GeneratorConfig(), seed=[5, 0, 0])
        for pa, pb in zip(a.params(), b.params()):
            assert np.array_equal(pa, pb)

    def test_different_seed_different_weights(self):
        a = build_generator(MINI_GEN, seed=0)
        b = build_generator(MINI_GEN, seed=1)
        assert any(not np.array_equal(pa, pb) for pa, pb in zip(a.params(), b.params()))

    def test_same_seed_same_discriminator(self):
        a = build_discriminator(DiscriminatorConfig(), seed=[5, 0, 2])
        b = build_discriminator(DiscriminatorConfig(), seed=[5, 0, 2])
        for pa, pb in zip(a.params(), b.params()):
            assert np.array_equal(pa, pb)


class TestDiscriminatorShapes:
    def test_default_output_length_124(self):
        d = build_discriminator(DiscriminatorConfig(), seed=0)
        assert d.output_length(4000) == 124
        x = np.zeros((1, 1, 4000))
        assert d.forward(x).shape == (1, 1, 124)

    def test_zero_input_finite_scores(self):
        d = build_discriminator(MINI_DISC, seed=0)
        s = d.forward(np.zeros((2, 1, 4000)))
        assert np.all(np.isfinite(s))

    def test_final_layer_linear_scores_unbounded(self):
        # tanh everywhere would cap |score| at 1; the linear head must not
        d = build_discriminator(MINI_DISC, seed=0)
        for layer in d.layers:
            layer.weights.weights *= 40.0
        s = d.forward(np.random.default_rng(2).uniform(-1, 1, size=(1, 1, 4000)))
        assert np.abs(s).max() > 1.0

    def test_determinism(self):
        d = build_discriminator(MINI_DISC, seed=4)
        x = np.random.default_rng(3).uniform(-1, 1, size=(1, 1, 4000))
        assert np.array_equal(d.forward(x), d.forward(x))


class TestParamCounts:
    def test_single_layer_formula(self):
        from ecgrestore.selfonn import OperationalConvLayer

        layer = OperationalConvLayer.create(16, 32, 3, 5, 1, 2, np.random.default_rng(0))
        assert layer.param_count() == 5 * 3 * 16 * 32 + 32

    def test_default_generator_near_781k(self):
        total, _ = count_params(build_generator(GeneratorConfig(), seed=0))
        assert abs(total - 781_000) <= 0.10 * 781_000

    def test_q1_generator_near_260k(self):
        total, _ = count_params(build_generator(GeneratorConfig(q_order=1), seed=0))
        assert abs(total - 260_000) <= 0.10 * 260_000

    def test_parameter_ratio_law(self):
        q3, _ = count_params(build_generator(GeneratorConfig(), seed=0))
        q1, _ = count_params(build_generator(GeneratorConfig(q_order=1), seed=0))
        assert 3 * 0.95 <= q3 / q1 <= 3.0

    def test_discriminator_ratio_law(self):
        q3, _ = count_params(build_discriminator(DiscriminatorConfig(), seed=0))
        q1, _ = count_params(build_discriminator(DiscriminatorConfig(q_order=1), seed=0))
        assert 3 * 0.95 <= q3 / q1 <= 3.0

    def test_breakdown_sums_to_total(self):
        g = build_generator(MINI_GEN, seed=0)
        total, breakdown = count_params(g)
        assert total == sum(n for _, n in breakdown)
        assert len(breakdown) == 10
        assert total == sum(p.size for p in g.params())

    def test_quad_width_preset_is_plain_conv_at_4x(self):
        gen_cfg, disc_cfg = quad_width_presets()
        assert gen_cfg.q_order == 1 and disc_cfg.q_order == 1
        base = GeneratorConfig()
        assert gen_cfg.encoder_channels == tuple(4 * c for c in base.encoder_channels)
        assert disc_cfg.channels == tuple(4 * c for c in DiscriminatorConfig().channels)
        # widths x4 at Q=1: roughly 16/3 of the default Q=3 parameter count
        total, _ = count_params(build_generator(gen_cfg, seed=0))
        q3, _ = count_params(build_generator(base, seed=0))
        assert 4.0 <= total / q3 <= 6.0


class TestConfigValidation:
    def test_generator_needs_five_widths(self):
        with pytest.raises(ConfigurationError):
            GeneratorConfig(encoder_channels=(8, 16, 24))

    def test_q_order_positive(self):
        with pytest.raises(ConfigurationError):
            GeneratorConfig(q_order=0)
        with pytest.raises(ConfigurationError):
            DiscriminatorConfig(q_order=0)

    def test_skip_mode_fixed(self):
        with pytest.raises(ConfigurationError):
            GeneratorConfig(skip_mode="concat")


class TestCompositeGradient:
    def test_disc_of_gen_matches_finite_differences(self):
        # L=128 miniature: the full backward chain through both networks
        gen = build_generator(MINI_GEN, seed=10)
        disc = build_discriminator(MINI_DISC, seed=11)
        x = np.random.default_rng(4).uniform(-0.9, 0.9, size=(1, 1, 128))

        class Composite:
            def forward_train(self, xv):
                y, gcache = gen.forward_train(xv)
                s, dcache = disc.forward_train(y)
                return s, (gcache, dcache)

            def backward(self, cache, grad_s, need_weight_grads=True):
                gcache, dcache = cache
                gy, dgrads = disc.backward(dcache, grad_s, need_weight_grads)
                gx, ggrads = gen.backward(gcache, gy, need_weight_grads)
                if not need_weight_grads:
                    return gx, None
                return gx, ggrads + dgrads

            def params(self):
                return gen.params() + disc.params()

            def param_layout(self):
                return [
                    ("gen." + n, s) for n, s in gen.param_layout()
                ] + [("disc." + n, s) for n, s in disc.param_layout()]

        report = grad_check(Composite(), x, n_samples=200, step=1e-4)
        assert report.passed(1e-4), report.worst[:3]

    def test_generator_gradient_alone(self):
        gen = build_generator(MINI_GEN, seed=12)
        x = np.random.default_rng(5).uniform(-0.9, 0.9, size=(1, 1, 96))
        report = grad_check(gen, x, n_samples=150, step=1e-4)
        assert report.passed(1e-4), report.worst[:3]

    def test_discriminator_gradient_alone(self):
        disc = build_discriminator(MINI_DISC, seed=13)
        x = np.random.default_rng(6).uniform(-0.9, 0.9, size=(1, 1, 128))
        report = grad_check(disc, x, n_samples=150, step=1e-4)
        assert report.passed(1e-4), report.worst[:3]
