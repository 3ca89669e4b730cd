"""Training-objective tests on miniature networks (L=128, tiny widths)."""

from dataclasses import dataclass

import numpy as np
import pytest

from ecgrestore.cyclegan import (
    LOSS_CSV_HEADER,
    CycleGanModel,
    LossBundle,
    TrainConfig,
    cycle_loss,
    discriminator_loss,
    draw_batches,
    fit,
    gen_adversarial_loss,
    generator_objective,
    generator_phase,
    identity_loss,
    loss_history_csv,
    restore_segment,
    train_step,
)
from ecgrestore.errors import ConfigurationError, InputError

MINI = dict(
    generator_channels=(2, 3, 4, 5, 6),
    discriminator_channels=(2, 3, 4, 5, 6),
    batch_size=2,
)


def mini_cfg(**kw) -> TrainConfig:
    return TrainConfig(**{**MINI, **kw})


def mini_batches(seed=0, length=128, batch=2):
    rng = np.random.default_rng(seed)
    t = np.arange(length) / length
    clean = np.stack(
        [0.8 * np.sin(2 * np.pi * (3 + i) * t) for i in range(batch)]
    )[:, None, :]
    corrupted = np.clip(
        clean + 0.3 * rng.standard_normal(clean.shape), -1, 1
    )
    return clean, corrupted


class _ConstantScore:
    """Stub discriminator returning a fixed score array."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=np.float64)

    def forward(self, x):
        return np.broadcast_to(self.scores, (x.shape[0],) + self.scores.shape[1:]).copy()


class _Identity:
    def forward(self, x):
        return x


class _Shift:
    def __init__(self, delta):
        self.delta = delta

    def forward(self, x):
        return x + self.delta


class _Negate:
    def forward(self, x):
        return -x


class TestLossOracles:
    def test_adv_all_scores_one_is_zero(self):
        d = _ConstantScore(np.ones((1, 1, 4)))
        assert gen_adversarial_loss(d, _Identity(), np.zeros((3, 1, 8))) == 0.0

    def test_adv_all_scores_zero_is_one(self):
        d = _ConstantScore(np.zeros((1, 1, 4)))
        assert gen_adversarial_loss(d, _Identity(), np.zeros((3, 1, 8))) == 1.0

    def test_adv_half_and_three_halves(self):
        d = _ConstantScore(np.array([[[0.5, 1.5]]]))
        assert gen_adversarial_loss(d, _Identity(), np.zeros((2, 1, 8))) == pytest.approx(0.25)

    def test_disc_perfect_is_zero(self):
        class Perfect:
            def forward(self, x):
                # score 1 when fed the real batch marker, 0 otherwise
                target = 1.0 if x[0, 0, 0] > 0 else 0.0
                return np.full((x.shape[0], 1, 4), target)

        real = np.ones((2, 1, 8))
        fake = -np.ones((2, 1, 8))
        assert discriminator_loss(Perfect(), real, fake) == 0.0

    def test_disc_constant_half(self):
        d = _ConstantScore(np.full((1, 1, 4), 0.5))
        assert discriminator_loss(d, np.ones((2, 1, 8)), np.ones((2, 1, 8))) == pytest.approx(0.25)

    def test_cycle_identity_is_zero(self):
        x = np.random.default_rng(0).uniform(-1, 1, (2, 1, 16))
        c = np.random.default_rng(1).uniform(-1, 1, (2, 1, 16))
        assert cycle_loss(_Identity(), _Identity(), x, c) == 0.0

    def test_cycle_composition_shift(self):
        # GC2X(GX2C(x)) = x + 0.1 makes the corrupted-side term exactly 0.1
        x = np.random.default_rng(0).uniform(-1, 1, (2, 1, 16))
        c = np.random.default_rng(1).uniform(-1, 1, (2, 1, 16))
        total = cycle_loss(_Shift(0.1), _Identity(), x, c)
        assert total == pytest.approx(0.2)  # both round trips shift by 0.1

    def test_cycle_nonnegative(self):
        x = np.random.default_rng(2).uniform(-1, 1, (2, 1, 16))
        c = np.random.default_rng(3).uniform(-1, 1, (2, 1, 16))
        assert cycle_loss(_Shift(-0.05), _Shift(0.02), x, c) >= 0.0

    def test_identity_identity_is_zero(self):
        x = np.random.default_rng(4).uniform(-1, 1, (2, 1, 16))
        c = np.random.default_rng(5).uniform(-1, 1, (2, 1, 16))
        assert identity_loss(_Identity(), _Identity(), x, c) == 0.0

    def test_identity_negation_of_half(self):
        # GX2C(c) = -c with c = +0.5 everywhere: first term |(-0.5) - 0.5| = 1
        c = np.full((2, 1, 16), 0.5)
        x = np.zeros((2, 1, 16))
        assert identity_loss(_Negate(), _Identity(), x, c) == pytest.approx(1.0)


class TestTrainStep:
    def test_determinism(self):
        cfg = mini_cfg(seed=7)
        clean, corrupted = mini_batches()
        runs = []
        for _ in range(2):
            model = CycleGanModel.build(cfg)
            bundles = [train_step(model, clean, corrupted, cfg) for _ in range(3)]
            runs.append(bundles)
        assert runs[0] == runs[1]

    def test_total_decomposition_exact(self):
        cfg = mini_cfg(seed=8)
        model = CycleGanModel.build(cfg)
        clean, corrupted = mini_batches(1)
        b = train_step(model, clean, corrupted, cfg)
        assert b.total == b.adv1 + b.adv2 + cfg.lambda_cyc * b.cyc + cfg.beta_ide * b.ide
        assert b.adv1 >= 0 and b.adv2 >= 0 and b.cyc >= 0 and b.ide >= 0

    def test_default_weights_are_paper_values(self):
        cfg = TrainConfig()
        assert cfg.lambda_cyc == 10.0
        assert cfg.beta_ide == 5.0
        assert cfg.lr == 1e-5
        assert cfg.max_iterations == 1000
        assert cfg.batch_size == 8
        assert cfg.q_order == 3

    def test_toy_corpus_loss_decreases(self):
        # desk-scale run: 50 steps on a 16-segment corpus
        cfg = mini_cfg(seed=9, lr=1e-3, max_iterations=50)
        model = CycleGanModel.build(cfg)
        rng = np.random.default_rng(9)
        t = np.arange(128) / 128
        clean = np.stack([0.8 * np.sin(2 * np.pi * (2 + k % 5) * t) for k in range(16)])
        corrupted = np.clip(clean + 0.3 * rng.standard_normal(clean.shape), -1, 1)

        @dataclass
        class Pools:
            clean: np.ndarray
            corrupted: np.ndarray

        history = fit(model, Pools(clean, corrupted), cfg)
        assert len(history) == 50
        assert history[-1].total < history[0].total

    def test_all_networks_update(self):
        cfg = mini_cfg(seed=10)
        model = CycleGanModel.build(cfg)
        before = {k: [p.copy() for p in n.params()] for k, n in model.networks().items()}
        clean, corrupted = mini_batches(2)
        train_step(model, clean, corrupted, cfg)
        for name, net in model.networks().items():
            changed = any(
                not np.array_equal(p, q) for p, q in zip(net.params(), before[name])
            )
            assert changed, f"{name} did not move"

    def test_fake_detachment_discriminator_loss_moves_no_generator(self):
        # rig both discriminators to output exactly 1 and zero the cycle and
        # identity weights: the generator objective gradient vanishes while
        # the discriminator fake-term gradient does not
        cfg = mini_cfg(seed=11, lambda_cyc=0.0, beta_ide=0.0)
        model = CycleGanModel.build(cfg)
        for d in (model.dc, model.dx):
            for layer in d.layers:
                layer.weights.weights[:] = 0.0
                layer.bias[:] = 0.0
            d.layers[-1].bias[:] = 1.0
        gen_before = [p.copy() for p in model.gx2c.params() + model.gc2x.params()]
        disc_before = [p.copy() for p in model.dc.params() + model.dx.params()]
        clean, corrupted = mini_batches(3)
        bundle = train_step(model, clean, corrupted, cfg)
        assert bundle.adv1 == 0.0 and bundle.adv2 == 0.0
        for p, q in zip(model.gx2c.params() + model.gc2x.params(), gen_before):
            assert np.array_equal(p, q)
        assert any(
            not np.array_equal(p, q)
            for p, q in zip(model.dc.params() + model.dx.params(), disc_before)
        )

    def test_wrong_batch_shape_rejected(self):
        cfg = mini_cfg()
        model = CycleGanModel.build(cfg)
        with pytest.raises(ConfigurationError):
            train_step(model, np.zeros((5, 1, 128)), np.zeros((5, 1, 128)), cfg)


class TestGeneratorGradient:
    @staticmethod
    def objective_and_kink_signs(model, clean, corrupted, cfg):
        # signs of every L1 residual element: a coordinate whose perturbation
        # flips any of them crosses a kink, where central differences measure
        # the average slope rather than the subgradient
        fake_c = model.gx2c.forward(corrupted)
        fake_x = model.gc2x.forward(clean)
        residuals = (
            model.gc2x.forward(fake_c) - corrupted,
            model.gx2c.forward(fake_x) - clean,
            model.gx2c.forward(clean) - clean,
            model.gc2x.forward(corrupted) - corrupted,
        )
        sc = model.dc.forward(fake_c)
        sx = model.dx.forward(fake_x)
        value = (
            float(np.mean((1.0 - sc) ** 2))
            + float(np.mean((1.0 - sx) ** 2))
            + cfg.lambda_cyc * sum(float(np.mean(np.abs(r))) for r in residuals[:2])
            + cfg.beta_ide * sum(float(np.mean(np.abs(r))) for r in residuals[2:])
        )
        signs = np.concatenate([np.sign(r).ravel() for r in residuals])
        return value, signs

    def test_objective_gradient_matches_finite_differences(self):
        cfg = mini_cfg(seed=12)
        model = CycleGanModel.build(cfg)
        clean, corrupted = mini_batches(4)
        phase = generator_phase(model, clean, corrupted, cfg)
        analytic = {
            "gx2c": (model.gx2c.params(), phase.gx2c_grads),
            "gc2x": (model.gc2x.params(), phase.gc2x_grads),
        }
        rng = np.random.default_rng(0)
        h = 1e-4
        worst = 0.0
        checked = skipped = 0
        for name, (params, grads) in analytic.items():
            for arr, grad in zip(params, grads):
                flat = rng.choice(arr.size, size=min(4, arr.size), replace=False)
                for fi in flat:
                    idx = np.unravel_index(fi, arr.shape)
                    orig = arr[idx]
                    arr[idx] = orig + h
                    lp, signs_p = self.objective_and_kink_signs(model, clean, corrupted, cfg)
                    arr[idx] = orig - h
                    lm, signs_m = self.objective_and_kink_signs(model, clean, corrupted, cfg)
                    arr[idx] = orig
                    if not np.array_equal(signs_p, signs_m):
                        skipped += 1
                        continue
                    numeric = (lp - lm) / (2 * h)
                    # floor at fd resolution: gradients below ~1e-6 drown in
                    # the cancellation noise of an O(1) objective
                    denom = max(abs(numeric), abs(grad[idx]), 1e-6)
                    worst = max(worst, abs(numeric - grad[idx]) / denom)
                    checked += 1
        assert worst <= 1e-4, worst
        assert checked >= 80
        assert skipped < checked / 4

    def test_phase_does_not_update(self):
        cfg = mini_cfg(seed=13)
        model = CycleGanModel.build(cfg)
        before = [p.copy() for p in model.gx2c.params()]
        clean, corrupted = mini_batches(5)
        generator_phase(model, clean, corrupted, cfg)
        for p, q in zip(model.gx2c.params(), before):
            assert np.array_equal(p, q)


class TestFit:
    def make_pools(self, n=8, length=128, seed=0):
        rng = np.random.default_rng(seed)
        t = np.arange(length) / length
        clean = np.stack([0.7 * np.sin(2 * np.pi * (2 + k % 3) * t) for k in range(n)])
        corrupted = np.clip(clean + 0.25 * rng.standard_normal(clean.shape), -1, 1)

        @dataclass
        class Pools:
            clean: np.ndarray
            corrupted: np.ndarray

        return Pools(clean, corrupted)

    def test_records_one_bundle_per_iteration(self):
        cfg = mini_cfg(seed=14, max_iterations=10)
        model = CycleGanModel.build(cfg)
        history = fit(model, self.make_pools(), cfg)
        assert len(history) == 10
        assert model.iteration == 10

    def test_empty_pool_rejected(self):
        cfg = mini_cfg(seed=15, max_iterations=2)
        model = CycleGanModel.build(cfg)

        @dataclass
        class Pools:
            clean: np.ndarray
            corrupted: np.ndarray

        with pytest.raises(ConfigurationError):
            fit(model, Pools(np.zeros((0, 128)), np.zeros((3, 128))), cfg)

    def test_batch_draws_depend_only_on_iteration(self):
        cfg = mini_cfg(seed=16)
        pools = self.make_pools()
        a = draw_batches(pools.clean, pools.corrupted, cfg, 5)
        b = draw_batches(pools.clean, pools.corrupted, cfg, 5)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        c = draw_batches(pools.clean, pools.corrupted, cfg, 6)
        assert not np.array_equal(a[0], c[0]) or not np.array_equal(a[1], c[1])

    def test_loss_csv_shape(self):
        cfg = mini_cfg(seed=17, max_iterations=3)
        model = CycleGanModel.build(cfg)
        history = fit(model, self.make_pools(), cfg)
        csv = loss_history_csv(history)
        lines = csv.strip().split("\n")
        assert lines[0] == LOSS_CSV_HEADER
        assert lines[0] == "iter,adv1,adv2,cyc,ide,total,d_clean,d_corrupted"
        assert len(lines) == 4
        first = lines[1].split(",")
        assert first[0] == "1"
        # round-trip repr: parsing back gives the exact float
        assert float(first[5]) == history[0].total

    def test_checkpoint_sink_cadence(self):
        cfg = mini_cfg(seed=18, max_iterations=7, checkpoint_interval=3)
        model = CycleGanModel.build(cfg)
        seen = []
        fit(model, self.make_pools(), cfg, checkpoint_sink=lambda m, h: seen.append(m.iteration))
        assert seen == [3, 6, 7]


class TestRestoreSegment:
    def build_model(self):
        cfg = mini_cfg(seed=19)
        return CycleGanModel.build(cfg)

    def test_two_pass_equals_two_single_passes(self):
        model = self.build_model()
        seg = np.random.default_rng(6).uniform(-1, 1, 128)
        two = restore_segment(model, seg, passes=2)
        once = restore_segment(model, restore_segment(model, seg, passes=1), passes=1)
        assert np.array_equal(two, once)

    def test_output_in_open_unit_interval(self):
        model = self.build_model()
        seg = np.random.default_rng(7).uniform(-1, 1, 128)
        out = restore_segment(model, seg)
        assert out.shape == (128,)
        assert np.all(np.abs(out) < 1.0)

    def test_length_preserved_for_4000(self):
        cfg = mini_cfg(seed=20)
        model = CycleGanModel.build(cfg)
        seg = np.random.default_rng(8).uniform(-1, 1, 4000)
        assert restore_segment(model, seg).shape == (4000,)

    def test_unnormalized_rejected(self):
        model = self.build_model()
        with pytest.raises(InputError):
            restore_segment(model, np.full(128, 1.5))

    def test_tiny_overshoot_tolerated(self):
        model = self.build_model()
        seg = np.full(128, 1.0 + 5e-10)
        assert restore_segment(model, seg).shape == (128,)

    def test_passes_below_one_rejected(self):
        model = self.build_model()
        with pytest.raises(ConfigurationError):
            restore_segment(model, np.zeros(128), passes=0)


class TestConfigValidation:
    def test_negative_weights_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(lambda_cyc=-1.0)
        with pytest.raises(ConfigurationError):
            TrainConfig(beta_ide=-0.1)

    def test_bundle_from_parts_reconstruction(self):
        b = LossBundle.from_parts(0.5, 0.25, 0.125, 0.0625, 10.0, 5.0, 0.1, 0.2)
        assert b.total == 0.5 + 0.25 + 10.0 * 0.125 + 5.0 * 0.0625
