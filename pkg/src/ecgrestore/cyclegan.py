"""Unpaired adversarial training of the corrupted/clean translator pair.

Four networks train together: GX2C maps corrupted segments toward the
clean domain, GC2X maps clean segments toward the corrupted domain, and
one least-squares discriminator per domain scores realism.  Generators
minimize adversarial + cycle-consistency + identity terms (weighted by
lambda_cyc and beta_ide); discriminators minimize the averaged real/fake
squared error against 1/0 targets.  Each iteration updates the
generators first, then both discriminators on the same (detached) fakes.

Randomness is channeled through per-purpose seed sequences
``[seed, tag, index]`` so a run can be checkpointed and resumed with a
bit-identical continuation: iteration k always draws its batch from the
stream ``[seed, TAG_BATCH, k]`` regardless of process history.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError, TrainingDivergenceError
from .models import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    build_discriminator,
    build_generator,
)
from .numerics import AdamState, adam_step

TAG_INIT = 0
TAG_BATCH = 1

NETWORK_NAMES = ("gx2c", "gc2x", "dc", "dx")


@dataclass(frozen=True)
class TrainConfig:
    lambda_cyc: float = 10.0
    beta_ide: float = 5.0
    lr: float = 1e-5
    max_iterations: int = 1000
    batch_size: int = 8
    seed: int = 0
    q_order: int = 3
    checkpoint_interval: int = 0
    generator_channels: tuple[int, ...] | None = None
    discriminator_channels: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.lambda_cyc < 0 or self.beta_ide < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if self.batch_size < 1 or self.max_iterations < 0:
            raise ConfigurationError("batch_size must be >= 1 and max_iterations >= 0")

    def generator_config(self) -> GeneratorConfig:
        if self.generator_channels is None:
            return GeneratorConfig(q_order=self.q_order)
        return GeneratorConfig(q_order=self.q_order, encoder_channels=self.generator_channels)

    def discriminator_config(self) -> DiscriminatorConfig:
        if self.discriminator_channels is None:
            return DiscriminatorConfig(q_order=self.q_order)
        return DiscriminatorConfig(q_order=self.q_order, channels=self.discriminator_channels)


@dataclass(frozen=True)
class LossBundle:
    adv1: float
    adv2: float
    cyc: float
    ide: float
    total: float
    d_clean: float
    d_corrupted: float

    @classmethod
    def from_parts(
        cls,
        adv1: float,
        adv2: float,
        cyc: float,
        ide: float,
        lambda_cyc: float,
        beta_ide: float,
        d_clean: float,
        d_corrupted: float,
    ) -> "LossBundle":
        total = adv1 + adv2 + lambda_cyc * cyc + beta_ide * ide
        return cls(adv1, adv2, cyc, ide, total, d_clean, d_corrupted)

    def finite(self) -> bool:
        return all(
            np.isfinite(v)
            for v in (self.adv1, self.adv2, self.cyc, self.ide, self.d_clean, self.d_corrupted)
        )


@dataclass
class CycleGanModel:
    gx2c: Generator
    gc2x: Generator
    dc: Discriminator
    dx: Discriminator
    opt_gx2c: AdamState
    opt_gc2x: AdamState
    opt_dc: AdamState
    opt_dx: AdamState
    config: TrainConfig
    iteration: int = 0

    @classmethod
    def build(cls, cfg: TrainConfig) -> "CycleGanModel":
        gcfg = cfg.generator_config()
        dcfg = cfg.discriminator_config()
        gx2c = build_generator(gcfg, seed=[cfg.seed, TAG_INIT, 0])
        gc2x = build_generator(gcfg, seed=[cfg.seed, TAG_INIT, 1])
        dc = build_discriminator(dcfg, seed=[cfg.seed, TAG_INIT, 2])
        dx = build_discriminator(dcfg, seed=[cfg.seed, TAG_INIT, 3])
        return cls(
            gx2c=gx2c,
            gc2x=gc2x,
            dc=dc,
            dx=dx,
            opt_gx2c=AdamState.for_params(gx2c.params(), lr=cfg.lr),
            opt_gc2x=AdamState.for_params(gc2x.params(), lr=cfg.lr),
            opt_dc=AdamState.for_params(dc.params(), lr=cfg.lr),
            opt_dx=AdamState.for_params(dx.params(), lr=cfg.lr),
            config=cfg,
        )

    def networks(self) -> dict:
        return {"gx2c": self.gx2c, "gc2x": self.gc2x, "dc": self.dc, "dx": self.dx}

    def optimizers(self) -> dict:
        return {
            "gx2c": self.opt_gx2c,
            "gc2x": self.opt_gc2x,
            "dc": self.opt_dc,
            "dx": self.opt_dx,
        }


def gen_adversarial_loss(d: Discriminator, g: Generator, batch: np.ndarray) -> float:
    """Mean over batch and score positions of (1 - D(G(x)))^2."""
    scores = d.forward(g.forward(batch))
    return float(np.mean((1.0 - scores) ** 2))


def discriminator_loss(d: Discriminator, real_batch: np.ndarray, fake_batch: np.ndarray) -> float:
    """Averaged least-squares targets: real scores toward 1, fake toward 0."""
    s_real = d.forward(real_batch)
    s_fake = d.forward(fake_batch)
    return 0.5 * (float(np.mean((s_real - 1.0) ** 2)) + float(np.mean(s_fake**2)))


def cycle_loss(gx2c, gc2x, x_corrupted: np.ndarray, x_clean: np.ndarray) -> float:
    """L1 error of round trips through both generators."""
    rec_x = gc2x.forward(gx2c.forward(x_corrupted))
    rec_c = gx2c.forward(gc2x.forward(x_clean))
    return float(np.mean(np.abs(rec_x - x_corrupted))) + float(np.mean(np.abs(rec_c - x_clean)))


def identity_loss(gx2c, gc2x, x_corrupted: np.ndarray, x_clean: np.ndarray) -> float:
    """L1 penalty for altering a segment already in the generator's target domain."""
    id_c = gx2c.forward(x_clean)
    id_x = gc2x.forward(x_corrupted)
    return float(np.mean(np.abs(id_c - x_clean))) + float(np.mean(np.abs(id_x - x_corrupted)))


def _sum_grads(*grad_lists: list[np.ndarray]) -> list[np.ndarray]:
    out = [g.copy() for g in grad_lists[0]]
    for gl in grad_lists[1:]:
        for acc, g in zip(out, gl):
            acc += g
    return out


@dataclass
class GeneratorPhase:
    """Losses and gradients of the joint generator objective, pre-update.

    Carries the fake batches, their discriminator scores, and the
    discriminator forward caches so the discriminator phase can reuse
    them without recomputation (the fakes are detached by construction:
    no gradient from the discriminator loss reaches the generators).
    """

    adv1: float
    adv2: float
    cyc: float
    ide: float
    gx2c_grads: list[np.ndarray]
    gc2x_grads: list[np.ndarray]
    fake_c: np.ndarray
    fake_x: np.ndarray
    sc_fake: np.ndarray
    sx_fake: np.ndarray
    dc_cache_fake: dict
    dx_cache_fake: dict


def generator_objective(
    model: CycleGanModel, clean_batch: np.ndarray, corrupted_batch: np.ndarray, cfg: TrainConfig
) -> float:
    """The scalar the generators descend: adv1 + adv2 + lam*cyc + beta*ide."""
    adv1 = gen_adversarial_loss(model.dc, model.gx2c, corrupted_batch)
    adv2 = gen_adversarial_loss(model.dx, model.gc2x, clean_batch)
    cyc = cycle_loss(model.gx2c, model.gc2x, corrupted_batch, clean_batch)
    ide = identity_loss(model.gx2c, model.gc2x, corrupted_batch, clean_batch)
    return adv1 + adv2 + cfg.lambda_cyc * cyc + cfg.beta_ide * ide


def generator_phase(
    model: CycleGanModel, clean_batch: np.ndarray, corrupted_batch: np.ndarray, cfg: TrainConfig
) -> GeneratorPhase:
    """Forward and backward passes of the generator objective (no update)."""
    c = clean_batch
    x = corrupted_batch
    gx2c, gc2x, dc, dx = model.gx2c, model.gc2x, model.dc, model.dx

    fake_c, cache_fc = gx2c.forward_train(x)
    fake_x, cache_fx = gc2x.forward_train(c)
    rec_x, cache_rx = gc2x.forward_train(fake_c)
    rec_c, cache_rc = gx2c.forward_train(fake_x)
    id_c, cache_ic = gx2c.forward_train(c)
    id_x, cache_ix = gc2x.forward_train(x)
    sc_fake, dc_cache_fake = dc.forward_train(fake_c)
    sx_fake, dx_cache_fake = dx.forward_train(fake_x)

    adv1 = float(np.mean((1.0 - sc_fake) ** 2))
    adv2 = float(np.mean((1.0 - sx_fake) ** 2))
    cyc = float(np.mean(np.abs(rec_x - x))) + float(np.mean(np.abs(rec_c - c)))
    ide = float(np.mean(np.abs(id_c - c))) + float(np.mean(np.abs(id_x - x)))

    # head gradients of adv1 + adv2 + lam*cyc + beta*ide
    lam, beta = cfg.lambda_cyc, cfg.beta_ide
    g_sc = (-2.0 / sc_fake.size) * (1.0 - sc_fake)
    g_sx = (-2.0 / sx_fake.size) * (1.0 - sx_fake)
    g_rec_x = (lam / rec_x.size) * np.sign(rec_x - x)
    g_rec_c = (lam / rec_c.size) * np.sign(rec_c - c)
    g_id_c = (beta / id_c.size) * np.sign(id_c - c)
    g_id_x = (beta / id_x.size) * np.sign(id_x - x)

    # adversarial paths: input gradients only, discriminators stay fixed
    g_fake_c_adv, _ = dc.backward(dc_cache_fake, g_sc, need_weight_grads=False)
    g_fake_x_adv, _ = dx.backward(dx_cache_fake, g_sx, need_weight_grads=False)

    # cycle paths through the second generator
    g_fake_c_cyc, gc2x_g_rx = gc2x.backward(cache_rx, g_rec_x)
    g_fake_x_cyc, gx2c_g_rc = gx2c.backward(cache_rc, g_rec_c)

    # source nodes accumulate adversarial + cycle head gradients
    _, gx2c_g_fc = gx2c.backward(cache_fc, g_fake_c_adv + g_fake_c_cyc)
    _, gc2x_g_fx = gc2x.backward(cache_fx, g_fake_x_adv + g_fake_x_cyc)
    _, gx2c_g_ic = gx2c.backward(cache_ic, g_id_c)
    _, gc2x_g_ix = gc2x.backward(cache_ix, g_id_x)

    return GeneratorPhase(
        adv1=adv1,
        adv2=adv2,
        cyc=cyc,
        ide=ide,
        gx2c_grads=_sum_grads(gx2c_g_fc, gx2c_g_rc, gx2c_g_ic),
        gc2x_grads=_sum_grads(gc2x_g_fx, gc2x_g_rx, gc2x_g_ix),
        fake_c=fake_c,
        fake_x=fake_x,
        sc_fake=sc_fake,
        sx_fake=sx_fake,
        dc_cache_fake=dc_cache_fake,
        dx_cache_fake=dx_cache_fake,
    )


def train_step(
    model: CycleGanModel,
    clean_batch: np.ndarray,
    corrupted_batch: np.ndarray,
    cfg: TrainConfig,
) -> LossBundle:
    """One fused update of all four networks on one batch pair.

    Generators update first from the joint objective; the discriminators
    then update on the same (detached) fakes, reusing the cached scores
    taken before any weights moved.
    """
    c = clean_batch
    x = corrupted_batch
    if c.shape != x.shape or c.ndim != 3 or c.shape[0] != cfg.batch_size:
        raise ConfigurationError(
            f"expected two ({cfg.batch_size}, 1, L) batches, got {c.shape} and {x.shape}"
        )
    dc, dx = model.dc, model.dx

    # Overflow is detected by the bundle.finite() gate below, not by
    # floating-point warnings, so silence them for the update.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        phase = generator_phase(model, c, x, cfg)
        adam_step(model.gx2c.params(), phase.gx2c_grads, model.opt_gx2c)
        adam_step(model.gc2x.params(), phase.gc2x_grads, model.opt_gc2x)

        sc_fake, sx_fake = phase.sc_fake, phase.sx_fake
        sc_real, dc_cache_real = dc.forward_train(c)
        sx_real, dx_cache_real = dx.forward_train(x)
        d_clean = 0.5 * (
            float(np.mean((sc_real - 1.0) ** 2)) + float(np.mean(sc_fake**2))
        )
        d_corrupted = 0.5 * (
            float(np.mean((sx_real - 1.0) ** 2)) + float(np.mean(sx_fake**2))
        )

        _, dc_g_real = dc.backward(dc_cache_real, (sc_real - 1.0) / sc_real.size)
        _, dc_g_fake = dc.backward(phase.dc_cache_fake, sc_fake / sc_fake.size)
        adam_step(dc.params(), _sum_grads(dc_g_real, dc_g_fake), model.opt_dc)

        _, dx_g_real = dx.backward(dx_cache_real, (sx_real - 1.0) / sx_real.size)
        _, dx_g_fake = dx.backward(phase.dx_cache_fake, sx_fake / sx_fake.size)
        adam_step(dx.params(), _sum_grads(dx_g_real, dx_g_fake), model.opt_dx)

    bundle = LossBundle.from_parts(
        phase.adv1, phase.adv2, phase.cyc, phase.ide, cfg.lambda_cyc, cfg.beta_ide,
        d_clean, d_corrupted,
    )
    if not bundle.finite():
        raise TrainingDivergenceError(
            f"non-finite loss at iteration {model.iteration + 1}: {bundle}"
        )
    return bundle


def draw_batches(
    clean_pool: np.ndarray, corrupted_pool: np.ndarray, cfg: TrainConfig, iteration: int
) -> tuple[np.ndarray, np.ndarray]:
    """Independent uniform draws from each pool for one iteration.

    The stream depends only on (seed, iteration), never on how many
    iterations ran before in this process.
    """
    rng = np.random.default_rng([cfg.seed, TAG_BATCH, iteration])
    ci = rng.integers(0, len(clean_pool), size=cfg.batch_size)
    xi = rng.integers(0, len(corrupted_pool), size=cfg.batch_size)
    return clean_pool[ci][:, None, :], corrupted_pool[xi][:, None, :]


def fit(
    model: CycleGanModel,
    dataset,
    cfg: TrainConfig,
    checkpoint_sink=None,
    progress=None,
) -> list[LossBundle]:
    """Train from model.iteration up to cfg.max_iterations.

    ``dataset`` must expose ``clean`` and ``corrupted`` pools of shape
    (n_segments, length).  ``checkpoint_sink(model, history)`` fires every
    cfg.checkpoint_interval iterations and once at the end.
    """
    clean = np.asarray(dataset.clean, dtype=np.float64)
    corrupted = np.asarray(dataset.corrupted, dtype=np.float64)
    if clean.ndim != 2 or corrupted.ndim != 2:
        raise ConfigurationError("pools must have shape (n_segments, length)")
    if len(clean) == 0 or len(corrupted) == 0:
        raise ConfigurationError("training pools must be non-empty")
    history: list[LossBundle] = []
    while model.iteration < cfg.max_iterations:
        it = model.iteration
        cb, xb = draw_batches(clean, corrupted, cfg, it)
        bundle = train_step(model, cb, xb, cfg)
        model.iteration = it + 1
        history.append(bundle)
        if progress is not None:
            progress(model.iteration, bundle)
        if (
            checkpoint_sink is not None
            and cfg.checkpoint_interval > 0
            and model.iteration % cfg.checkpoint_interval == 0
        ):
            checkpoint_sink(model, history)
    if checkpoint_sink is not None and model.iteration == cfg.max_iterations:
        checkpoint_sink(model, history)
    return history


LOSS_CSV_HEADER = "iter,adv1,adv2,cyc,ide,total,d_clean,d_corrupted"


def loss_history_csv(history: list[LossBundle], first_iteration: int = 0) -> str:
    """Render loss history as CSV; floats use round-trip repr."""
    lines = [LOSS_CSV_HEADER]
    for i, b in enumerate(history, start=first_iteration + 1):
        fields = [str(i)] + [
            repr(float(v))
            for v in (b.adv1, b.adv2, b.cyc, b.ide, b.total, b.d_clean, b.d_corrupted)
        ]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def restore_segment(model: CycleGanModel, segment: np.ndarray, passes: int = 1) -> np.ndarray:
    """Apply the corrupted-to-clean generator ``passes`` times.

    The input must already be normalized to [-1, 1]; the output of pass k
    feeds pass k+1 unchanged, so passes=2 is bitwise identical to two
    passes=1 calls.
    """
    if passes < 1:
        raise ConfigurationError(f"passes must be >= 1, got {passes}")
    seg = np.asarray(segment, dtype=np.float64)
    if seg.ndim != 1:
        raise InputError(f"segment must be one-dimensional, got shape {seg.shape}")
    if seg.size and np.max(np.abs(seg)) > 1.0 + 1e-9:
        raise InputError("segment is not normalized to [-1, 1]")
    y = seg[None, None, :]
    for _ in range(passes):
        y = model.gx2c.forward(y)
    return y[0, 0]
