"""Generator and discriminator architectures.

The generator is a 10-layer 1D U-Net: five strided operational layers that
halve the length, then five transposed operational layers that double it
back, with additive skip connections between mirrored levels (including the
input merged into the final layer, so a freshly built network is already
close to the identity map).  Kernel size is 5 everywhere except the last
transposed layer (6); every stage uses stride 2.  tanh follows every merge,
keeping all activations bounded for the polynomial taps.

The discriminator stacks six operational layers with kernel size 4 and
strides 2,2,2,2,1,2; the final layer is linear so least-squares targets are
reachable from both sides.  Default channel widths are tuned so a Q=3
generator carries about 0.75M parameters and its Q=1 counterpart about
0.25M, with their ratio essentially 3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .numerics import tanh_backward
from .selfonn import OperationalConvLayer, OperationalTransposedConvLayer

DOWNSAMPLE_FACTOR = 32  # five stride-2 stages


@dataclass(frozen=True)
class GeneratorConfig:
    q_order: int = 3
    encoder_channels: tuple[int, ...] = (25, 50, 75, 100, 125)
    kernel_size: int = 5
    final_kernel_size: int = 6
    stride: int = 2
    skip_mode: str = "additive"
    input_channels: int = 1

    def __post_init__(self) -> None:
        if len(self.encoder_channels) != 5:
            raise ConfigurationError("generator needs exactly 5 encoder widths")
        if self.skip_mode != "additive":
            raise ConfigurationError(f"unsupported skip mode {self.skip_mode!r}")
        if self.q_order < 1:
            raise ConfigurationError("q_order must be >= 1")


@dataclass(frozen=True)
class DiscriminatorConfig:
    q_order: int = 3
    channels: tuple[int, ...] = (33, 66, 99, 132, 165)
    kernel_size: int = 4
    strides: tuple[int, ...] = (2, 2, 2, 2, 1, 2)
    padding: int = 1
    input_channels: int = 1
    init_gain: float = 2.25

    def __post_init__(self) -> None:
        if len(self.channels) != len(self.strides) - 1:
            raise ConfigurationError("discriminator needs one stride per layer")
        if self.q_order < 1:
            raise ConfigurationError("q_order must be >= 1")
        if self.init_gain <= 0.0:
            raise ConfigurationError("init_gain must be positive")


class Generator:
    """Length-preserving corrupted/clean translator; output lies in (-1, 1)."""

    def __init__(
        self,
        config: GeneratorConfig,
        encoder: list[OperationalConvLayer],
        decoder: list[OperationalTransposedConvLayer],
    ) -> None:
        self.config = config
        self.encoder = encoder
        self.decoder = decoder

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 3 or x.shape[1] != self.config.input_channels:
            raise ConfigurationError(
                f"generator expects (batch, {self.config.input_channels}, length), got {x.shape}"
            )
        if x.shape[2] % DOWNSAMPLE_FACTOR != 0:
            raise ConfigurationError(
                f"input length {x.shape[2]} is not divisible by {DOWNSAMPLE_FACTOR}"
            )

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_train(x)
        return y

    def forward_train(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        self._check_input(x)
        enc_caches, enc_acts = [], []
        h = x
        for layer in self.encoder:
            pre, cache = layer.forward_train(h)
            h = np.tanh(pre)
            enc_caches.append(cache)
            enc_acts.append(h)
        # skip source for decoder layer i is the mirrored level 4-i;
        # level 0 is the network input itself
        skips = [x] + enc_acts[:4]
        dec_caches, dec_acts = [], []
        for i, layer in enumerate(self.decoder):
            pre, cache = layer.forward_train(h)
            pre += skips[4 - i]
            h = np.tanh(pre)
            dec_caches.append(cache)
            dec_acts.append(h)
        cache = {
            "enc_caches": enc_caches,
            "enc_acts": enc_acts,
            "dec_caches": dec_caches,
            "dec_acts": dec_acts,
        }
        return h, cache

    def backward(
        self, cache: dict, grad_y: np.ndarray, need_weight_grads: bool = True
    ) -> tuple[np.ndarray, list[np.ndarray] | None]:
        enc_caches = cache["enc_caches"]
        enc_acts = cache["enc_acts"]
        dec_caches = cache["dec_caches"]
        dec_acts = cache["dec_acts"]
        dec_grads: list[tuple] = []
        skip_grads: list[np.ndarray | None] = [None] * 5
        g = grad_y
        for i in range(4, -1, -1):
            gpre = tanh_backward(dec_acts[i], g)
            skip_grads[4 - i] = gpre
            g, gw, gb = self.decoder[i].backward(dec_caches[i], gpre, need_weight_grads)
            dec_grads.append((gw, gb))
        enc_grads: list[tuple] = []
        for i in range(4, -1, -1):
            gpre = tanh_backward(enc_acts[i], g)
            g, gw, gb = self.encoder[i].backward(enc_caches[i], gpre, need_weight_grads)
            g = g + skip_grads[i]
            enc_grads.append((gw, gb))
        grad_x = g
        if not need_weight_grads:
            return grad_x, None
        params: list[np.ndarray] = []
        for gw, gb in reversed(enc_grads):
            params.extend([gw.weights, gb])
        for gw, gb in reversed(dec_grads):
            params.extend([gw.weights, gb])
        return grad_x, params

    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in [*self.encoder, *self.decoder]:
            out.extend([layer.weights.weights, layer.bias])
        return out

    def param_layout(self) -> list[tuple[str, tuple[int, ...]]]:
        layout = []
        for i, layer in enumerate(self.encoder):
            layout.append((f"enc{i}.weights", layer.weights.weights.shape))
            layout.append((f"enc{i}.bias", layer.bias.shape))
        for i, layer in enumerate(self.decoder):
            layout.append((f"dec{i}.weights", layer.weights.weights.shape))
            layout.append((f"dec{i}.bias", layer.bias.shape))
        return layout


class Discriminator:
    """Maps a segment to an unbounded score vector (length 124 for L=4000)."""

    def __init__(self, config: DiscriminatorConfig, layers: list[OperationalConvLayer]) -> None:
        self.config = config
        self.layers = layers

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_train(x)
        return y

    def forward_train(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        if x.ndim != 3 or x.shape[1] != self.config.input_channels:
            raise ConfigurationError(
                f"discriminator expects (batch, {self.config.input_channels}, length), got {x.shape}"
            )
        caches, acts = [], []
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            pre, cache = layer.forward_train(h)
            h = pre if i == last else np.tanh(pre)
            caches.append(cache)
            acts.append(h)
        return h, {"caches": caches, "acts": acts}

    def backward(
        self, cache: dict, grad_y: np.ndarray, need_weight_grads: bool = True
    ) -> tuple[np.ndarray, list[np.ndarray] | None]:
        caches = cache["caches"]
        acts = cache["acts"]
        grads: list[tuple] = []
        g = grad_y
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            gpre = g if i == last else tanh_backward(acts[i], g)
            g, gw, gb = self.layers[i].backward(caches[i], gpre, need_weight_grads)
            grads.append((gw, gb))
        if not need_weight_grads:
            return g, None
        params: list[np.ndarray] = []
        for gw, gb in reversed(grads):
            params.extend([gw.weights, gb])
        return g, params

    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend([layer.weights.weights, layer.bias])
        return out

    def param_layout(self) -> list[tuple[str, tuple[int, ...]]]:
        layout = []
        for i, layer in enumerate(self.layers):
            layout.append((f"layer{i}.weights", layer.weights.weights.shape))
            layout.append((f"layer{i}.bias", layer.bias.shape))
        return layout

    def output_length(self, length: int) -> int:
        for layer in self.layers:
            length = layer.output_length(length)
        return length


def build_generator(cfg: GeneratorConfig, seed) -> Generator:
    """Deterministically initialize a generator; same seed, same weights."""
    rng = np.random.default_rng(seed)
    k = cfg.kernel_size
    pad = (k - 1) // 2
    widths = [cfg.input_channels, *cfg.encoder_channels]
    encoder = [
        OperationalConvLayer.create(
            widths[i], widths[i + 1], cfg.q_order, k, cfg.stride, pad, rng
        )
        for i in range(5)
    ]
    # stride-2 stages double the length exactly: K=5 uses output_padding 1,
    # the final K=6 layer uses output_padding 0
    decoder: list[OperationalTransposedConvLayer] = []
    dec_widths = [*reversed(cfg.encoder_channels), cfg.input_channels]
    for i in range(5):
        last = i == 4
        kk = cfg.final_kernel_size if last else k
        kk_pad = (kk - 1) // 2 if not last else (kk - 2) // 2
        # (L-1)*s - 2p + K + out_pad == s*L forces out_pad = s + 2p - K
        out_pad = cfg.stride + 2 * kk_pad - kk
        if not 0 <= out_pad < cfg.stride:
            raise ConfigurationError(
                f"kernel {kk} with stride {cfg.stride} cannot exactly double the length"
            )
        decoder.append(
            OperationalTransposedConvLayer.create(
                dec_widths[i], dec_widths[i + 1], cfg.q_order, kk, cfg.stride, kk_pad, out_pad, rng
            )
        )
    return Generator(cfg, encoder, decoder)


def build_discriminator(cfg: DiscriminatorConfig, seed) -> Discriminator:
    rng = np.random.default_rng(seed)
    widths = [cfg.input_channels, *cfg.channels, 1]
    layers = [
        OperationalConvLayer.create(
            widths[i], widths[i + 1], cfg.q_order, cfg.kernel_size, cfg.strides[i], cfg.padding, rng
        )
        for i in range(len(cfg.strides))
    ]
    # Fan-in init leaves the score head near zero, and the fixed-step
    # optimizer grows it too slowly to reach the 0/1 targets within the
    # short training budget; start each layer at a scale where scores and
    # input gradients are O(1).
    for layer in layers:
        layer.weights.weights *= cfg.init_gain
    return Discriminator(cfg, layers)


def quad_width_presets() -> tuple[GeneratorConfig, DiscriminatorConfig]:
    """Plain-convolution comparison preset at 4x the default channel widths.

    Q=1 reduces every generative neuron to an ordinary convolution, so this
    is the conventional wide CNN baseline for side-by-side experiments.  It
    is a configuration convenience only; no pretrained weights ship with it.
    """
    return (
        GeneratorConfig(q_order=1, encoder_channels=(100, 200, 300, 400, 500)),
        DiscriminatorConfig(q_order=1, channels=(132, 264, 396, 528, 660)),
    )


def count_params(model) -> tuple[int, list[tuple[str, int]]]:
    """Exact parameter count with a per-layer breakdown."""
    if isinstance(model, Generator):
        named = [(f"enc{i}", l) for i, l in enumerate(model.encoder)] + [
            (f"dec{i}", l) for i, l in enumerate(model.decoder)
        ]
    elif isinstance(model, Discriminator):
        named = [(f"layer{i}", l) for i, l in enumerate(model.layers)]
    else:
        raise ConfigurationError(f"cannot count parameters of {type(model).__name__}")
    breakdown = [(name, layer.param_count()) for name, layer in named]
    return sum(c for _, c in breakdown), breakdown
