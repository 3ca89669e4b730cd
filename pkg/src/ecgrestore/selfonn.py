"""Operational (generative-neuron) 1D layers.

Each kernel element applies a learned degree-Q polynomial to its input tap
instead of a single linear weight.  A layer's response is computed by
stacking the elementwise powers x, x^2, ..., x^Q along the channel axis and
running one ordinary (transposed) convolution over the widened map, which is
algebraically identical to summing Q separate convolutions.  With Q=1 every
layer reduces exactly to its convolutional counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericsError
from .numerics import (
    conv1d,
    conv1d_backward,
    conv_output_length,
    power_expand,
    tconv1d,
    tconv1d_backward,
    tconv_output_length,
)


@dataclass
class KernelTensor:
    """Learned polynomial tap coefficients, shaped (C_out, C_in, Q, K).

    The slice at a fixed q index is an ordinary convolution kernel bank for
    the (q+1)-th power of the input.
    """

    weights: np.ndarray

    def __post_init__(self) -> None:
        if self.weights.ndim != 4:
            raise ConfigurationError(
                f"kernel tensor must be (C_out, C_in, Q, K), got {self.weights.shape}"
            )

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def q_order(self) -> int:
        return self.weights.shape[2]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[3]

    def conv_bank(self, q: int) -> np.ndarray:
        """Ordinary kernel bank applied to the q-th power plane (1-based q)."""
        return self.weights[:, :, q - 1, :]

    def flat_conv(self) -> np.ndarray:
        """(C_out, Q*C_in, K) bank matching power_expand's plane-major layout."""
        o, c, q, k = self.weights.shape
        return np.ascontiguousarray(self.weights.transpose(0, 2, 1, 3)).reshape(o, q * c, k)

    def flat_tconv(self) -> np.ndarray:
        """(Q*C_in, C_out, K) bank for the transposed primitive."""
        o, c, q, k = self.weights.shape
        return np.ascontiguousarray(self.weights.transpose(2, 1, 0, 3)).reshape(q * c, o, k)

    @classmethod
    def from_flat_conv(cls, flat: np.ndarray, q_order: int) -> "KernelTensor":
        o, qc, k = flat.shape
        c = qc // q_order
        return cls(np.ascontiguousarray(flat.reshape(o, q_order, c, k).transpose(0, 2, 1, 3)))

    @classmethod
    def from_flat_tconv(cls, flat: np.ndarray, q_order: int) -> "KernelTensor":
        qc, o, k = flat.shape
        c = qc // q_order
        return cls(np.ascontiguousarray(flat.reshape(q_order, c, o, k).transpose(2, 1, 0, 3)))

    @classmethod
    def initialize(
        cls,
        out_channels: int,
        in_channels: int,
        q_order: int,
        kernel_size: int,
        rng: np.random.Generator,
    ) -> "KernelTensor":
        """Fan-in-scaled uniform init; the q-th power slice is damped by 1/q.

        Damping keeps a fresh layer close to the convolutional (Q=1) regime,
        since higher powers of tanh-bounded inputs shrink anyway.
        """
        if q_order < 1:
            raise ConfigurationError(f"q_order must be >= 1, got {q_order}")
        limit = 1.0 / np.sqrt(in_channels * kernel_size)
        w = rng.uniform(
            -limit, limit, size=(out_channels, in_channels, q_order, kernel_size)
        )
        for q in range(2, q_order + 1):
            w[:, :, q - 1, :] /= q
        return cls(w)


def _power_chain_grad(xe: np.ndarray, grad_xe: np.ndarray, channels: int, q_order: int) -> np.ndarray:
    """Map the gradient at the expanded planes back to the raw input.

    d(x^q)/dx = q * x^(q-1); the needed powers are already present in xe.
    """
    gx = grad_xe[:, :channels].copy()
    for q in range(2, q_order + 1):
        gx += q * xe[:, (q - 2) * channels : (q - 1) * channels] * grad_xe[
            :, (q - 1) * channels : q * channels
        ]
    return gx


def _finite_or_raise(y: np.ndarray, what: str) -> None:
    if not np.isfinite(y).all():
        raise NumericsError(
            f"{what} produced non-finite values; input to the power terms is unbounded"
        )


class OperationalConvLayer:
    """Strided operational convolution: bias + sum over channels and powers."""

    def __init__(
        self,
        weights: KernelTensor,
        bias: np.ndarray,
        stride: int = 1,
        padding: int = 0,
    ) -> None:
        if bias.shape != (weights.out_channels,):
            raise ConfigurationError(
                f"bias shape {bias.shape} does not match {weights.out_channels} output channels"
            )
        self.weights = weights
        self.bias = bias
        self.stride = stride
        self.padding = padding

    @classmethod
    def create(
        cls,
        in_channels: int,
        out_channels: int,
        q_order: int,
        kernel_size: int,
        stride: int,
        padding: int,
        rng: np.random.Generator,
    ) -> "OperationalConvLayer":
        weights = KernelTensor.initialize(out_channels, in_channels, q_order, kernel_size, rng)
        return cls(weights, np.zeros(out_channels), stride, padding)

    @property
    def q_order(self) -> int:
        return self.weights.q_order

    @property
    def in_channels(self) -> int:
        return self.weights.in_channels

    @property
    def out_channels(self) -> int:
        return self.weights.out_channels

    def param_count(self) -> int:
        w = self.weights
        return w.kernel_size * w.q_order * w.in_channels * w.out_channels + w.out_channels

    def output_length(self, length: int) -> int:
        return conv_output_length(length, self.weights.kernel_size, self.stride, self.padding)

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_train(x)
        return y

    def forward_train(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        if x.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"layer expects {self.in_channels} channels, got {x.shape[1]}"
            )
        xe = power_expand(x, self.q_order)
        y = conv1d(xe, self.weights.flat_conv(), self.bias, self.stride, self.padding)
        _finite_or_raise(y, "operational convolution")
        return y, (xe,)

    def backward(
        self, cache: tuple, grad_out: np.ndarray, need_weight_grads: bool = True
    ) -> tuple[np.ndarray, KernelTensor | None, np.ndarray | None]:
        (xe,) = cache
        grad_xe, grad_flat, grad_bias = conv1d_backward(
            xe, self.weights.flat_conv(), grad_out, self.stride, self.padding
        )
        grad_x = _power_chain_grad(xe, grad_xe, self.in_channels, self.q_order)
        if not need_weight_grads:
            return grad_x, None, None
        return grad_x, KernelTensor.from_flat_conv(grad_flat, self.q_order), grad_bias


class OperationalTransposedConvLayer:
    """Upsampling counterpart built on the scatter-add transposed convolution."""

    def __init__(
        self,
        weights: KernelTensor,
        bias: np.ndarray,
        stride: int = 1,
        padding: int = 0,
        output_padding: int = 0,
    ) -> None:
        if bias.shape != (weights.out_channels,):
            raise ConfigurationError(
                f"bias shape {bias.shape} does not match {weights.out_channels} output channels"
            )
        self.weights = weights
        self.bias = bias
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding

    @classmethod
    def create(
        cls,
        in_channels: int,
        out_channels: int,
        q_order: int,
        kernel_size: int,
        stride: int,
        padding: int,
        output_padding: int,
        rng: np.random.Generator,
    ) -> "OperationalTransposedConvLayer":
        weights = KernelTensor.initialize(out_channels, in_channels, q_order, kernel_size, rng)
        return cls(weights, np.zeros(out_channels), stride, padding, output_padding)

    @property
    def q_order(self) -> int:
        return self.weights.q_order

    @property
    def in_channels(self) -> int:
        return self.weights.in_channels

    @property
    def out_channels(self) -> int:
        return self.weights.out_channels

    def param_count(self) -> int:
        w = self.weights
        return w.kernel_size * w.q_order * w.in_channels * w.out_channels + w.out_channels

    def output_length(self, length: int) -> int:
        return tconv_output_length(
            length, self.weights.kernel_size, self.stride, self.padding, self.output_padding
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_train(x)
        return y

    def forward_train(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        if x.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"layer expects {self.in_channels} channels, got {x.shape[1]}"
            )
        xe = power_expand(x, self.q_order)
        y = tconv1d(
            xe,
            self.weights.flat_tconv(),
            self.bias,
            self.stride,
            self.padding,
            self.output_padding,
        )
        _finite_or_raise(y, "operational transposed convolution")
        return y, (xe,)

    def backward(
        self, cache: tuple, grad_out: np.ndarray, need_weight_grads: bool = True
    ) -> tuple[np.ndarray, KernelTensor | None, np.ndarray | None]:
        (xe,) = cache
        grad_xe, grad_flat, grad_bias = tconv1d_backward(
            xe,
            self.weights.flat_tconv(),
            grad_out,
            self.stride,
            self.padding,
            self.output_padding,
        )
        grad_x = _power_chain_grad(xe, grad_xe, self.in_channels, self.q_order)
        if not need_weight_grads:
            return grad_x, None, None
        return grad_x, KernelTensor.from_flat_tconv(grad_flat, self.q_order), grad_bias


@dataclass
class GradCheckEntry:
    parameter: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst: list[GradCheckEntry]

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error <= tolerance


def grad_check(
    layer,
    x: np.ndarray,
    tolerance: float = 1e-5,
    n_samples: int = 100,
    seed: int = 0,
    step: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic layer gradients against central finite differences.

    Samples coordinates from the weights, bias, and input; perturbation is
    scaled to the coordinate's magnitude.  The loss probed is a fixed random
    projection of the layer output, so every output element participates.
    """
    rng = np.random.default_rng(seed)
    y0, cache = layer.forward_train(x)
    probe = rng.standard_normal(y0.shape)

    def loss() -> float:
        y, _ = layer.forward_train(x)
        return float(np.sum(y * probe))

    if hasattr(layer, "params"):
        # whole model: backward yields one gradient per params() entry
        grad_x, grads = layer.backward(cache, probe, need_weight_grads=True)
        names = [name for name, _ in layer.param_layout()]
        targets = list(zip(names, layer.params(), grads))
        targets.append(("input", x, grad_x))
    else:
        grad_x, grad_w, grad_bias = layer.backward(cache, probe)
        targets = [
            ("weights", layer.weights.weights, grad_w.weights),
            ("bias", layer.bias, grad_bias),
            ("input", x, grad_x),
        ]
    entries: list[GradCheckEntry] = []
    checked = 0
    per_target = max(1, n_samples // len(targets))
    for name, arr, grad in targets:
        flat_idx = rng.choice(arr.size, size=min(per_target, arr.size), replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, arr.shape)
            h = step * max(1.0, abs(arr[idx]))
            orig = arr[idx]
            arr[idx] = orig + h
            lp = loss()
            arr[idx] = orig - h
            lm = loss()
            arr[idx] = orig
            numeric = (lp - lm) / (2.0 * h)
            analytic = float(grad[idx])
            scale = max(abs(analytic), abs(numeric), 1e-8)
            entries.append(
                GradCheckEntry(name, idx, analytic, numeric, abs(analytic - numeric) / scale)
            )
            checked += 1
    entries.sort(key=lambda e: e.rel_error, reverse=True)
    return GradCheckReport(
        max_rel_error=entries[0].rel_error if entries else 0.0,
        n_checked=checked,
        worst=entries[:10],
    )
