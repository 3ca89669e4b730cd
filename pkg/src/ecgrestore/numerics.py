"""Deterministic low-level 1D tensor kernels with exact analytic gradients.

Feature maps are float64 arrays of shape ``(batch, channels, length)``.
Convolutions use the cross-correlation convention (kernels are not flipped)
with zero padding.  Every reduction runs in a fixed order, so identical
inputs give bit-identical outputs regardless of how callers batch their
work.  The heavy contractions are expressed as matrix products so they run
through BLAS.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError


def conv_output_length(length: int, kernel_size: int, stride: int, padding: int) -> int:
    """Output length of a strided 1D convolution: floor((L + 2P - K)/s) + 1."""
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ConfigurationError(f"padding must be >= 0, got {padding}")
    n = (length + 2 * padding - kernel_size) // stride + 1
    if n < 1:
        raise ConfigurationError(
            f"convolution of length {length} with K={kernel_size}, stride={stride}, "
            f"padding={padding} yields non-positive output length {n}"
        )
    return n


def tconv_output_length(
    length: int, kernel_size: int, stride: int, padding: int, output_padding: int
) -> int:
    """Output length of a transposed convolution: (L-1)*s - 2P + K + output_padding."""
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if padding < 0 or output_padding < 0:
        raise ConfigurationError("padding and output_padding must be >= 0")
    if output_padding >= stride:
        raise ConfigurationError(
            f"output_padding ({output_padding}) must be < stride ({stride})"
        )
    n = (length - 1) * stride - 2 * padding + kernel_size + output_padding
    if n < 1:
        raise ConfigurationError(
            f"transposed convolution of length {length} with K={kernel_size}, "
            f"stride={stride}, padding={padding} yields non-positive length {n}"
        )
    return n


def _check_feature_map(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 3:
        raise ConfigurationError(f"{name} must have shape (batch, channels, length), got {x.shape}")


_ALIGN = 64  # bytes; one cache line


def _aligned_empty(shape: tuple) -> np.ndarray:
    """Allocate a float64 array whose base address is 64-byte aligned."""
    count = int(np.prod(shape))
    raw = np.empty(count + _ALIGN // 8, dtype=np.float64)
    offset = ((-raw.ctypes.data) % _ALIGN) // 8
    return raw[offset : offset + count].reshape(shape)


def _canonical_operand(a: np.ndarray) -> np.ndarray:
    if a.flags.c_contiguous and a.ctypes.data % _ALIGN == 0 and a.dtype == np.float64:
        return a
    out = _aligned_empty(a.shape)
    np.copyto(out, a)
    return out


def _gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with every buffer pinned to one alignment class.

    BLAS small-GEMM kernels can round differently depending on operand
    base-address alignment, so bitwise-equal inputs in different buffers
    may not give bitwise-equal products.  Copying operands into 64-byte
    aligned C-contiguous buffers makes the result a function of shapes
    and values only, which the reproducibility contracts require.
    """
    a = _canonical_operand(a)
    b = _canonical_operand(b)
    out = _aligned_empty((a.shape[0], b.shape[1]))
    np.matmul(a, b, out=out)
    return out


def _window_cols(x: np.ndarray, kernel_size: int, stride: int, padding: int) -> np.ndarray:
    """im2col: return an aligned contiguous (B*T, C*K) window matrix."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    win = sliding_window_view(x, kernel_size, axis=2)[:, :, ::stride, :]  # (B, C, T, K)
    b, c, t, k = win.shape
    cols = _aligned_empty((b, t, c, k))
    np.copyto(cols, win.transpose(0, 2, 1, 3))
    return cols.reshape(b * t, c * k)


def conv1d(
    x: np.ndarray,
    w: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Strided 1D cross-correlation of a feature map with a kernel bank.

    Parameters
    ----------
    x : (B, C_in, L) float64
    w : (C_out, C_in, K) float64
    bias : (C_out,) float64 or None
    """
    _check_feature_map(x)
    if w.ndim != 3:
        raise ConfigurationError(f"kernel bank must be (C_out, C_in, K), got {w.shape}")
    batch, c_in, length = x.shape
    c_out, c_in_w, kernel_size = w.shape
    if c_in != c_in_w:
        raise ConfigurationError(
            f"input has {c_in} channels but kernel expects {c_in_w}"
        )
    t = conv_output_length(length, kernel_size, stride, padding)
    cols = _window_cols(x, kernel_size, stride, padding)
    y = _gemm(cols, w.reshape(c_out, c_in * kernel_size).T)  # (B*T, C_out)
    y = np.ascontiguousarray(y.reshape(batch, t, c_out).transpose(0, 2, 1))
    if bias is not None:
        y += bias[:, None]
    return y


def conv1d_backward(
    x: np.ndarray,
    w: np.ndarray,
    grad_out: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of ``conv1d`` with respect to input, kernel bank, and bias.

    ``grad_x`` is the adjoint (transposed convolution) of ``grad_out`` by ``w``.
    """
    _check_feature_map(x)
    batch, c_in, length = x.shape
    c_out, _, kernel_size = w.shape
    t = conv_output_length(length, kernel_size, stride, padding)
    if grad_out.shape != (batch, c_out, t):
        raise ConfigurationError(
            f"grad_out shape {grad_out.shape} does not match conv output {(batch, c_out, t)}"
        )
    grad_bias = grad_out.sum(axis=(0, 2))
    cols = _window_cols(x, kernel_size, stride, padding)
    g2t = _aligned_empty((c_out, batch * t))
    np.copyto(g2t.reshape(c_out, batch, t), grad_out.transpose(1, 0, 2))
    grad_w = _gemm(g2t, cols).reshape(c_out, c_in, kernel_size)
    out_pad = length - ((t - 1) * stride - 2 * padding + kernel_size)
    grad_x = tconv1d(grad_out, w, None, stride, padding, out_pad)
    return grad_x, grad_w, grad_bias


def tconv1d(
    x: np.ndarray,
    w: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> np.ndarray:
    """Scatter-add transposed 1D convolution.

    Parameters
    ----------
    x : (B, C_in, L) float64
    w : (C_in, C_out, K) float64
        Note the axis order: with the same array, ``tconv1d`` is the exact
        adjoint of ``conv1d`` at matching stride/padding.
    """
    _check_feature_map(x)
    if w.ndim != 3:
        raise ConfigurationError(f"kernel bank must be (C_in, C_out, K), got {w.shape}")
    batch, c_in, length = x.shape
    c_in_w, c_out, kernel_size = w.shape
    if c_in != c_in_w:
        raise ConfigurationError(
            f"input has {c_in} channels but kernel expects {c_in_w}"
        )
    n_out = tconv_output_length(length, kernel_size, stride, padding, output_padding)
    full = (length - 1) * stride + kernel_size
    buf = np.zeros((batch, c_out, max(full, padding + n_out)))
    x2 = _aligned_empty((batch * length, c_in))
    np.copyto(x2.reshape(batch, length, c_in), x.transpose(0, 2, 1))
    contrib = _gemm(x2, w.reshape(c_in, c_out * kernel_size)).reshape(
        batch, length, c_out, kernel_size
    )
    contrib = contrib.transpose(0, 2, 1, 3)  # (B, C_out, L, K)
    span = (length - 1) * stride + 1
    for k in range(kernel_size):
        buf[:, :, k : k + span : stride] += contrib[:, :, :, k]
    z = np.ascontiguousarray(buf[:, :, padding : padding + n_out])
    if bias is not None:
        z += bias[:, None]
    return z


def tconv1d_backward(
    x: np.ndarray,
    w: np.ndarray,
    grad_out: np.ndarray,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of ``tconv1d`` with respect to input, kernel bank, and bias."""
    _check_feature_map(x)
    batch, c_in, length = x.shape
    c_in_w, c_out, kernel_size = w.shape
    n_out = tconv_output_length(length, kernel_size, stride, padding, output_padding)
    if grad_out.shape != (batch, c_out, n_out):
        raise ConfigurationError(
            f"grad_out shape {grad_out.shape} does not match tconv output {(batch, c_out, n_out)}"
        )
    grad_bias = grad_out.sum(axis=(0, 2))
    gpad = np.pad(grad_out, ((0, 0), (0, 0), (padding, padding)))
    gwin = sliding_window_view(gpad, kernel_size, axis=2)[:, :, ::stride, :][:, :, :length, :]
    gw2 = _aligned_empty((batch, length, c_out, kernel_size))
    np.copyto(gw2, gwin.transpose(0, 2, 1, 3))
    gw2 = gw2.reshape(batch * length, c_out * kernel_size)
    x2 = _aligned_empty((c_in, batch * length))
    np.copyto(x2.reshape(c_in, batch, length), x.transpose(1, 0, 2))
    grad_w = _gemm(x2, gw2).reshape(c_in, c_out, kernel_size)
    grad_x = np.ascontiguousarray(
        _gemm(gw2, w.reshape(c_in, c_out * kernel_size).T)
        .reshape(batch, length, c_in)
        .transpose(0, 2, 1)
    )
    return grad_x, grad_w, grad_bias


def power_expand(x: np.ndarray, q_order: int) -> np.ndarray:
    """Stack elementwise powers x, x^2, ..., x^Q along the channel axis.

    Plane q occupies channels [(q-1)*C, q*C); plane 1 is a bitwise copy of
    the input.  Powers are built by iterated multiplication.
    """
    _check_feature_map(x)
    if q_order < 1:
        raise ConfigurationError(f"q_order must be >= 1, got {q_order}")
    batch, channels, length = x.shape
    out = np.empty((batch, q_order * channels, length))
    out[:, :channels] = x
    for q in range(2, q_order + 1):
        np.multiply(
            out[:, (q - 2) * channels : (q - 1) * channels],
            x,
            out=out[:, (q - 1) * channels : q * channels],
        )
    return out


def tanh_act(x: np.ndarray) -> np.ndarray:
    """Bounded activation; outputs lie in (-1, 1)."""
    return np.tanh(x)


def tanh_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient through tanh expressed from its output: dy/dx = 1 - y^2."""
    return grad_out * (1.0 - y * y)


@dataclass
class AdamState:
    """Adam moment estimates for one ordered parameter list."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step: int = 0
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(
        cls,
        params: list[np.ndarray],
        lr: float = 1e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            step=0,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place.

    The step counter increases by exactly 1 per call.  The denominator is
    ``sqrt(v_hat) + epsilon``, so the first step with unit gradient moves a
    parameter by -lr/(1 + epsilon).
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ConfigurationError("params, grads, and state must have matching lengths")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ConfigurationError(
                f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}"
            )
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state
