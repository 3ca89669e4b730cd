"""Oracle tests for the hand-rolled conv/tconv/Adam kernels.

Hand-expanded examples pin the conventions (cross-correlation, zero
padding, scatter-add transpose); adjoint and finite-difference oracles
then certify the analytic gradients against an independent computation.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgrestore.errors import ConfigurationError
from ecgrestore.numerics import (
    AdamState,
    adam_step,
    conv1d,
    conv1d_backward,
    conv_output_length,
    power_expand,
    tanh_act,
    tanh_backward,
    tconv1d,
    tconv1d_backward,
    tconv_output_length,
)


def fm(values) -> np.ndarray:
    """Wrap a 1D list as a (1, 1, L) feature map."""
    return np.asarray(values, dtype=np.float64).reshape(1, 1, -1)


def kb(values) -> np.ndarray:
    """Wrap a 1D list as a (1, 1, K) kernel bank."""
    return np.asarray(values, dtype=np.float64).reshape(1, 1, -1)


class TestConv1d:
    def test_hand_expansion(self):
        # [1,2,3] * [1,0,-1] valid = 1*1 + 2*0 + 3*(-1)
        out = conv1d(fm([1, 2, 3]), kb([1, 0, -1]))
        np.testing.assert_array_equal(out, fm([-2]))

    def test_hand_expansion_stride2(self):
        out = conv1d(fm([1, 1, 1, 1]), kb([1, 1]), stride=2)
        np.testing.assert_array_equal(out, fm([2, 2]))

    def test_cross_correlation_not_flipped(self):
        # an asymmetric kernel distinguishes the two conventions
        out = conv1d(fm([1, 0, 0]), kb([1, 2, 3]))
        np.testing.assert_array_equal(out, fm([1]))

    def test_zero_padding(self):
        out = conv1d(fm([1, 2]), kb([1, 1]), padding=1)
        np.testing.assert_array_equal(out, fm([1, 3, 2]))

    def test_bias_added_per_channel(self):
        out = conv1d(fm([1, 2, 3]), kb([1, 0, -1]), bias=np.array([10.0]))
        np.testing.assert_array_equal(out, fm([8]))

    def test_length_formula_encoder_stage(self):
        assert conv_output_length(4000, 5, 2, 2) == 2000
        x = np.zeros((1, 1, 4000))
        w = np.zeros((1, 1, 5))
        assert conv1d(x, w, stride=2, padding=2).shape == (1, 1, 2000)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ConfigurationError):
            conv1d(np.zeros((1, 2, 8)), np.zeros((1, 3, 3)))

    def test_nonpositive_output_length_raises(self):
        with pytest.raises(ConfigurationError):
            conv1d(fm([1, 2]), kb([1, 1, 1, 1, 1]))

    def test_multichannel_sums_over_input_channels(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        w = np.array([[[1.0], [10.0]]])
        np.testing.assert_array_equal(conv1d(x, w), np.array([[[31.0, 42.0]]]))

    def test_repeat_calls_bit_identical(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 50))
        w = rng.normal(size=(4, 3, 5))
        a = conv1d(x, w, stride=2, padding=2)
        b = conv1d(x, w, stride=2, padding=2)
        assert np.array_equal(a, b)


class TestTconv1d:
    def test_hand_expansion(self):
        out = tconv1d(fm([1]), kb([1, 2]))
        np.testing.assert_array_equal(out, fm([1, 2]))

    def test_stride_scatter(self):
        # stride-2 scatter of a length-1 kernel leaves a gap
        out = tconv1d(fm([1, 1]), kb([1]), stride=2)
        np.testing.assert_array_equal(out, fm([1, 0, 1]))

    def test_overlap_add(self):
        out = tconv1d(fm([1, 1]), kb([1, 1]))
        np.testing.assert_array_equal(out, fm([1, 2, 1]))

    def test_length_formula_decoder_stage(self):
        assert tconv_output_length(2000, 5, 2, 2, 1) == 4000
        x = np.zeros((1, 1, 2000))
        w = np.zeros((1, 1, 5))
        assert tconv1d(x, w, stride=2, padding=2, output_padding=1).shape == (1, 1, 4000)

    def test_output_padding_must_stay_below_stride(self):
        with pytest.raises(ConfigurationError):
            tconv1d(fm([1, 2]), kb([1, 1]), stride=2, output_padding=2)

    def test_padding_trims_both_ends(self):
        full = tconv1d(fm([1, 2, 3]), kb([1, 1, 1]))
        trimmed = tconv1d(fm([1, 2, 3]), kb([1, 1, 1]), padding=1)
        np.testing.assert_array_equal(trimmed, full[:, :, 1:-1])


class TestConv1dBackward:
    def test_grad_w_sums_windows(self):
        # w=[1], grad_out all ones: grad_w accumulates every input sample
        x = fm([2, 2, 2, 2])
        w = kb([1])
        _, grad_w, grad_bias = conv1d_backward(x, w, np.ones_like(x))
        np.testing.assert_array_equal(grad_w, kb([8]))
        np.testing.assert_array_equal(grad_bias, np.array([4.0]))

    def test_adjoint_identity(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 3, 40))
        w = rng.normal(size=(5, 3, 5))
        u = rng.normal(size=(2, 5, conv_output_length(40, 5, 2, 2)))
        y = conv1d(x, w, stride=2, padding=2)
        grad_x, _, _ = conv1d_backward(x, w, u, stride=2, padding=2)
        assert np.isclose(np.sum(y * u), np.sum(x * grad_x), rtol=1e-12)

    def test_central_differences_small_instance(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 3, 3))
        w = rng.normal(size=(3, 3, 3))
        probe = rng.normal(size=(1, 3, 3))
        grad_x, grad_w, grad_bias = conv1d_backward(x, w, probe, 1, 1)

        def loss():
            return float(np.sum(conv1d(x, w, padding=1) * probe))

        h = 1e-6
        for arr, grad in [(x, grad_x), (w, grad_w)]:
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                lp = loss()
                arr[idx] = orig - h
                lm = loss()
                arr[idx] = orig
                numeric = (lp - lm) / (2 * h)
                denom = max(abs(numeric), abs(grad[idx]), 1e-8)
                assert abs(grad[idx] - numeric) / denom <= 1e-6

    def test_grad_shape_mismatch_raises(self):
        with pytest.raises(ConfigurationError):
            conv1d_backward(fm([1, 2, 3]), kb([1, 1]), fm([1, 1, 1]))


class TestTconv1dBackward:
    def test_central_differences_small_instance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, 2, 5))
        w = rng.normal(size=(2, 3, 4))
        n_out = tconv_output_length(5, 4, 2, 1, 1)
        probe = rng.normal(size=(1, 3, n_out))
        grad_x, grad_w, grad_bias = tconv1d_backward(x, w, probe, 2, 1, 1)

        def loss():
            return float(np.sum(tconv1d(x, w, stride=2, padding=1, output_padding=1) * probe))

        h = 1e-6
        for arr, grad in [(x, grad_x), (w, grad_w)]:
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                lp = loss()
                arr[idx] = orig - h
                lm = loss()
                arr[idx] = orig
                numeric = (lp - lm) / (2 * h)
                denom = max(abs(numeric), abs(grad[idx]), 1e-8)
                assert abs(grad[idx] - numeric) / denom <= 1e-6

    def test_grad_bias_sums_positions(self):
        x = fm([1, 1])
        w = kb([1, 1])
        probe = np.ones((1, 1, 3))
        _, _, grad_bias = tconv1d_backward(x, w, probe)
        np.testing.assert_array_equal(grad_bias, np.array([3.0]))


class TestPowerExpand:
    def test_hand_values(self):
        out = power_expand(fm([0.5]), 3)
        np.testing.assert_array_equal(out, np.array([[[0.5], [0.25], [0.125]]]))

    def test_negative_base(self):
        out = power_expand(fm([-1.0]), 2)
        np.testing.assert_array_equal(out, np.array([[[-1.0], [1.0]]]))

    def test_q1_identity_copy(self):
        x = fm([0.3, -0.7])
        out = power_expand(x, 1)
        np.testing.assert_array_equal(out, x)
        assert out is not x

    def test_q_below_one_raises(self):
        with pytest.raises(ConfigurationError):
            power_expand(fm([1.0]), 0)

    def test_plane_layout_plane_major(self):
        # plane q of a C-channel map occupies channels [(q-1)C, qC)
        x = np.array([[[2.0], [3.0]]])
        out = power_expand(x, 2)
        np.testing.assert_array_equal(out[0, :, 0], [2.0, 3.0, 4.0, 9.0])


class TestTanh:
    def test_zero_fixed_point(self):
        y = tanh_act(np.zeros((1, 1, 1)))
        assert y[0, 0, 0] == 0.0
        assert tanh_backward(y, np.ones_like(y))[0, 0, 0] == 1.0

    def test_saturation(self):
        y = tanh_act(fm([20.0, -20.0]))
        np.testing.assert_allclose(y, fm([1.0, -1.0]), atol=1e-12)

    def test_derivative_matches_central_differences(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(-2, 2, size=(1, 1, 50))
        y = tanh_act(x)
        analytic = tanh_backward(y, np.ones_like(x))
        h = 1e-6
        numeric = (np.tanh(x + h) - np.tanh(x - h)) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-8, atol=1e-10)


class TestAdam:
    def test_zero_gradient_no_motion(self):
        p = np.array([1.0, -2.0])
        state = AdamState.for_params([p])
        adam_step([p], [np.zeros_like(p)], state)
        np.testing.assert_array_equal(p, [1.0, -2.0])
        assert state.step == 1

    def test_first_step_closed_form(self):
        # m_hat = v_hat = g on step 1, so the move is -lr*g/(|g| + eps)
        p = np.array([0.0])
        state = AdamState.for_params([p], lr=1e-5)
        adam_step([p], [np.array([1.0])], state)
        expected = -1e-5 / (1.0 + 1e-8)
        np.testing.assert_allclose(p, [expected], rtol=1e-14)

    def test_constant_gradient_monotone_descent(self):
        p = np.array([5.0])
        state = AdamState.for_params([p], lr=1e-3)
        g = np.array([2.5])
        prev = p.copy()
        for _ in range(2):
            adam_step([p], [g], state)
            assert p[0] < prev[0]
            prev = p.copy()

    def test_update_is_in_place(self):
        p = np.array([1.0])
        state = AdamState.for_params([p], lr=0.1)
        out, _ = adam_step([p], [np.array([1.0])], state)
        assert out[0] is p

    def test_shape_mismatch_raises(self):
        p = np.array([1.0, 2.0])
        state = AdamState.for_params([p])
        with pytest.raises(ConfigurationError):
            adam_step([p], [np.array([1.0])], state)

    def test_moment_shapes_congruent(self):
        params = [np.zeros((3, 2)), np.zeros(5)]
        state = AdamState.for_params(params)
        assert [m.shape for m in state.first_moment] == [(3, 2), (5,)]
        assert [v.shape for v in state.second_moment] == [(3, 2), (5,)]


@st.composite
def conv_instances(draw):
    batch = draw(st.integers(1, 2))
    c_in = draw(st.integers(1, 3))
    c_out = draw(st.integers(1, 3))
    kernel = draw(st.integers(1, 5))
    stride = draw(st.integers(1, 3))
    padding = draw(st.integers(0, 3))
    length = draw(st.integers(kernel, 24))
    if conv_output_length(length, kernel, stride, padding) < 1:
        length = kernel + 2 * padding
    rng = np.random.default_rng(draw(st.integers(0, 2**31 - 1)))
    x = rng.normal(size=(batch, c_in, length))
    z = rng.normal(size=(batch, c_in, length))
    w = rng.normal(size=(c_out, c_in, kernel))
    return x, z, w, stride, padding


@settings(max_examples=60, deadline=None)
@given(conv_instances(), st.floats(-3, 3), st.floats(-3, 3))
def test_conv1d_linearity(instance, a, b):
    x, z, w, stride, padding = instance
    lhs = conv1d(a * x + b * z, w, stride=stride, padding=padding)
    rhs = a * conv1d(x, w, stride=stride, padding=padding) + b * conv1d(
        z, w, stride=stride, padding=padding
    )
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * max(1.0, abs(a) + abs(b)))


@settings(max_examples=60, deadline=None)
@given(conv_instances())
def test_conv_tconv_adjoint(instance):
    x, _, w, stride, padding = instance
    t = conv_output_length(x.shape[2], w.shape[2], stride, padding)
    rng = np.random.default_rng(0)
    u = rng.normal(size=(x.shape[0], w.shape[0], t))
    out_pad = x.shape[2] - ((t - 1) * stride - 2 * padding + w.shape[2])
    lhs = np.sum(conv1d(x, w, stride=stride, padding=padding) * u)
    # the adjoint consumes the very same kernel array: conv reads it as
    # (out, in, K), tconv reads it as (in, out, K)
    rhs = np.sum(x * tconv1d(u, w, None, stride, padding, out_pad))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@settings(max_examples=40, deadline=None)
@given(conv_instances(), st.integers(1, 4))
def test_power_expand_plane1_bitwise(instance, q):
    x = instance[0]
    out = power_expand(x, q)
    assert np.array_equal(out[:, : x.shape[1], :], x)


@settings(max_examples=40, deadline=None)
@given(conv_instances())
def test_conv_backward_adjoint_roundtrip(instance):
    x, _, w, stride, padding = instance
    t = conv_output_length(x.shape[2], w.shape[2], stride, padding)
    rng = np.random.default_rng(1)
    u = rng.normal(size=(x.shape[0], w.shape[0], t))
    y = conv1d(x, w, stride=stride, padding=padding)
    grad_x, _, _ = conv1d_backward(x, w, u, stride, padding)
    assert abs(np.sum(y * u) - np.sum(x * grad_x)) <= 1e-10 * max(1.0, abs(np.sum(y * u)))
