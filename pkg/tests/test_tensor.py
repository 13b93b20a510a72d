import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import erf

from hsifuse.tensor import (
    Conv3dKernel,
    DimensionError,
    TapeError,
    Tensor,
    add,
    backward,
    concat,
    conv3d,
    gelu,
    grad_check,
    layer_norm,
    make_op,
    matmul,
    mul,
    no_grad,
    permute,
    precision,
    reshape,
    sigmoid,
    softmax,
    tsum,
)
from hsifuse.tensor.conv import batch_norm, max_pool_axis


def loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def loop_conv(x, w, bias):
    """Direct-sum 'same' correlation (7 nested loops)."""
    n, ci, D, H, W = x.shape
    co, _, kd, kh, kw = w.shape
    pd, ph, pw = kd // 2, kh // 2, kw // 2
    out = np.zeros((n, co, D, H, W))
    for b in range(n):
        for o in range(co):
            for z in range(D):
                for y in range(H):
                    for xx in range(W):
                        acc = bias[o]
                        for c in range(ci):
                            for dz in range(kd):
                                for dy in range(kh):
                                    for dx in range(kw):
                                        zz, yy, x3 = z + dz - pd, y + dy - ph, xx + dx - pw
                                        if 0 <= zz < D and 0 <= yy < H and 0 <= x3 < W:
                                            acc += w[o, c, dz, dy, dx] * x[b, c, zz, yy, x3]
                        out[b, o, z, y, xx] = acc
    return out


class TestTensorBasics:
    def test_default_is_float32(self):
        assert Tensor([1.0, 2.0]).dtype == np.float32

    def test_precision_context(self):
        with precision(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32

    def test_nonfinite_forward_is_an_error(self):
        big = Tensor([3e38], dtype=np.float32)
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
            mul(big, big)

    def test_structural_op_on_nan_leaf_is_caught(self):
        x = Tensor(np.array([np.nan, 1.0]))
        with pytest.raises(FloatingPointError):
            reshape(x, (2, 1))

    def test_grad_shape_matches(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        backward(tsum(mul(x, x)))
        assert x.grad.shape == x.shape


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        assert np.array_equal(matmul(eye, eye).data, np.eye(2))

    def test_hand_case(self):
        out = matmul(Tensor([[1, 2], [3, 4]]), Tensor([[0], [1]]))
        assert np.array_equal(out.data, [[2], [4]])

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        with precision(np.float64):
            out = matmul(Tensor(a), Tensor(b)).data
        assert np.abs(out - loop_matmul(a, b)).max() < 1e-6

    def test_batched_with_2d_weight(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(2, 5, 3)), rng.normal(size=(3, 4))
        with precision(np.float64):
            out = matmul(Tensor(a), Tensor(b)).data
        assert np.allclose(out, a @ b)

    def test_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_batch_extents_must_broadcast(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((3, 4, 2))))


class TestConv3d:
    def test_counting_overlap(self):
        x = Tensor(np.ones((1, 1, 3, 3, 3)))
        k = Conv3dKernel(Tensor(np.ones((1, 1, 3, 3, 3))), Tensor(np.zeros(1)))
        y = conv3d(x, k).data[0, 0]
        assert y[1, 1, 1] == 27
        assert y[0, 0, 0] == 8

    def test_zero_input_gives_relu_bias(self):
        k = Conv3dKernel(Tensor(np.ones((2, 1, 3, 3, 3))), Tensor([0.7, -0.3]))
        y = conv3d(Tensor(np.zeros((1, 1, 4, 4, 4))), k).data
        assert np.allclose(y[:, 0], 0.7) and np.all(y[:, 1] == 0)

    def test_direct_sum_oracle(self):
        rng = np.random.default_rng(2)
        x, w, b = rng.normal(size=(2, 2, 4, 3, 5)), rng.normal(size=(3, 2, 3, 1, 3)), rng.normal(size=3)
        with precision(np.float64):
            y = conv3d(Tensor(x), Conv3dKernel(Tensor(w), Tensor(b)), activation=None).data
        assert np.abs(y - loop_conv(x, w, b)).max() < 1e-5

    def test_same_padding_preserves_extents(self):
        x = Tensor(np.random.default_rng(3).normal(size=(1, 1, 5, 6, 7)))
        k = Conv3dKernel(Tensor(np.ones((4, 1, 3, 5, 3))), Tensor(np.zeros(4)))
        assert conv3d(x, k).shape == (1, 4, 5, 6, 7)

    def test_even_kernel_rejected(self):
        with pytest.raises(DimensionError):
            Conv3dKernel(Tensor(np.ones((1, 1, 2, 3, 3))), Tensor(np.zeros(1)))

    def test_channel_mismatch(self):
        k = Conv3dKernel(Tensor(np.ones((1, 2, 3, 3, 3))), Tensor(np.zeros(1)))
        with pytest.raises(DimensionError):
            conv3d(Tensor(np.ones((1, 1, 3, 3, 3))), k)


class TestSoftmax:
    def test_symmetric(self):
        assert np.allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_stable(self):
        with precision(np.float64):
            out = softmax(Tensor([1000.0, 0.0])).data
        assert out[0] == 1.0 and 0 <= out[1] < 1e-300

    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
    @settings(max_examples=50, deadline=None)
    def test_sums_and_shift(self, x, c):
        with precision(np.float64):
            a = softmax(Tensor(x), axis=-1).data
            b = softmax(Tensor(x + c), axis=-1).data
        assert np.all(a > 0)
        assert np.abs(a.sum(axis=-1) - 1).max() < 1e-6
        assert np.abs(a - b).max() < 1e-9

    def test_bad_axis(self):
        with pytest.raises(DimensionError):
            softmax(Tensor(np.ones((2, 2))), axis=3)


class TestLayerNorm:
    def test_constant_row(self):
        y = layer_norm(Tensor(np.full((2, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        assert np.all(y.data == 0)

    def test_zero_gamma(self):
        x = Tensor(np.random.default_rng(0).normal(size=(3, 5)))
        y = layer_norm(x, Tensor(np.zeros(5)), Tensor(np.full(5, 2.5)))
        assert np.allclose(y.data, 2.5)

    def test_moments(self):
        x = np.random.default_rng(1).normal(3.0, 2.0, size=(4, 64))
        with precision(np.float64):
            y = layer_norm(Tensor(x), Tensor(np.ones(64)), Tensor(np.zeros(64)), eps=1e-12).data
        assert np.abs(y.mean(axis=-1)).max() < 1e-6
        assert np.abs(y.var(axis=-1) - 1).max() < 1e-4

    def test_affine_shape_checked(self):
        with pytest.raises(DimensionError):
            layer_norm(Tensor(np.ones((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


class TestElementwise:
    def test_sigmoid_zero(self):
        assert sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_mul_ones(self):
        a = np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32)
        assert np.array_equal(mul(Tensor(a), Tensor(np.ones((3, 4)))).data, a)

    def test_gelu_against_erf(self):
        x = np.linspace(-6, 6, 241)
        ref = 0.5 * x * (1 + erf(x / math.sqrt(2)))
        assert np.abs(gelu(Tensor(x)).data - ref).max() < 1e-5
        with precision(np.float64):
            assert np.abs(gelu(Tensor(x)).data - ref).max() < 1e-12

    def test_gelu_series_points(self):
        # erf(1/sqrt 2) and erf(sqrt 2) from the Maclaurin series to 60 terms
        def erf_series(z):
            return 2 / math.sqrt(math.pi) * sum(
                (-1) ** n * z ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1)) for n in range(60))
        for v in (1.0, 2.0, -1.5):
            want = 0.5 * v * (1 + erf_series(v / math.sqrt(2)))
            assert abs(float(gelu(Tensor([v])).data[0]) - want) < 1e-5

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))

    def test_leading_axis_broadcast_only(self):
        assert add(Tensor(np.ones((2, 3))), Tensor(np.ones(3))).shape == (2, 3)
        with pytest.raises(DimensionError):
            add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))


class TestRearrangements:
    def test_reshape_roundtrip(self):
        a = Tensor(np.arange(6.0).reshape(2, 3))
        assert np.array_equal(reshape(reshape(a, (3, 2)), (2, 3)).data, a.data)

    def test_reshape_count_mismatch(self):
        with pytest.raises(DimensionError):
            reshape(Tensor(np.ones(6)), (4, 2))

    def test_concat_doubles(self):
        a = Tensor(np.ones((2, 3)))
        assert concat([a, a], axis=-1).shape == (2, 6)

    def test_concat_off_axis_mismatch(self):
        with pytest.raises(DimensionError):
            concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=-1)

    @given(st.permutations(range(4)), st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_permute_inverse(self, axes, seed):
        x = np.random.default_rng(seed).normal(size=(2, 3, 4, 5)).astype(np.float32)
        inv = np.argsort(axes)
        assert np.array_equal(permute(permute(Tensor(x), axes), inv).data, x)

    def test_backward_is_inverse_rearrangement(self):
        x = Tensor(np.arange(24.0).reshape(2, 3, 4), requires_grad=True)
        w = np.random.default_rng(0).normal(size=(4, 2, 3)).astype(np.float32)
        backward(tsum(mul(permute(x, (2, 0, 1)), Tensor(w))))
        assert np.array_equal(x.grad, w.transpose(1, 2, 0))


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(0).normal(size=(3, 2)), requires_grad=True)
        backward(tsum(x))
        assert np.array_equal(x.grad, np.ones((3, 2)))

    def test_square(self):
        v = np.random.default_rng(1).normal(size=5)
        x = Tensor(v, requires_grad=True)
        backward(tsum(mul(x, x)))
        assert np.allclose(x.grad, 2 * x.data)

    def test_accumulates_across_uses(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(tsum(add(mul(x, x), x)))
        assert np.allclose(x.grad, 2 * x.data + 1)

    def test_non_scalar_loss(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            backward(mul(x, x))

    def test_consumed_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = tsum(mul(x, x))
        backward(loss)
        with pytest.raises(TapeError):
            backward(loss)

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = mul(x, x)
        assert not y.requires_grad and y.is_leaf

    def test_composite_matches_fd(self):
        rng = np.random.default_rng(5)
        w = rng.normal(size=(4, 3))

        def f(x):
            h = gelu(matmul(x, Tensor(w, dtype=np.float64)))
            return tsum(mul(softmax(h, axis=-1), sigmoid(h)))

        rep = grad_check(f, rng.normal(size=(2, 4)))
        assert rep.ok and rep.max_rel_error < 1e-4


class TestGradCheck:
    def test_sum_sigmoid(self):
        rep = grad_check(lambda x: tsum(sigmoid(x)), np.random.default_rng(0).normal(size=(4, 3)))
        assert rep.max_rel_error < 1e-4 and rep.ok

    def test_linear_exact(self):
        w = np.random.default_rng(1).normal(size=(3, 2))
        rep = grad_check(lambda x: tsum(matmul(x, Tensor(w, dtype=np.float64))),
                         np.random.default_rng(2).normal(size=(2, 3)))
        assert rep.max_rel_error < 1e-9

    def test_wrong_rule_flagged(self):
        def bad_square(x):
            return make_op("bad_square", x.data ** 2, (x,), lambda g: (g * x.data,))  # missing factor 2

        rep = grad_check(lambda x: tsum(bad_square(x)), np.random.default_rng(3).normal(size=5) + 2)
        assert not rep.ok and len(rep.flagged) == 5

    def test_nan_reported(self):
        rep = grad_check(lambda x: tsum(x), np.array([1.0, np.nan]))
        assert rep.failure is not None and not rep.ok


class TestStemOps:
    def test_max_pool_drops_remainder(self):
        x = Tensor(np.arange(5.0).reshape(1, 5))
        assert np.array_equal(max_pool_axis(x, axis=1).data, [[1.0, 3.0]])

    def test_batch_norm_train_and_eval(self):
        rng = np.random.default_rng(0)
        x = rng.normal(2.0, 3.0, size=(8, 3, 2, 2))
        rm, rv = np.zeros(3), np.ones(3)
        with precision(np.float64):
            y = batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, True).data
        assert np.abs(y.mean(axis=(0, 2, 3))).max() < 1e-6
        batch_mean = x.mean(axis=(0, 2, 3))
        assert np.allclose(rm, 0.1 * batch_mean)
        assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))
        frozen = rm.copy(), rv.copy()
        with precision(np.float64):
            batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, False)
        assert np.array_equal(rm, frozen[0]) and np.array_equal(rv, frozen[1])
