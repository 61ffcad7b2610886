"""Kernel-level tests for the tensor module."""

import numpy as np
import pytest

from raproscope import tensor as T
from raproscope.errors import NumericError, ShapeError

F32 = np.float32


class TestMatmul:
    def test_ones_weights_sum_inputs(self):
        out = T.matmul(T.tensor([[1.0, 3.0]]), T.tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out, [[4.0]])

    def test_identity(self):
        eye = np.eye(2, dtype=F32)
        b = T.tensor([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(T.matmul(eye, b), b)

    def test_hand_computed_dot(self):
        # 2*3 - 1*4 = 2
        out = T.matmul(T.tensor([[2.0, -1.0]]), T.tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out, [[2.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(1, 2\).*\(3, 1\)"):
            T.matmul(np.ones((1, 2), dtype=F32), np.ones((3, 1), dtype=F32))

    def test_distributes_over_addition(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.normal(0, 1, (4, 5)).astype(F32)
            b = rng.normal(0, 1, (5, 3)).astype(F32)
            c = rng.normal(0, 1, (5, 3)).astype(F32)
            lhs = T.matmul(a, b + c)
            rhs = T.matmul(a, b) + T.matmul(a, c)
            np.testing.assert_allclose(lhs, rhs, atol=1e-5)

    def test_rejects_nan(self):
        bad = np.array([[np.nan]], dtype=F32)
        with pytest.raises(NumericError):
            T.matmul(bad, np.ones((1, 1), dtype=F32))


class TestConv2d:
    def test_identity_kernel(self):
        x = np.ones((1, 3, 3), dtype=F32)
        w = np.ones((1, 1, 1, 1), dtype=F32)
        out = T.conv2d(x, w, np.zeros(1, dtype=F32), stride=1, pad=0)
        np.testing.assert_array_equal(out, x)

    def test_full_window_sums_pixels(self):
        x = T.tensor([[[1.0, 2.0], [3.0, 4.0]]])
        w = np.ones((1, 1, 2, 2), dtype=F32)
        out = T.conv2d(x, w, np.zeros(1, dtype=F32), stride=1, pad=0)
        np.testing.assert_array_equal(out, [[[10.0]]])

    def test_matches_sliding_window_oracle(self):
        x = np.arange(9, dtype=F32).reshape(1, 3, 3)
        w = np.ones((1, 1, 3, 3), dtype=F32)
        out = T.conv2d(x, w, np.zeros(1, dtype=F32), stride=1, pad=1)

        padded = np.pad(x[0], 1)
        expect = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                expect[i, j] = padded[i : i + 3, j : j + 3].sum()
        np.testing.assert_allclose(out[0], expect, atol=1e-5)
        assert out.shape == (1, 3, 3)

    def test_identity_kernel_property(self):
        rng = np.random.default_rng(11)
        w = np.ones((1, 1, 1, 1), dtype=F32)
        for _ in range(20):
            c = int(rng.integers(1, 4))
            x = rng.normal(0, 1, (c, 5, 4)).astype(F32)
            eye = np.zeros((c, c, 1, 1), dtype=F32)
            for k in range(c):
                eye[k, k, 0, 0] = 1.0
            np.testing.assert_array_equal(T.conv2d(x, eye), x)

    def test_non_integral_output_size(self):
        x = np.ones((1, 5, 5), dtype=F32)
        w = np.ones((1, 1, 2, 2), dtype=F32)
        with pytest.raises(ShapeError):
            T.conv2d(x, w, stride=2, pad=0)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            T.conv2d(np.ones((2, 4, 4), dtype=F32), np.ones((1, 3, 2, 2), dtype=F32))

    def test_input_grad_is_adjoint(self):
        # <conv(x), s> == <x, conv_T(s)> for random tensors
        rng = np.random.default_rng(3)
        x = rng.normal(0, 1, (2, 7, 7)).astype(F32)
        w = rng.normal(0, 1, (3, 2, 3, 3)).astype(F32)
        s = rng.normal(0, 1, (3, 4, 4)).astype(F32)
        y = T.conv2d(x, w, stride=2, pad=1)
        lhs = float((y * s).sum(dtype=np.float64))
        rhs = float((x * T.conv2d_input_grad(s, w, x.shape, stride=2, pad=1)).sum(dtype=np.float64))
        assert abs(lhs - rhs) < 1e-4


class TestPooling:
    def test_maxpool_example(self):
        out, idx = T.maxpool2d(T.tensor([[[1.0, 2.0], [3.0, 4.0]]]), k=2, stride=2)
        np.testing.assert_array_equal(out, [[[4.0]]])
        assert idx[0, 0, 0] == 1 * 2 + 1  # row 1, col 1

    def test_maxpool_tie_lowest_index(self):
        out, idx = T.maxpool2d(np.ones((1, 2, 2), dtype=F32), k=2, stride=2)
        assert idx[0, 0, 0] == 0

    def test_maxpool_regather_property(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            x = rng.normal(0, 1, (3, 6, 8)).astype(F32)
            out, idx = T.maxpool2d(x, k=2, stride=2)
            np.testing.assert_array_equal(T.maxpool_regather(x, idx), out)

    def test_maxpool_scatter_routes_everything(self):
        x = T.tensor([[[1.0, 2.0], [3.0, 4.0]]])
        _, idx = T.maxpool2d(x, k=2, stride=2)
        routed = T.maxpool_scatter(np.ones((1, 1, 1), dtype=F32), idx, x.shape)
        np.testing.assert_array_equal(routed, [[[0.0, 0.0], [0.0, 1.0]]])

    def test_avgpool_example(self):
        out = T.avgpool2d(T.tensor([[[1.0, 2.0], [3.0, 4.0]]]), k=2, stride=2)
        np.testing.assert_array_equal(out, [[[2.5]]])

    def test_avgpool_spread_is_adjoint(self):
        rng = np.random.default_rng(9)
        x = rng.normal(0, 1, (2, 6, 6)).astype(F32)
        s = rng.normal(0, 1, (2, 3, 3)).astype(F32)
        pooled = T.avgpool2d(x, k=2, stride=2)
        lhs = float((pooled * s).sum(dtype=np.float64))
        rhs = float(
            (x * T.avgpool2d_spread(s, x.shape, k=2, stride=2) / 4.0).sum(dtype=np.float64)
        )
        assert abs(lhs - rhs) < 1e-4

    def test_global_avgpool(self):
        x = T.tensor([[[1.0, 2.0], [3.0, 4.0]], [[2.0, 2.0], [2.0, 2.0]]])
        np.testing.assert_array_equal(T.global_avgpool2d(x), [2.5, 2.0])


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(T.relu(T.tensor([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_add(self):
        np.testing.assert_array_equal(
            T.add(T.tensor([1.0, 2.0]), T.tensor([3.0, 4.0])), [4.0, 6.0]
        )

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.add(np.ones(2, dtype=F32), np.ones(3, dtype=F32))

    def test_flatten_row_major(self):
        x = np.arange(8, dtype=F32).reshape(2, 2, 2)
        np.testing.assert_array_equal(T.flatten(x), np.arange(8, dtype=F32))

    def test_tensor_rejects_nan(self):
        with pytest.raises(NumericError):
            T.tensor([np.inf, 1.0])
