"""Tests for the autodiff tensor module."""

import io

import numpy as np
import pytest

from pixcorr import tensor as T
from pixcorr.errors import DimensionError, FormatError
from pixcorr.tensor import Tensor, gradient_error

TOL = 1e-4


def leaf(rng: np.random.Generator, *shape: int, low: float = -1.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


class TestElementwiseGradients:
    def test_add_sub_mul_div(self, rng: np.random.Generator) -> None:
        a = leaf(rng, 3, 4)
        b = leaf(rng, 3, 4, low=0.5, high=2.0)

        def loss() -> Tensor:
            return T.tsum(T.div(T.mul(T.add(a, b), T.sub(a, b)), b))

        assert gradient_error(loss, [a, b]) < TOL

    def test_broadcasting_row_vector(self, rng: np.random.Generator) -> None:
        a = leaf(rng, 4, 3)
        b = leaf(rng, 3)
        assert gradient_error(lambda: T.tsum(T.mul(T.add(a, b), a)), [a, b]) < TOL

    def test_relu_away_from_kink(self, rng: np.random.Generator) -> None:
        data = rng.uniform(0.1, 1.0, size=(5,)) * rng.choice([-1.0, 1.0], size=5)
        a = Tensor(data, requires_grad=True)
        assert gradient_error(lambda: T.tsum(T.mul(T.relu(a), a)), [a]) < TOL

    def test_relu_propagates_nan(self) -> None:
        out = T.relu(Tensor(np.array([-1.0, np.nan, 2.0]))).data
        assert out[0] == 0.0 and out[2] == 2.0
        assert np.isnan(out[1])

    def test_log(self, rng: np.random.Generator) -> None:
        a = leaf(rng, 6, low=0.2, high=3.0)
        assert gradient_error(lambda: T.tsum(T.log(a)), [a]) < TOL

    def test_log_floor_blocks_gradient(self) -> None:
        a = Tensor(np.array([0.0, 1.0]), requires_grad=True)
        out = T.tsum(T.log(a))
        assert out.item() == pytest.approx(np.log(1e-12))
        out.backward()
        assert a.grad is not None
        assert a.grad[0] == 0.0
        assert a.grad[1] == pytest.approx(1.0)

    def test_abs_mean(self, rng: np.random.Generator) -> None:
        a = leaf(rng, 4, 3)
        a.data[np.abs(a.data) < 0.05] = 0.3
        assert gradient_error(lambda: T.abs_mean(a), [a]) < TOL

    def test_mul_scalar(self, rng: np.random.Generator) -> None:
        a = leaf(rng, 2, 2)
        assert gradient_error(lambda: T.tsum(T.mul(T.mul_scalar(a, -2.5), a)), [a]) < TOL


class TestReductionsAndShapes:
    def test_sum_and_mean_axes(self, rng: np.random.Generator) -> None:
        a = leaf(rng, 2, 3, 4)
        weights = rng.normal(size=(2, 4))

        def loss() -> Tensor:
            return T.tsum(T.mul(T.mean(a, axis=1), weights)) + T.tsum(T.tsum(a, axis=(0, 2)))

        assert gradient_error(loss, [a]) < TOL

    def test_reshape_transpose(self, rng: np.random.Generator) -> None:
        a = leaf(rng, 2, 3, 4)
        weights = rng.normal(size=(4, 6))

        def loss() -> Tensor:
            moved = T.transpose(a, (2, 0, 1))
            return T.tsum(T.mul(T.reshape(moved, (4, 6)), weights))

        assert gradient_error(loss, [a]) < TOL

    def test_transpose_values(self) -> None:
        a = Tensor(np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal(a.T.data, np.arange(6.0).reshape(2, 3).T)


class TestRowOps:
    def test_softmax_rows_sum_to_one(self, rng: np.random.Generator) -> None:
        p = T.softmax(Tensor(rng.normal(scale=30.0, size=(5, 4))))
        np.testing.assert_allclose(p.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_softmax_gradient(self, rng: np.random.Generator) -> None:
        a = leaf(rng, 3, 4)
        weights = rng.normal(size=(3, 4))
        assert gradient_error(lambda: T.tsum(T.mul(T.softmax(a), weights)), [a]) < TOL

    def test_log_softmax_matches_log_of_softmax(self, rng: np.random.Generator) -> None:
        x = Tensor(rng.normal(size=(4, 5)))
        np.testing.assert_allclose(
            T.log_softmax(x).data, np.log(T.softmax(x).data), atol=1e-12
        )

    def test_log_softmax_gradient(self, rng: np.random.Generator) -> None:
        a = leaf(rng, 3, 4)
        weights = rng.normal(size=(3, 4))
        assert gradient_error(lambda: T.tsum(T.mul(T.log_softmax(a), weights)), [a]) < TOL

    def test_row_l2_norm(self, rng: np.random.Generator) -> None:
        a = leaf(rng, 4, 3)
        norms = T.row_l2_norm(a)
        assert norms.shape == (4, 1)
        np.testing.assert_allclose(norms.data[:, 0], np.linalg.norm(a.data, axis=1))
        assert gradient_error(lambda: T.tsum(T.row_l2_norm(a)), [a]) < TOL

    def test_row_l1_normalize(self, rng: np.random.Generator) -> None:
        a = leaf(rng, 4, 3, low=0.1, high=1.0)
        out = T.row_l1_normalize(a)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-9)
        weights = rng.normal(size=(4, 3))
        assert gradient_error(lambda: T.tsum(T.mul(T.row_l1_normalize(a), weights)), [a]) < TOL

    def test_row_l1_normalize_keeps_zero_rows(self) -> None:
        out = T.row_l1_normalize(Tensor(np.array([[0.0, 0.0], [1.0, 3.0]])))
        np.testing.assert_array_equal(out.data[0], [0.0, 0.0])

    def test_row_ops_reject_3d(self) -> None:
        with pytest.raises(DimensionError):
            T.row_l2_norm(Tensor(np.zeros((2, 2, 2))))


class TestMatMul:
    def test_gradient(self, rng: np.random.Generator) -> None:
        a = leaf(rng, 3, 4)
        b = leaf(rng, 4, 2)
        assert gradient_error(lambda: T.tsum(T.mul(T.matmul(a, b), T.matmul(a, b))), [a, b]) < TOL

    def test_shape_mismatch(self) -> None:
        with pytest.raises(DimensionError, match="matmul shape mismatch"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_operator(self) -> None:
        a = Tensor(np.eye(2))
        b = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal((a @ b).data, b.data)


class TestConv2d:
    def test_matches_direct_loop(self, rng: np.random.Generator) -> None:
        x = rng.normal(size=(2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        assert out.shape == (3, 3, 3)
        for o in range(3):
            for i in range(3):
                for j in range(3):
                    patch = padded[:, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
                    assert out[o, i, j] == pytest.approx((patch * w[o]).sum() + b[o])

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_gradient(self, rng: np.random.Generator, stride: int, padding: int) -> None:
        x = leaf(rng, 2, 6, 6)
        w = leaf(rng, 3, 2, 3, 3)
        b = leaf(rng, 3)
        weights = None

        def loss() -> Tensor:
            nonlocal weights
            out = T.conv2d(x, w, b, stride=stride, padding=padding)
            if weights is None:
                weights = np.random.default_rng(0).normal(size=out.shape)
            return T.tsum(T.mul(out, weights))

        assert gradient_error(loss, [x, w, b]) < TOL

    def test_channel_mismatch(self) -> None:
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_kernel_larger_than_input(self) -> None:
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


class TestBilinearUpsample:
    def test_align_corners_values(self) -> None:
        x = Tensor(np.array([[[0.0, 1.0]]]))
        out = T.bilinear_upsample(x, (1, 3))
        np.testing.assert_allclose(out.data[0, 0], [0.0, 0.5, 1.0])

    def test_corners_preserved(self, rng: np.random.Generator) -> None:
        x = rng.normal(size=(2, 3, 4))
        out = T.bilinear_upsample(Tensor(x), (7, 10)).data
        np.testing.assert_allclose(out[:, 0, 0], x[:, 0, 0])
        np.testing.assert_allclose(out[:, -1, -1], x[:, -1, -1])

    def test_gradient(self, rng: np.random.Generator) -> None:
        x = leaf(rng, 2, 3, 3)
        weights = rng.normal(size=(2, 8, 6))

        def loss() -> Tensor:
            return T.tsum(T.mul(T.bilinear_upsample(x, (8, 6)), weights))

        assert gradient_error(loss, [x]) < TOL

    def test_rejects_downsampling(self) -> None:
        with pytest.raises(DimensionError):
            T.bilinear_upsample(Tensor(np.zeros((1, 4, 4))), (2, 8))


class TestGraph:
    def test_leaf_gradients_accumulate(self) -> None:
        a = Tensor(np.array([2.0]), requires_grad=True)
        T.mul(a, a).backward()
        T.mul(a, a).backward()
        assert a.grad is not None
        assert a.grad[0] == pytest.approx(8.0)

    def test_shared_subexpression(self) -> None:
        a = Tensor(np.array(3.0), requires_grad=True)
        b = T.mul(a, a)
        T.add(b, b).backward()
        assert a.grad == pytest.approx(12.0)

    def test_detach_cuts_graph(self) -> None:
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        out = T.tsum(T.mul(a, T.detach(a)))
        out.backward()
        np.testing.assert_array_equal(a.grad, [1.0, 2.0])

    def test_no_grad_records_nothing(self) -> None:
        a = Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            out = T.tsum(T.mul(a, a))
        assert not out.requires_grad
        assert out.creator is None
        assert T.tsum(a).requires_grad

    def test_backward_needs_scalar(self) -> None:
        a = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(DimensionError):
            T.mul(a, a).backward()

    def test_item_needs_single_element(self) -> None:
        with pytest.raises(DimensionError):
            Tensor(np.ones(2)).item()

    def test_graph_freed_without_retain(self) -> None:
        a = Tensor(np.array(1.5), requires_grad=True)
        out = T.mul(a, a)
        out.backward(retain_graph=True)
        assert out.creator is not None
        out.backward()
        assert out.creator is None
        assert a.grad == pytest.approx(6.0)


class TestSerialization:
    def test_round_trip(self, rng: np.random.Generator) -> None:
        stream = io.BytesIO()
        arrays = [rng.normal(size=(2, 3)), np.array(4.0), rng.normal(size=(2, 1, 3))]
        for array in arrays:
            T.write_tensor(stream, array)
        stream.seek(0)
        for array in arrays:
            np.testing.assert_array_equal(T.read_tensor(stream), array)

    def test_layout(self) -> None:
        stream = io.BytesIO()
        T.write_tensor(stream, np.array([1.0]))
        raw = stream.getvalue()
        assert raw[:4] == b"PCT1"
        assert raw[4:8] == (1).to_bytes(4, "little")
        assert raw[8:16] == (1).to_bytes(8, "little")
        assert len(raw) == 24

    def test_truncated(self) -> None:
        stream = io.BytesIO()
        T.write_tensor(stream, np.ones((3, 3)))
        with pytest.raises(FormatError):
            T.read_tensor(io.BytesIO(stream.getvalue()[:-5]))

    def test_bad_magic(self) -> None:
        with pytest.raises(FormatError):
            T.read_tensor(io.BytesIO(b"NOPE" + bytes(20)))
