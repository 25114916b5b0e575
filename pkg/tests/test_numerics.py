import math

import numpy as np
import pytest

from core_numerics.errors import DataError, ShapeError
from core_numerics.tensor import (
    Tensor,
    add,
    cross_entropy,
    embedding,
    gelu,
    grad_check,
    layer_norm,
    matmul,
    no_grad,
    reshape,
    scale,
    softmax,
    softmax_cross_entropy,
    tensor_sum,
    transpose,
)


def _sum_of_squares(x: Tensor) -> Tensor:
    row = reshape(x, (1, x.size))
    return tensor_sum(matmul(row, transpose(row, (1, 0))))


class TestMatmul:
    def test_two_by_two(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
        np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_identity(self, rng):
        a = rng.standard_normal((3, 3))
        np.testing.assert_array_equal(matmul(Tensor(a), Tensor(np.eye(3))).data, a)

    def test_matches_triple_loop(self, rng):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 5))
        expected = np.zeros((3, 5))
        for i in range(3):
            for j in range(5):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, expected, rtol=0, atol=1e-12)

    def test_inner_mismatch_reports_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_batched_with_shared_matrix(self, rng):
        a = rng.standard_normal((2, 3, 4))
        b = rng.standard_normal((4, 2))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, a @ b)


class TestSoftmax:
    def test_equal_scores(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_ln2_scores(self):
        np.testing.assert_allclose(softmax(Tensor([math.log(2.0), 0.0])).data, [2 / 3, 1 / 3])

    def test_large_inputs_stay_finite(self):
        out = softmax(Tensor([1000.0, 1000.0, -1000.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.5, 0.5, 0.0], atol=1e-12)

    def test_shift_invariance(self, rng):
        v = rng.standard_normal((4, 6))
        np.testing.assert_allclose(softmax(Tensor(v)).data, softmax(Tensor(v + 17.5)).data, atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        out = softmax(Tensor(rng.standard_normal((5, 9)) * 10)).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


class TestLayerNorm:
    def test_standardizes(self):
        out = layer_norm(Tensor([1.0, 2.0, 3.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0)
        np.testing.assert_allclose(out.data, [-math.sqrt(1.5), 0.0, math.sqrt(1.5)], atol=1e-12)

    def test_constant_row_with_eps(self):
        out = layer_norm(Tensor(np.full((2, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.full(4, 0.5)))
        np.testing.assert_allclose(out.data, 0.5)

    def test_gamma_shape_checked(self):
        with pytest.raises(ShapeError):
            layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(4)))


class TestCrossEntropy:
    def test_uniform_over_200_classes(self):
        dist = Tensor(np.full((3, 200), 1.0 / 200))
        assert cross_entropy(dist, np.array([0, 57, 199])).item() == pytest.approx(math.log(200), abs=1e-12)

    def test_uniform_over_4_classes(self):
        dist = Tensor(np.full((2, 4), 0.25))
        assert cross_entropy(dist, np.array([1, 3])).item() == pytest.approx(math.log(4), abs=1e-12)

    def test_one_hot_is_zero(self):
        dist = Tensor(np.eye(3))
        assert cross_entropy(dist, np.array([0, 1, 2])).item() == 0.0

    def test_zero_probability_is_floored(self):
        dist = Tensor(np.array([[1.0, 0.0]]))
        assert cross_entropy(dist, np.array([1])).item() == pytest.approx(-math.log(1e-12))

    def test_rejects_non_stochastic_rows(self):
        with pytest.raises(DataError):
            cross_entropy(Tensor([[0.5, 0.6]]), np.array([0]))

    def test_label_range(self):
        with pytest.raises(DataError):
            cross_entropy(Tensor(np.full((1, 4), 0.25)), np.array([4]))

    def test_fused_matches_unfused(self, rng):
        logits = rng.standard_normal((5, 7))
        labels = rng.integers(0, 7, 5)
        weights = rng.uniform(0, 1, 5)
        fused = softmax_cross_entropy(Tensor(logits), labels, weights).item()
        unfused = cross_entropy(softmax(Tensor(logits)), labels, weights).item()
        assert fused == pytest.approx(unfused, abs=1e-12)


class TestEmbedding:
    def test_gathers_rows(self):
        table = Tensor(np.arange(12.0).reshape(4, 3))
        np.testing.assert_array_equal(embedding(table, np.array([2, 0])).data, [[6, 7, 8], [0, 1, 2]])

    def test_out_of_range(self):
        with pytest.raises(DataError):
            embedding(Tensor(np.zeros((4, 3))), np.array([4]))

    def test_repeated_index_accumulates(self):
        table = Tensor(np.zeros((3, 2)), requires_grad=True)
        tensor_sum(embedding(table, np.array([1, 1, 2]))).backward()
        np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [1, 1]])


class TestBackward:
    def test_add_bias_suffix(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.zeros(3), requires_grad=True)
        tensor_sum(add(x, b)).backward()
        np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])

    def test_shared_node_gradients_accumulate(self):
        x = Tensor([3.0], requires_grad=True)
        y = add(x, x)
        tensor_sum(scale(y, 2.0)).backward()
        np.testing.assert_array_equal(x.grad, [4.0])

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = gelu(x)
        assert out._parents == ()
        assert not out.requires_grad


class TestGradCheck:
    def test_sum_of_squares(self, rng):
        x = Tensor(rng.standard_normal(6))
        report = grad_check(_sum_of_squares, x)
        assert report.passed(1e-6)

    def test_softmax_cross_entropy(self, rng):
        labels = rng.integers(0, 5, 4)
        x = Tensor(rng.standard_normal((4, 5)))
        report = grad_check(lambda t: softmax_cross_entropy(t, labels), x)
        assert report.passed(1e-6)

    def test_doubled_gradient_is_flagged(self, rng):
        x = Tensor(rng.uniform(0.5, 1.5, 5))
        report = grad_check(_sum_of_squares, x, analytic=2.0 * 2.0 * x.data)
        assert report.max_rel_err == pytest.approx(0.5, abs=1e-6)
        assert not report.passed(1e-4)

    def test_non_finite_value_is_reported(self):
        x = Tensor(np.ones(3))
        report = grad_check(lambda t: tensor_sum(scale(t, float("inf"))), x)
        assert not report.ok
        assert "non-finite" in report.failure

    def test_requires_scalar(self):
        with pytest.raises(ShapeError):
            grad_check(lambda t: scale(t, 2.0), Tensor(np.ones(3)))

    @pytest.mark.parametrize("seed", range(20))
    def test_composite_ops(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 6, (2, 3))
        gamma = Tensor(rng.uniform(0.5, 1.5, 6))
        beta = Tensor(rng.standard_normal(6))
        w = Tensor(rng.standard_normal((6, 6)) * 0.5)

        def f(t: Tensor) -> Tensor:
            h = gelu(layer_norm(t, gamma, beta))
            scores = matmul(h, transpose(h, (0, 2, 1)))
            h = add(matmul(softmax(scale(scores, 0.5)), h), t)
            return softmax_cross_entropy(matmul(h, w), labels)

        x = Tensor(rng.standard_normal((2, 3, 6)))
        report = grad_check(f, x, floor=1e-5)
        assert report.passed(1e-4), report
