import math

import numpy as np
import pytest

from gpcn import autodiff as ad
from gpcn.autodiff import Tensor, backward, gradcheck
from gpcn.errors import NumericError, ShapeError
from gpcn.graph import LabelVector, SparseAdjacency, build_csr, normalized_adjacency

from conftest import random_edges


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestMatmul:
    def test_identity_left(self, rng):
        B = leaf(rng, 2, 3)
        out = ad.matmul(Tensor(np.eye(2)), B)
        np.testing.assert_array_equal(out.data, B.data)
        g = backward(ad.sum_all(out))
        np.testing.assert_array_equal(g[B], np.ones((2, 3)))

    def test_scalar_product_rule(self):
        a, b = Tensor(3.0, requires_grad=True), Tensor(4.0, requires_grad=True)
        out = ad.matmul(a, b)
        assert out.item() == 12.0
        g = backward(out)
        assert g[a][0, 0] == 4.0 and g[b][0, 0] == 3.0

    def test_gradcheck(self, rng):
        a, b = leaf(rng, 4, 3), leaf(rng, 3, 2)
        assert gradcheck(lambda a, b: ad.sum_all(ad.matmul(a, b)), [a, b]) < 1e-4

    def test_shape_error(self, rng):
        with pytest.raises(ShapeError):
            ad.matmul(leaf(rng, 2, 3), leaf(rng, 2, 3))


class TestSpmmConst:
    def test_identity(self, rng):
        x = leaf(rng, 3, 2)
        out = ad.spmm_const(SparseAdjacency.from_dense(np.eye(3)), x)
        np.testing.assert_array_equal(out.data, x.data)
        np.testing.assert_array_equal(backward(ad.sum_all(out))[x], np.ones((3, 2)))

    def test_zero(self, rng):
        x = leaf(rng, 3, 2)
        out = ad.spmm_const(build_csr([], 3), x)
        assert not out.data.any()
        assert not backward(ad.sum_all(out))[x].any()

    def test_gradcheck_asymmetric(self, rng):
        s = build_csr(random_edges(rng, 6, 0.5), 6, directed=True)
        w = rng.standard_normal((6, 2))
        x = leaf(rng, 6, 3)
        W = Tensor(rng.standard_normal((3, 2)))
        f = lambda x: ad.sum_all(ad.affine_combine(0.3, ad.matmul(ad.spmm_const(s, x), W), Tensor(w)))
        assert gradcheck(f, [x]) < 1e-4

    def test_shape_error(self, rng):
        with pytest.raises(ShapeError):
            ad.spmm_const(build_csr([], 4), leaf(rng, 3, 2))


class TestElementwise:
    def test_relu(self):
        x = Tensor([[-1.0, 2.0]], requires_grad=True)
        out = ad.relu(x)
        np.testing.assert_array_equal(out.data, [[0, 2]])
        np.testing.assert_array_equal(backward(ad.sum_all(out))[x], [[0, 1]])

    def test_relu_zero_subgradient(self):
        x = Tensor([[0.0]], requires_grad=True)
        assert backward(ad.sum_all(ad.relu(x)))[x][0, 0] == 0.0

    def test_affine_mu_one(self, rng):
        a, b = leaf(rng, 3, 2), leaf(rng, 3, 2)
        out = ad.affine_combine(Tensor(1.0), a, b)
        np.testing.assert_array_equal(out.data, a.data)

    def test_affine_mu_gradient(self, rng):
        a, b = leaf(rng, 3, 2), leaf(rng, 3, 2)
        mu = Tensor(0.37, requires_grad=True)
        W = Tensor(rng.standard_normal((2, 2)))
        f = lambda mu, a, b: ad.sum_all(ad.relu(ad.matmul(ad.affine_combine(mu, a, b), W)))
        assert gradcheck(f, [mu, a, b]) < 1e-4

    def test_scale_by_tensor(self, rng):
        x, c = leaf(rng, 3, 3), Tensor(0.7, requires_grad=True)
        f = lambda x, c: ad.sum_all(ad.relu(ad.scale(x, c)))
        assert gradcheck(f, [x, c]) < 1e-4

    def test_add_shape(self, rng):
        with pytest.raises(ShapeError):
            ad.add(leaf(rng, 2, 2), leaf(rng, 2, 3))

    def test_sigmoid_clip_concat(self, rng):
        x, y = leaf(rng, 3, 2), leaf(rng, 3, 1)
        f = lambda x, y: ad.sum_all(ad.concat(ad.sigmoid(x), ad.clip(y, -0.5, 0.5)))
        assert gradcheck(f, [x, y]) < 1e-4


class TestCrossEntropy:
    def test_uniform(self):
        for C in (2, 3, 7):
            loss = ad.softmax_cross_entropy(Tensor(np.zeros((4, C))), [0, 1, 0, 1], np.ones(4, bool))
            assert loss.item() == pytest.approx(math.log(C), abs=1e-15)

    def test_margin_limit(self):
        y = [0, 1, 2]
        prev = np.inf
        for margin in (1.0, 10.0, 100.0, 1000.0):
            loss = ad.softmax_cross_entropy(Tensor(margin * np.eye(3)), y, [0, 1, 2]).item()
            assert loss <= prev
            prev = loss
        assert prev < 1e-12

    def test_gradcheck(self, rng):
        logits = leaf(rng, 6, 4)
        y = LabelVector([0, 1, 2, 3, 1, 2], 4)
        mask = np.array([1, 0, 1, 1, 0, 1], bool)
        assert gradcheck(lambda z: ad.softmax_cross_entropy(z, y, mask), [logits]) < 1e-4
        g = backward(ad.softmax_cross_entropy(logits, y, mask))[logits]
        assert not g[~mask].any()

    def test_empty_mask(self):
        with pytest.raises(ValueError):
            ad.softmax_cross_entropy(Tensor(np.zeros((2, 2))), [0, 1], np.zeros(2, bool))

    def test_stable_large_logits(self):
        loss = ad.softmax_cross_entropy(Tensor([[1e4, 0.0], [0.0, 1e4]]), [0, 1], [0, 1])
        assert loss.item() == 0.0


class TestDropout:
    def test_identities(self, rng):
        x = leaf(rng, 4, 4)
        assert ad.dropout(x, 0.0, rng, True) is x
        assert ad.dropout(x, 0.6, None, False) is x

    def test_rate_range(self, rng):
        with pytest.raises(ValueError):
            ad.dropout(leaf(rng, 2, 2), 1.0, rng, True)

    @pytest.mark.parametrize("p", [0.3, 0.6, 0.9])
    def test_survivor_fraction(self, p):
        x = Tensor(np.ones((1000, 1000)))
        out = ad.dropout(x, p, np.random.default_rng(7), True)
        n = out.data.size
        frac = np.count_nonzero(out.data) / n
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(frac - (1 - p)) <= 3 * sigma
        assert np.allclose(out.data[out.data != 0], 1 / (1 - p))

    def test_gradient_uses_mask(self, rng):
        x = leaf(rng, 5, 5)
        out = ad.dropout(x, 0.5, np.random.default_rng(0), True)
        g = backward(ad.sum_all(out))[x]
        np.testing.assert_array_equal(g, out.data / np.where(x.data == 0, 1, x.data))


class TestL2:
    def test_examples(self, rng):
        assert ad.l2_penalty([leaf(rng, 2, 2)], 0.0).item() == 0.0
        t = Tensor(3.0, requires_grad=True)
        pen = ad.l2_penalty([t], 1.0)
        assert pen.item() == 9.0
        assert backward(pen)[t][0, 0] == 6.0

    def test_gradcheck(self, rng):
        a, b = leaf(rng, 2, 3), leaf(rng, 1, 4)
        assert gradcheck(lambda a, b: ad.l2_penalty([a, b], 0.3), [a, b]) < 1e-4

    def test_negative(self, rng):
        with pytest.raises(ValueError):
            ad.l2_penalty([leaf(rng, 1, 1)], -1.0)


class TestBackward:
    def test_non_scalar_root(self, rng):
        with pytest.raises(ShapeError):
            backward(ad.relu(leaf(rng, 2, 2)))

    def test_unreached_leaf_gets_zero(self, rng):
        a, b = leaf(rng, 2, 2), leaf(rng, 2, 2)
        _ = ad.relu(b)  # b on a different tape
        out = ad.sum_all(ad.add(a, a))
        g = backward(out)
        np.testing.assert_array_equal(g[a], 2 * np.ones((2, 2)))

    def test_off_path_parameter_zero(self, rng):
        a, b = leaf(rng, 2, 2), leaf(rng, 2, 2)
        out = ad.sum_all(ad.affine_combine(Tensor(1.0), a, b))
        g = backward(out)
        assert not g[b].any()

    def test_shared_input_accumulates(self, rng):
        a = leaf(rng, 3, 3)
        f = lambda a: ad.sum_all(ad.matmul(a, ad.relu(a)))
        assert gradcheck(f, [a]) < 1e-4

    def test_bit_identical(self, rng):
        s = normalized_adjacency(build_csr(random_edges(rng, 10, 0.4), 10))
        X = rng.standard_normal((10, 4))
        W = rng.standard_normal((4, 3))

        def grads():
            w = Tensor(W, requires_grad=True)
            h = ad.dropout(ad.relu(ad.spmm_const(s, ad.matmul(Tensor(X), w))), 0.5, np.random.default_rng(3), True)
            loss = ad.softmax_cross_entropy(h, np.arange(10) % 3, np.ones(10, bool))
            return backward(loss)[w]

        assert grads().tobytes() == grads().tobytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_forward(self):
        with pytest.raises(NumericError):
            ad.scale(Tensor([[1e308]]), 10.0)
