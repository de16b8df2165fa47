import numpy as np
import pytest

from idil_ood import autodiff as ad


def fd_grad(f, x, h=1e-5):
    """Central finite difference of a scalar function over a flat array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        g.ravel()[i] = (up - down) / (2 * h)
    return g


def assert_grad_matches(build, x0, rtol=1e-5):
    """build(tensor) -> scalar tensor; compares backward against central FD."""
    t = ad.Tensor(x0.copy())
    out = build(t)
    ad.backward(out)

    def value(x):
        return float(build(ad.Tensor(x)).values)

    expected = fd_grad(value, x0)
    np.testing.assert_allclose(t.grad, expected, rtol=rtol, atol=1e-8)


class TestSilu:
    def test_zero(self):
        assert ad.silu(ad.Tensor(0.0)).item() == 0.0

    def test_positive_value(self):
        # sigmoid(0.4) = 0.598688 to 6 places
        assert ad.silu(ad.Tensor(0.4)).item() == pytest.approx(0.239475, abs=1e-6)

    def test_negative_value(self):
        # sigmoid(-0.8) = 0.310026 to 6 places
        assert ad.silu(ad.Tensor(-0.8)).item() == pytest.approx(-0.248020, abs=1e-6)

    def test_gradient(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            x0 = rng.uniform(-2, 2, size=5)
            assert_grad_matches(lambda t: ad.reduce_sum(ad.silu(t)), x0)


class TestSoftmaxRows:
    def test_uniform(self):
        p = ad.softmax_rows(ad.Tensor([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(p.values, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_overflow_stabilization(self):
        p = ad.softmax_rows(ad.Tensor([[1000.0, 1000.0]]))
        np.testing.assert_allclose(p.values, [[0.5, 0.5]], atol=1e-15)

    def test_closed_form(self):
        p = ad.softmax_rows(ad.Tensor([[0.0, np.log(3.0)]]))
        np.testing.assert_allclose(p.values, [[0.25, 0.75]], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-5, 5, size=(8, 4))
        p = ad.softmax_rows(ad.Tensor(x))
        np.testing.assert_allclose(p.values.sum(axis=1), np.ones(8), atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-3, 3, size=(4, 5))
        shifted = x.copy()
        shifted[2] += 17.5
        p1 = ad.softmax_rows(ad.Tensor(x)).values
        p2 = ad.softmax_rows(ad.Tensor(shifted)).values
        np.testing.assert_allclose(p1, p2, atol=1e-12)

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError, match="2-D"):
            ad.softmax_rows(ad.Tensor([1.0, 2.0]))

    def test_gradient(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=(3, 4))
        for _ in range(5):
            x0 = rng.uniform(-2, 2, size=(3, 4))
            assert_grad_matches(
                lambda t: ad.reduce_sum(ad.mul(ad.softmax_rows(t), ad.Tensor(w))), x0
            )


class TestDetach:
    def test_identity_on_values(self):
        assert ad.detach(ad.Tensor([1.5])).values.tolist() == [1.5]

    def test_stops_gradient(self):
        x = ad.Tensor(2.0)
        y = ad.Tensor(3.0)
        out = ad.mul(ad.detach(x), y)
        ad.backward(out)
        assert x.grad is None
        assert y.grad == pytest.approx(2.0)

    def test_downstream_gradient_matches_fd(self):
        # d/dy of detach(x)*y at x=2 is the constant 2
        def value(y):
            return float(ad.mul(ad.detach(ad.Tensor(2.0)), ad.Tensor(y)).values)

        h = 1e-6
        fd = (value(3.0 + h) - value(3.0 - h)) / (2 * h)
        assert fd == pytest.approx(2.0, rel=1e-6)

    def test_only_detached_paths_gives_zero(self):
        w = ad.Tensor([1.0, 2.0])
        out = ad.reduce_sum(ad.mul(ad.detach(w), ad.detach(w)))
        ad.backward(out)
        assert w.grad is None


class TestSelect:
    def test_value(self):
        probs = ad.Tensor([[0.2, 0.8]])
        assert ad.select(probs, 0, 1).item() == pytest.approx(0.8)

    def test_one_hot_gradient(self):
        probs = ad.Tensor([[0.2, 0.8]])
        ad.backward(ad.select(probs, 0, 1))
        np.testing.assert_array_equal(probs.grad, [[0.0, 1.0]])

    def test_out_of_bounds(self):
        probs = ad.Tensor([[0.2, 0.8]])
        with pytest.raises(IndexError, match="axis 1"):
            ad.select(probs, 0, 2)
        with pytest.raises(IndexError, match="axis 0"):
            ad.select(probs, 1, 0)


class TestBackward:
    def test_sum_gradient(self):
        x = ad.Tensor([1.0, 2.0, 3.0])
        ad.backward(ad.reduce_sum(x))
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_silu_product_matches_fd(self):
        w = ad.Tensor(0.5)
        out = ad.silu(ad.mul(w, ad.Tensor(0.8)))
        ad.backward(out)

        def value(wv):
            return float(ad.silu(ad.mul(ad.Tensor(wv), ad.Tensor(0.8))).values)

        h = 1e-5
        fd = (value(0.5 + h) - value(0.5 - h)) / (2 * h)
        assert float(w.grad) == pytest.approx(fd, rel=1e-6)

    def test_non_scalar_root_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(ad.Tensor([1.0, 2.0]))

    def test_accumulation_without_reset(self):
        x = ad.Tensor([1.0, 2.0])
        out = ad.reduce_sum(x)
        ad.backward(out)
        ad.backward(out)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_fanout_accumulates(self):
        x = ad.Tensor(3.0)
        out = ad.add(ad.mul(x, x), x)  # x^2 + x -> grad 2x + 1 = 7
        ad.backward(out)
        assert float(x.grad) == pytest.approx(7.0)

    def test_sum_of_scalars_linearity(self):
        # backward of a sum of scalars equals the sum of the individual backwards
        rng = np.random.default_rng(4)
        x0 = rng.uniform(-2, 2, size=(2, 2))

        x = ad.Tensor(x0.copy())
        parts = [ad.silu(ad.select(x, i, j)) for i in range(2) for j in range(2)]
        ad.backward(ad.sum_tensors(parts))
        joint = x.grad.copy()

        total = np.zeros_like(x0)
        for i in range(2):
            for j in range(2):
                xi = ad.Tensor(x0.copy())
                ad.backward(ad.silu(ad.select(xi, i, j)))
                total += xi.grad
        np.testing.assert_allclose(joint, total, atol=1e-15)


class TestElementwiseOps:
    @pytest.mark.parametrize(
        "op",
        [ad.add, ad.sub, ad.mul],
        ids=["add", "sub", "mul"],
    )
    def test_binary_gradients(self, op):
        rng = np.random.default_rng(5)
        for _ in range(5):
            a0 = rng.uniform(-2, 2, size=(2, 3))
            b0 = rng.uniform(-2, 2, size=(2, 3))
            b = ad.Tensor(b0)
            assert_grad_matches(lambda t: ad.reduce_sum(op(t, b)), a0)

    def test_matmul_gradient(self):
        rng = np.random.default_rng(6)
        b = ad.Tensor(rng.uniform(-1, 1, size=(3, 2)))
        a0 = rng.uniform(-2, 2, size=(4, 3))
        assert_grad_matches(lambda t: ad.reduce_sum(ad.matmul(t, b)), a0)

    def test_affine_bias_broadcast_gradient(self):
        rng = np.random.default_rng(7)
        x = ad.Tensor(rng.uniform(-1, 1, size=(4, 3)))
        w = ad.Tensor(rng.uniform(-1, 1, size=(3, 2)))
        b0 = rng.uniform(-1, 1, size=2)
        assert_grad_matches(lambda t: ad.reduce_sum(ad.affine(x, w, t)), b0)

    def test_log_gradient(self):
        rng = np.random.default_rng(8)
        x0 = rng.uniform(0.1, 2, size=4)
        assert_grad_matches(lambda t: ad.reduce_sum(ad.log(t)), x0)

    def test_relu_gradient(self):
        # keep inputs away from the kink
        rng = np.random.default_rng(9)
        x0 = rng.uniform(-2, 2, size=8)
        x0[np.abs(x0) < 0.05] = 0.5
        assert_grad_matches(lambda t: ad.reduce_sum(ad.relu(t)), x0)

    def test_mean_gradient(self):
        rng = np.random.default_rng(10)
        x0 = rng.uniform(-2, 2, size=(3, 2))
        assert_grad_matches(lambda t: ad.reduce_mean(t), x0)

    def test_scale_gradient(self):
        x0 = np.array([1.0, -2.0])
        assert_grad_matches(lambda t: ad.reduce_sum(ad.scale(t, -0.5)), x0)

    def test_sum_tensors_empty_is_zero(self):
        z = ad.sum_tensors([])
        assert z.item() == 0.0
        ad.backward(z)  # no parents; should not raise
