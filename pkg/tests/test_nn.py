import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fonttrend.nn import (
    Adam,
    Parameter,
    ShapeError,
    Tensor,
    adam_step,
    concat,
    conv2d,
    dense,
    dropout,
    global_average_pool,
    maxpool2x2,
    no_grad,
    relu,
)

from helpers import check_op_grads, conv_loop, maxpool_loop


class TestConv2d:
    def test_zero_input_gives_bias(self):
        rng = np.random.default_rng(0)
        out = conv2d(Tensor(np.zeros((1, 3, 3))), Tensor(rng.normal(size=(2, 1, 3, 3))), Tensor([0.5, -2.0]))
        np.testing.assert_array_equal(out.data[0], 0.5)
        np.testing.assert_array_equal(out.data[1], -2.0)

    def test_identity_kernel(self):
        x = np.random.default_rng(1).normal(size=(1, 3, 3))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        out = conv2d(Tensor(x), Tensor(k), Tensor([0.0]))
        np.testing.assert_array_equal(out.data, x)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 5, 5))
        w = rng.normal(size=(4, 2, 3, 3))
        b = rng.normal(size=4)
        np.testing.assert_allclose(conv2d(Tensor(x), Tensor(w), Tensor(b)).data, conv_loop(x, w, b), atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(
        c_in=st.integers(1, 3),
        c_out=st.integers(1, 3),
        h=st.integers(1, 7),
        w=st.integers(1, 7),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_loop_oracle_property(self, c_in, c_out, h, w, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(c_in, h, w))
        k = rng.normal(size=(c_out, c_in, 3, 3))
        b = rng.normal(size=c_out)
        np.testing.assert_allclose(conv2d(Tensor(x), Tensor(k), Tensor(b)).data, conv_loop(x, k, b), atol=1e-12)

    def test_batch_equals_per_sample(self):
        rng = np.random.default_rng(3)
        xs = rng.normal(size=(3, 2, 6, 5))
        w, b = Tensor(rng.normal(size=(4, 2, 3, 3))), Tensor(rng.normal(size=4))
        batched = conv2d(Tensor(xs), w, b).data
        for i in range(3):
            np.testing.assert_allclose(batched[i], conv2d(Tensor(xs[i]), w, b).data, atol=1e-13)

    def test_channel_mismatch_names_dimension(self):
        with pytest.raises(ShapeError, match="channels"):
            conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor([0.0]))

    def test_bad_kernel_shape(self):
        with pytest.raises(ShapeError, match="weight"):
            conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 5, 5))), Tensor([0.0]))

    def test_bad_bias_shape(self):
        with pytest.raises(ShapeError, match="bias"):
            conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((2, 1, 3, 3))), Tensor([0.0]))


class TestMaxPool:
    def test_single_window(self):
        assert maxpool2x2(Tensor([[[1.0, 2.0], [3.0, 4.0]]])).data.item() == 4.0

    def test_constant(self):
        out = maxpool2x2(Tensor(np.full((2, 6, 4), 3.5)))
        assert out.shape == (2, 3, 2)
        np.testing.assert_array_equal(out.data, 3.5)

    def test_matches_window_scan(self):
        x = np.random.default_rng(4).normal(size=(3, 8, 8))
        np.testing.assert_array_equal(maxpool2x2(Tensor(x)).data, maxpool_loop(x))

    def test_odd_trailing_dropped(self):
        x = np.random.default_rng(5).normal(size=(2, 7, 5))
        out = maxpool2x2(Tensor(x))
        assert out.shape == (2, 3, 2)
        np.testing.assert_array_equal(out.data, maxpool_loop(x))

    def test_tie_routes_to_first_cell(self):
        x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
        maxpool2x2(x).sum().backward()
        np.testing.assert_array_equal(x.grad[0], [[1.0, 0.0], [0.0, 0.0]])

    def test_tie_row_major_order(self):
        x = Tensor(np.array([[[0.0, 5.0], [5.0, 1.0]]]), requires_grad=True)
        maxpool2x2(x).sum().backward()
        np.testing.assert_array_equal(x.grad[0], [[0.0, 1.0], [0.0, 0.0]])

    def test_too_small(self):
        with pytest.raises(ShapeError):
            maxpool2x2(Tensor(np.zeros((1, 1, 4))))


class TestGlobalAveragePool:
    def test_mean(self):
        np.testing.assert_array_equal(global_average_pool(Tensor([[[2.0, 4.0], [6.0, 8.0]]])).data, [5.0])

    def test_constant_channel(self):
        np.testing.assert_allclose(global_average_pool(Tensor(np.full((3, 5, 7), -1.25))).data, -1.25)

    def test_size_independent(self):
        rng = np.random.default_rng(6)
        a = global_average_pool(Tensor(rng.normal(size=(128, 7, 9))))
        b = global_average_pool(Tensor(rng.normal(size=(128, 13, 4))))
        assert a.shape == b.shape == (128,)


class TestDense:
    def test_identity(self):
        x = np.arange(5.0)
        np.testing.assert_array_equal(dense(Tensor(x), Tensor(np.eye(5)), Tensor(np.zeros(5))).data, x)

    def test_zero_weights(self):
        b = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(dense(Tensor(np.ones(4)), Tensor(np.zeros((3, 4))), Tensor(b)).data, b)

    def test_matches_dot_loop(self):
        rng = np.random.default_rng(7)
        x, w, b = rng.normal(size=32), rng.normal(size=(8, 32)), rng.normal(size=8)
        expect = [b[o] + sum(w[o, i] * x[i] for i in range(32)) for o in range(8)]
        np.testing.assert_allclose(dense(Tensor(x), Tensor(w), Tensor(b)).data, expect, atol=1e-12)

    def test_mismatch(self):
        with pytest.raises(ShapeError, match="N_in"):
            dense(Tensor(np.ones(3)), Tensor(np.ones((2, 4))), Tensor(np.zeros(2)))


class TestReluDropout:
    def test_relu_values(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 3.0])).data, [0.0, 3.0])

    def test_eval_identity(self):
        x = Tensor(np.arange(6.0))
        assert dropout(x, 0.5, training=False) is x

    def test_expectation_preserved(self):
        x = np.random.default_rng(8).uniform(0.5, 1.5, size=100_000)
        out = dropout(Tensor(x), 0.5, training=True, rng=np.random.default_rng(9)).data
        assert abs(out.mean() / x.mean() - 1.0) < 0.02
        frac_zero = np.mean(out == 0.0)
        assert abs(frac_zero - 0.5) < 0.01

    def test_survivors_scaled(self):
        x = np.ones(1000)
        out = dropout(Tensor(x), 0.25, training=True, rng=np.random.default_rng(10)).data
        assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_rate_validation(self, rate):
        with pytest.raises(ValueError):
            dropout(Tensor(np.ones(3)), rate, training=False)


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        (x * x).backward()
        assert x.grad == 6.0

    def test_relu_negative(self):
        x = Tensor(-1.0, requires_grad=True)
        relu(x).backward()
        assert x.grad == 0.0

    def test_non_scalar_raises(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones(3), requires_grad=True).backward()

    def test_shared_subexpression_accumulates(self):
        x = Tensor(2.0, requires_grad=True)
        y = x * x
        (y + y * x).backward()  # d/dx (x^2 + x^3) = 2x + 3x^2
        assert x.grad == pytest.approx(16.0)

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = relu(x)
        assert y._parents == ()

    def test_concat_grad(self):
        a, b = Tensor(np.ones(2), requires_grad=True), Tensor(np.ones(3), requires_grad=True)
        (concat([a, b]) * Tensor(np.arange(5.0))).sum().backward()
        np.testing.assert_array_equal(a.grad, [0, 1])
        np.testing.assert_array_equal(b.grad, [2, 3, 4])


class TestGradientChecks:
    """Central differences against autodiff for every layer, over random shapes."""

    N_SHAPES = 20

    def _shapes(self, seed):
        rng = np.random.default_rng(seed)
        return rng, [
            (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 7)), int(rng.integers(2, 7)))
            for _ in range(self.N_SHAPES)
        ]

    def test_conv(self):
        rng, shapes = self._shapes(11)
        for c_in, c_out, h, w in shapes:
            err = check_op_grads(
                conv2d, [rng.normal(size=(c_in, h, w)), rng.normal(size=(c_out, c_in, 3, 3)), rng.normal(size=c_out)], rng
            )
            assert err < 1e-5, (c_in, c_out, h, w, err)

    def test_conv_batched(self):
        rng = np.random.default_rng(12)
        err = check_op_grads(conv2d, [rng.normal(size=(2, 2, 4, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)], rng)
        assert err < 1e-5

    def test_maxpool(self):
        rng, shapes = self._shapes(13)
        for c, _, h, w in shapes:
            assert check_op_grads(maxpool2x2, [rng.normal(size=(c, h, w))], rng) < 1e-5

    def test_gap(self):
        rng, shapes = self._shapes(14)
        for c, _, h, w in shapes:
            assert check_op_grads(global_average_pool, [rng.normal(size=(c, h, w))], rng) < 1e-5

    def test_dense(self):
        rng, shapes = self._shapes(15)
        for n_out, batch, n_in, _ in shapes:
            args = [rng.normal(size=(batch, n_in)), rng.normal(size=(n_out, n_in)), rng.normal(size=n_out)]
            assert check_op_grads(dense, args, rng) < 1e-5

    def test_relu(self):
        rng, shapes = self._shapes(16)
        for c, _, h, w in shapes:
            x = rng.normal(size=(c, h, w))
            x[np.abs(x) < 1e-3] += 0.01  # keep clear of the kink
            assert check_op_grads(relu, [x], rng) < 1e-5

    def test_dropout_fixed_mask(self):
        rng, shapes = self._shapes(17)
        for c, _, h, w in shapes:
            # same seed on every call, so the mask is identical across FD evaluations
            op = lambda t: dropout(t, 0.5, training=True, rng=np.random.default_rng(5))  # noqa: E731
            assert check_op_grads(op, [rng.normal(size=(c, h, w))], rng) < 1e-5


class TestAdam:
    def test_zero_grad_fixed_point(self):
        p = Parameter.from_array(np.array([1.0, -2.0]))
        adam_step(p, np.zeros(2), lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        np.testing.assert_array_equal(p.first_moment, 0.0)
        np.testing.assert_array_equal(p.second_moment, 0.0)
        assert p.step_count == 1

    def test_first_step_closed_form(self):
        # m_hat = g and v_hat = g^2 after one step, so the update is lr * g / (|g| + eps)
        g = np.array([0.3, -2.0, 1e-3, 50.0])
        lr, eps = 1e-2, 1e-8
        p = Parameter.from_array(np.zeros(4))
        adam_step(p, g, lr=lr, eps=eps)
        np.testing.assert_allclose(p.data, -lr * g / (np.abs(g) + eps), rtol=1e-12)
        np.testing.assert_allclose(p.data, -lr * np.sign(g), atol=lr * 1e-5)

    def test_constant_grad_monotone(self):
        p = Parameter.from_array(np.array([0.0, 0.0]))
        prev = p.data.copy()
        for _ in range(50):
            adam_step(p, np.array([1.0, -1.0]), lr=1e-3)
            assert p.data[0] < prev[0] and p.data[1] > prev[1]
            prev = p.data.copy()
        assert p.step_count == 50

    def test_non_finite_aborts(self):
        p = Parameter.from_array(np.ones(2))
        with pytest.raises(FloatingPointError):
            adam_step(p, np.array([np.nan, 1.0]), lr=0.1)
        np.testing.assert_array_equal(p.data, 1.0)
        assert p.step_count == 0

    def test_optimizer_validates_before_updating(self):
        a, b = Parameter.from_array(np.ones(2)), Parameter.from_array(np.ones(2))
        a.value.grad = np.ones(2)
        b.value.grad = np.array([np.inf, 0.0])
        with pytest.raises(FloatingPointError):
            Adam([a, b], lr=0.1).step()
        np.testing.assert_array_equal(a.data, 1.0)
        assert a.step_count == 0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step(Parameter.from_array(np.ones(3)), np.ones(2), lr=0.1)
