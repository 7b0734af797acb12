import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fonttrend.losses import (
    MAD_TO_SIGMA,
    TUKEY_C,
    LossKind,
    LossSpec,
    loss_gradient,
    loss_tensor,
    loss_value,
    robust_scale,
    tukey_psi,
    tukey_rho,
)
from fonttrend.nn import Tensor

from helpers import numeric_grad, rel_error

ALL = [LossKind.MSE, LossKind.L1, LossKind.HUBER, LossKind.TUKEY]
SAT = TUKEY_C**2 / 6

# (c^2/6) * (1 - (1 - (2/c)^2)^3) at c = 4.685, evaluated in 40-digit decimal arithmetic
TUKEY_RHO_AT_2 = 1.6576630874988760


def _spec(kind, **kw):
    return LossSpec(kind, **kw)


class TestValues:
    @pytest.mark.parametrize("kind", ALL)
    def test_zero_residual(self, kind):
        t = np.array([1.0, 5.0, 80.0])
        assert loss_value(_spec(kind), t, t) == 0.0

    def test_mse_l1_huber_closed_form(self):
        p, t = np.array([0.0, 3.0, -0.5]), np.zeros(3)
        assert loss_value(_spec(LossKind.MSE), p, t) == pytest.approx((0 + 9 + 0.25) / 3)
        assert loss_value(_spec(LossKind.L1), p, t) == pytest.approx((0 + 3 + 0.5) / 3)
        # huber(3) = 1 * (3 - 0.5), huber(0.5) = 0.125
        assert loss_value(_spec(LossKind.HUBER), p, t) == pytest.approx((2.5 + 0.125) / 3)

    def test_tukey_scalar_closed_form(self):
        v = loss_value(_spec(LossKind.TUKEY, mad_scaling=False), [2.0], [0.0])
        assert v == pytest.approx(TUKEY_RHO_AT_2, rel=1e-14)

    @pytest.mark.parametrize("r", [TUKEY_C, 4.7, 10.0, -50.0, 1e6])
    def test_tukey_saturation_exact(self, r):
        assert loss_value(_spec(LossKind.TUKEY, mad_scaling=False), [r], [0.0]) == SAT

    def test_tukey_bounded(self):
        r = np.random.default_rng(0).standard_cauchy(10_000) * 10
        assert np.all(tukey_rho(r) <= SAT)

    def test_tukey_monotone_inside(self):
        r = np.linspace(0, TUKEY_C, 2001)
        rho = tukey_rho(r)
        assert np.all(np.diff(rho) > 0)

    @pytest.mark.parametrize("kind", ALL)
    def test_symmetry(self, kind):
        rng = np.random.default_rng(1)
        p, t = rng.normal(size=20) * 10, rng.normal(size=20) * 10
        assert loss_value(_spec(kind), p, t) == pytest.approx(loss_value(_spec(kind), t, p), rel=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(
        kind=st.sampled_from(ALL),
        e=st.lists(
            st.one_of(st.just(0.0), st.floats(1e-6, 1e3), st.floats(-1e3, -1e-6)), min_size=1, max_size=30
        ),
    )
    def test_nonnegative_and_zero_iff(self, kind, e):
        e = np.array(e)
        v = loss_value(_spec(kind), e, np.zeros_like(e))
        assert v >= 0.0
        if np.any(e != 0):
            assert v > 0.0
        else:
            assert v == 0.0

    def test_empty_raises(self):
        with pytest.raises(ValueError, match="empty"):
            loss_value(_spec(LossKind.MSE), [], [])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            loss_value(_spec(LossKind.MSE), [1.0, 2.0], [1.0])

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            LossSpec(LossKind.TUKEY, tukey_c=0.0)
        with pytest.raises(ValueError):
            LossSpec(LossKind.HUBER, huber_delta=-1.0)


class TestMadScaling:
    def test_scale_formula(self):
        e = np.array([1.0, 2.0, 3.0, 4.0, 100.0])
        # median 3; |e - 3| = 2, 1, 0, 1, 97; median 1
        assert robust_scale(e) == pytest.approx(MAD_TO_SIGMA * 1.0)

    def test_zero_mad_falls_back_to_unscaled(self):
        p = np.array([0.0, 0.0, 0.0, 2.0])
        t = np.zeros(4)
        scaled = loss_value(_spec(LossKind.TUKEY), p, t)
        raw = loss_value(_spec(LossKind.TUKEY, mad_scaling=False), p, t)
        assert scaled == raw == pytest.approx(TUKEY_RHO_AT_2 / 4, rel=1e-14)

    def test_scale_invariant(self):
        rng = np.random.default_rng(2)
        p, t = rng.normal(size=50), rng.normal(size=50)
        spec = _spec(LossKind.TUKEY)
        assert loss_value(spec, 7.0 * p, 7.0 * t) == pytest.approx(loss_value(spec, p, t), rel=1e-12)


class TestGradients:
    @pytest.mark.parametrize("kind", ALL)
    def test_zero_residual_zero_grad(self, kind):
        t = np.array([3.0, 4.0])
        np.testing.assert_array_equal(loss_gradient(_spec(kind), t, t), 0.0)

    def test_tukey_grad_zero_beyond_c(self):
        r = np.array([4.69, -5.0, 30.0, 1e4])
        g = loss_gradient(_spec(LossKind.TUKEY, mad_scaling=False), r, np.zeros(4))
        assert np.all(g == 0.0)

    def test_tukey_psi_closed_form(self):
        r = np.array([-3.0, -0.5, 0.0, 1.0, 4.0])
        np.testing.assert_allclose(tukey_psi(r), r * (1 - (r / TUKEY_C) ** 2) ** 2, rtol=1e-15)

    @pytest.mark.parametrize("kind", ALL)
    @pytest.mark.parametrize("seed", range(5))
    def test_fd_random_batch(self, kind, seed):
        rng = np.random.default_rng(seed)
        p, t = rng.normal(size=12) * 3, rng.normal(size=12) * 3
        if kind is LossKind.L1:
            p[np.abs(p - t) < 1e-3] += 0.1
        spec = _spec(kind)
        # the MAD scale is a constant of the gradient, so freeze it for the FD oracle
        scale = robust_scale(p - t) if kind is LossKind.TUKEY else None
        num = numeric_grad(lambda: loss_value(spec, p, t, scale=scale), p)
        assert rel_error(loss_gradient(spec, p, t, scale=scale), num) < 1e-6

    def test_fd_unscaled_tukey_matches_without_freezing(self):
        rng = np.random.default_rng(9)
        p, t = rng.normal(size=15) * 4, np.zeros(15)
        spec = _spec(LossKind.TUKEY, mad_scaling=False)
        num = numeric_grad(lambda: loss_value(spec, p, t), p)
        assert rel_error(loss_gradient(spec, p, t), num) < 1e-6

    def test_l1_subgradient_at_origin(self):
        g = loss_gradient(_spec(LossKind.L1), [0.0, 1.0], [0.0, 0.0])
        np.testing.assert_array_equal(g, [0.0, 0.5])

    def test_outlier_saturation_vs_mse_linear_growth(self):
        # one sample pushed beyond c times the batch scale
        base = np.array([0.3, -0.2, 0.5, -0.4, 0.1, 0.0, -0.1, 0.2])
        tuk, mse = _spec(LossKind.TUKEY), _spec(LossKind.MSE)
        mse_grads = []
        for r_out in (20.0, 40.0, 80.0):
            p = np.append(base, r_out)
            t = np.zeros_like(p)
            s = robust_scale(p - t)
            assert r_out / s > TUKEY_C
            assert loss_gradient(tuk, p, t)[-1] == 0.0
            mse_grads.append(loss_gradient(mse, p, t)[-1])
        np.testing.assert_allclose(np.array(mse_grads) / [20.0, 40.0, 80.0], 2.0 / 9)


class TestLossTensor:
    @pytest.mark.parametrize("kind", ALL)
    def test_backward_matches_gradient(self, kind):
        rng = np.random.default_rng(3)
        pv, t = rng.normal(size=6) * 5, rng.normal(size=6)
        p = Tensor(pv.copy(), requires_grad=True)
        out = loss_tensor(_spec(kind), p, t)
        out.backward()
        assert out.item() == pytest.approx(loss_value(_spec(kind), pv, t), rel=1e-14)
        np.testing.assert_allclose(p.grad, loss_gradient(_spec(kind), pv, t), rtol=1e-14)
