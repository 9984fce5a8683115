import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import make_lsq_spline

from fuicgm.data import TimeGrid
from fuicgm.smoothing import SmoothConfig, smooth_curve, smooth_curves, smoother_matrix

GRID = TimeGrid.default()
T = GRID.points


def _sine():
    return np.sin(2 * np.pi * T / 420.0)


class TestNullSpace:
    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(-1e3, 1e3), b=st.floats(-10, 10))
    def test_linear_curves_pass_through(self, a, b):
        raw = a + b * T
        out = smooth_curve(raw, GRID)
        np.testing.assert_allclose(out.values, raw, atol=1e-8 * (1 + np.abs(raw).max()))

    def test_linear_curve_at_strong_penalty(self):
        raw = 3.0 - 0.02 * T
        cfg = SmoothConfig(fixed_lambda=1e6)
        np.testing.assert_allclose(smooth_curve(raw, GRID, cfg).values, raw, atol=1e-8)


class TestLinearity:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), a=st.floats(-5, 5), b=st.floats(-5, 5),
           lam=st.sampled_from([1e-4, 0.1, 10.0, 1e3]))
    def test_linear_operator_with_pinned_penalty(self, seed, a, b, lam):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal((2, GRID.K))
        cfg = SmoothConfig(fixed_lambda=lam)
        lhs = smooth_curve(a * x + b * y, GRID, cfg).values
        rhs = a * smooth_curve(x, GRID, cfg).values + b * smooth_curve(y, GRID, cfg).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_matches_explicit_hat_matrix(self):
        rng = np.random.default_rng(1)
        raw = rng.standard_normal(GRID.K)
        S = smoother_matrix(GRID, 2.5)
        out = smooth_curve(raw, GRID, SmoothConfig(fixed_lambda=2.5)).values
        np.testing.assert_allclose(out, S @ raw, atol=1e-12)


class TestGcv:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), c=st.floats(-1e3, 1e3))
    def test_selected_penalty_ignores_constant_shift(self, seed, c):
        rng = np.random.default_rng(seed)
        raw = _sine() + 0.3 * rng.standard_normal(GRID.K)
        assert smooth_curve(raw + c, GRID).lambda_smooth == smooth_curve(raw, GRID).lambda_smooth

    def test_selected_penalty_on_grid(self):
        raw = _sine() + 0.1 * np.random.default_rng(2).standard_normal(GRID.K)
        cfg = SmoothConfig()
        lam = smooth_curve(raw, GRID, cfg).lambda_smooth
        assert lam in cfg.lambda_grid()
        assert lam >= 0

    def test_denoises_sine_in_at_least_95_of_100(self):
        rng = np.random.default_rng(2024)
        clean = _sine()
        raw = clean + 0.1 * rng.standard_normal((100, GRID.K))
        smoothed, _ = smooth_curves(raw, GRID)
        rmse_s = np.sqrt(((smoothed - clean) ** 2).mean(axis=1))
        rmse_r = np.sqrt(((raw - clean) ** 2).mean(axis=1))
        assert int((rmse_s < rmse_r).sum()) >= 95

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        raw = rng.standard_normal((5, GRID.K)).cumsum(axis=1)
        vals, lams = smooth_curves(raw, GRID)
        for i in range(5):
            one = smooth_curve(raw[i], GRID)
            np.testing.assert_allclose(vals[i], one.values, atol=1e-12)
            assert lams[i] == one.lambda_smooth


class TestPenaltyLimits:
    def test_zero_penalty_is_unpenalised_spline_fit(self):
        rng = np.random.default_rng(4)
        raw = _sine() + 0.2 * rng.standard_normal(GRID.K)
        nb = 30
        h = (T[-1] - T[0]) / (nb - 3)
        knots = T[0] + h * np.arange(-3, nb + 1)
        reference = make_lsq_spline(T, raw, knots, k=3)(T)
        out = smooth_curve(raw, GRID, SmoothConfig(fixed_lambda=0.0)).values
        np.testing.assert_allclose(out, reference, atol=1e-9)

    def test_huge_penalty_is_least_squares_line(self):
        rng = np.random.default_rng(5)
        raw = _sine() + 0.2 * rng.standard_normal(GRID.K)
        line = np.polyval(np.polyfit(T, raw, 1), T)
        out = smooth_curve(raw, GRID, SmoothConfig(fixed_lambda=1e12)).values
        np.testing.assert_allclose(out, line, atol=1e-6)


class TestEdgeCases:
    @pytest.mark.parametrize("K", [1, 2, 3])
    def test_short_grid_passes_through_with_warning(self, K):
        grid = TimeGrid.regular(K)
        raw = np.arange(K, dtype=float) ** 2
        with pytest.warns(UserWarning, match="fewer than 4"):
            out = smooth_curve(raw, grid)
        np.testing.assert_array_equal(out.values, raw)
        assert out.passthrough
        assert out.lambda_smooth == 0.0

    def test_four_points_are_smoothed_without_warning(self):
        grid = TimeGrid.regular(4)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            out = smooth_curve(np.array([1.0, 3.0, 2.0, 5.0]), grid)
        assert not out.passthrough
        assert np.all(np.isfinite(out.values))

    def test_nonfinite_input_names_index(self):
        raw = np.zeros(GRID.K)
        raw[17] = np.inf
        with pytest.raises(ValueError, match="index 17"):
            smooth_curve(raw, GRID)

    def test_disabled_returns_raw(self):
        raw = np.random.default_rng(6).standard_normal(GRID.K)
        out = smooth_curve(raw, GRID, SmoothConfig(enabled=False))
        np.testing.assert_array_equal(out.values, raw)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="grid has"):
            smooth_curve(np.zeros(5), GRID)

    def test_deterministic(self):
        raw = np.random.default_rng(7).standard_normal(GRID.K)
        a, b = smooth_curve(raw, GRID), smooth_curve(raw, GRID)
        np.testing.assert_array_equal(a.values, b.values)
