import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuicgm import datagen
from fuicgm.data import TimeGrid, validate_dataset
from fuicgm.datagen import (
    CovariateSpec,
    CurveSpec,
    GeneratorConfig,
    KernelSpec,
    config_from_dict,
    config_to_dict,
    gp_sample,
    hypnos_config,
    hypnos_period_counts,
    load_config,
    simulate_dataset,
)


class TestKernels:
    def test_zero_scale_gives_zeros(self):
        draws = gp_sample(KernelSpec(0.0, 60.0), TimeGrid.default(), 10, seed=1)
        assert draws.shape == (10, 84)
        assert np.all(draws == 0.0)

    @pytest.mark.parametrize("family", ["squared_exponential", "exponential"])
    def test_empirical_covariance_matches_kernel(self, family):
        kernel = KernelSpec(4.0, 40.0, family)
        grid = TimeGrid.default()
        draws = gp_sample(kernel, grid, 50_000, seed=7)
        emp = np.cov(draws, rowvar=False)
        assert np.abs(emp - kernel.matrix(grid.points)).max() < 0.05 * kernel.variance

    def test_long_correlation_length_gives_constant_rows(self):
        draws = gp_sample(KernelSpec(1.0, 1e6), TimeGrid.default(), 200, seed=3)
        deviation = np.abs(draws - draws.mean(axis=1, keepdims=True))
        assert deviation.max() < 1e-3

    def test_exponential_kernel_is_rougher(self):
        grid = TimeGrid.default()
        smooth = gp_sample(KernelSpec(1.0, 60.0, "squared_exponential"), grid, 2000, seed=0)
        rough = gp_sample(KernelSpec(1.0, 60.0, "exponential"), grid, 2000, seed=0)
        assert np.mean(np.diff(rough, axis=1) ** 2) > 10 * np.mean(np.diff(smooth, axis=1) ** 2)

    def test_accepts_generator(self):
        g1 = np.random.default_rng(5)
        g2 = np.random.default_rng(5)
        k = KernelSpec(1.0, 30.0)
        grid = TimeGrid.regular(10)
        np.testing.assert_array_equal(gp_sample(k, grid, 3, g1), gp_sample(k, grid, 3, g2))

    def test_non_psd_after_ridge_raises(self, monkeypatch):
        def broken(_):
            raise np.linalg.LinAlgError("not PSD")

        monkeypatch.setattr(datagen.np.linalg, "cholesky", broken)
        with pytest.raises(ValueError, match="positive semidefinite"):
            gp_sample(KernelSpec(1.0, 30.0), TimeGrid.regular(5), 2)

    @pytest.mark.parametrize("kwargs", [{"variance": -1.0}, {"length_scale": 0.0}, {"family": "matern"}])
    def test_invalid_kernel(self, kwargs):
        with pytest.raises(ValueError):
            KernelSpec(**kwargs)


class TestCurves:
    def test_shapes(self):
        t = np.array([0.0, 60.0, 180.0])
        np.testing.assert_allclose(CurveSpec("constant", {"value": 3.0})(t), 3.0)
        np.testing.assert_allclose(CurveSpec("linear", {"start": 1.0, "slope": 2.0})(t), [1.0, 3.0, 7.0])
        np.testing.assert_allclose(
            CurveSpec("bump", {"height": -15.0, "center": 180.0, "width": 60.0, "baseline": -5.0})(t)[2], -20.0)
        np.testing.assert_allclose(CurveSpec("sine", {"period": 240.0})(np.array([60.0])), 1.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            CurveSpec("spline")(np.zeros(2))


def _noise_free(seed=0):
    return GeneratorConfig(
        n_subjects=10, periods=(1, 4), grid=TimeGrid.regular(12), seed=seed,
        intercept=CurveSpec("sine", {"amplitude": 3.0, "offset": 100.0}),
        covariates=(CovariateSpec("x", "bernoulli", 0.5, CurveSpec("constant", {"value": 2.0})),),
        kernel_b=KernelSpec(0.0), kernel_eps=KernelSpec(0.0),
    )


class TestSimulateDataset:
    def test_noise_free_rows_are_exact(self):
        cfg = _noise_free()
        d, _ = simulate_dataset(cfg)
        beta0 = cfg.intercept(cfg.grid.points)
        x = d.covariates[d.subject_of_row, 0]
        np.testing.assert_array_equal(d.responses, beta0[None, :] + 2.0 * x[:, None])

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**31), heavy=st.booleans())
    def test_reconstruction_is_exact(self, seed, heavy):
        cfg = GeneratorConfig(n_subjects=7, periods=(1, 5), grid=TimeGrid.regular(9), seed=seed,
                              covariates=(CovariateSpec("a", "normal", effect=CurveSpec("linear", {"slope": 1.0})),),
                              kernel_b=KernelSpec(2.0, 20.0), kernel_eps=KernelSpec(1.0, 10.0, "exponential"),
                              heavy_tails=heavy)
        d, truth = simulate_dataset(cfg)
        resid = d.responses - (truth.fixed + truth.random_effects[d.subject_of_row] + truth.errors)
        assert np.all(resid == 0.0)
        np.testing.assert_array_equal(truth.period_counts, d.periods_per_subject())
        assert validate_dataset(d).ok

    def test_same_seed_identical(self):
        cfg = hypnos_config(3)
        a, _ = simulate_dataset(cfg)
        b, _ = simulate_dataset(cfg)
        np.testing.assert_array_equal(a.responses, b.responses)
        np.testing.assert_array_equal(a.covariates, b.covariates)
        np.testing.assert_array_equal(a.subject_of_row, b.subject_of_row)

    def test_different_seed_differs(self):
        a, _ = simulate_dataset(hypnos_config(3))
        b, _ = simulate_dataset(hypnos_config(4))
        assert not np.array_equal(a.responses, b.responses)

    def test_hypnos_shape(self):
        counts = hypnos_period_counts()
        assert counts.size == 174
        assert counts.sum() == 1812
        assert np.median(counts) == 11
        assert (counts.min(), counts.max()) == (5, 20)
        d, _ = simulate_dataset(hypnos_config(0))
        assert (d.I, d.M, d.K, d.R) == (174, 1812, 84, 7)
        assert np.median(d.periods_per_subject()) == 11
        assert d.covariate_names == ("age", "sex", "bmi", "osa", "biguanide", "sulfonylurea", "hba1c")

    def test_between_subject_variance_grows_with_sigma_b(self):
        spreads = []
        for var in (1.0, 4.0, 16.0):
            cfg = GeneratorConfig(n_subjects=400, periods=4, grid=TimeGrid.regular(10), seed=11,
                                  kernel_b=KernelSpec(var, 60.0), kernel_eps=KernelSpec(1.0, 10.0))
            d, _ = simulate_dataset(cfg)
            means = np.stack([d.responses[d.subject_of_row == i].mean(axis=0) for i in range(d.I)])
            spreads.append(means.var(axis=0).mean())
        assert spreads[0] < spreads[1] < spreads[2]

    def test_heavy_tails_are_heavier(self):
        base = dict(n_subjects=200, periods=5, grid=TimeGrid.regular(10), seed=2,
                    kernel_b=KernelSpec(0.0), kernel_eps=KernelSpec(1.0, 5.0))
        _, light = simulate_dataset(GeneratorConfig(**base))
        _, heavy = simulate_dataset(GeneratorConfig(**base, heavy_tails=True))

        def kurt(e):
            e = e.ravel()
            return np.mean(e**4) / np.mean(e**2) ** 2

        assert kurt(heavy.errors) > kurt(light.errors) + 1.0

    @pytest.mark.parametrize("periods", [0, 51, (0, 3), (2, 60)])
    def test_period_bounds(self, periods):
        with pytest.raises(ValueError):
            GeneratorConfig(periods=periods)

    def test_explicit_counts_need_one_per_subject(self):
        with pytest.raises(ValueError):
            GeneratorConfig(n_subjects=3, periods=[2, 2])


class TestConfigFiles:
    def test_round_trip(self):
        cfg = hypnos_config(9)
        again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
        assert again == cfg

    def test_range_and_int_periods(self):
        cfg = GeneratorConfig(n_subjects=4, periods=(2, 6), seed=1)
        assert config_from_dict(config_to_dict(cfg)).periods == (2, 6)
        assert config_from_dict({"periods": 3}).periods == 3

    def test_preset_with_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"preset": "hypnos", "seed": 5, "heavy_tails": True}))
        cfg = load_config(path)
        assert cfg.seed == 5
        assert cfg.heavy_tails
        assert cfg.n_subjects == 174
        assert cfg.covariate_names == hypnos_config().covariate_names

    def test_minimal_config(self):
        cfg = config_from_dict({
            "n_subjects": 3,
            "periods": {"range": [1, 2]},
            "grid": {"n_points": 6, "spacing": 10},
            "intercept": 5,
            "covariates": [{"name": "x", "distribution": "normal",
                            "effect": {"kind": "bump", "height": 2.0}}],
            "kernel_b": {"variance": 0.0},
        })
        assert cfg.grid == TimeGrid.regular(6, 10.0)
        assert cfg.intercept == CurveSpec("constant", {"value": 5.0})
        assert cfg.covariates[0].effect.kind == "bump"
        d, _ = simulate_dataset(cfg)
        assert d.K == 6
