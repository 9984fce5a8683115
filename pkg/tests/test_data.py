import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuicgm.data import FunctionalDataset, TimeGrid, design_at, validate_dataset
from fuicgm.datagen import GeneratorConfig, hypnos_config, simulate_dataset


def _dataset(J=(2, 3, 1), R=1, K=4, seed=0):
    rng = np.random.default_rng(seed)
    subj = np.repeat(np.arange(len(J)), J)
    per = np.concatenate([np.arange(j) for j in J])
    return FunctionalDataset(
        responses=rng.standard_normal((subj.size, K)),
        subject_of_row=subj,
        period_of_row=per,
        covariates=rng.standard_normal((len(J), R)),
        covariate_names=tuple(f"c{r}" for r in range(R)),
        grid=TimeGrid.regular(K),
    )


class TestTimeGrid:
    def test_default_grid(self):
        g = TimeGrid.default()
        assert g.K == 84
        assert g.points[0] == 5.0
        assert g.points[-1] == 420.0
        assert g.spacing == 5.0

    def test_rejects_unequal_spacing(self):
        with pytest.raises(ValueError, match="equally spaced"):
            TimeGrid(np.array([0.0, 1.0, 3.0]))

    def test_rejects_decreasing(self):
        with pytest.raises(ValueError, match="increasing"):
            TimeGrid(np.array([3.0, 2.0, 1.0]))

    def test_accepts_rounding_noise_in_spacing(self):
        g = TimeGrid(np.arange(1, 85) * 5.0 * (1 + 1e-12))
        assert g.K == 84

    def test_equality_and_hash(self):
        assert TimeGrid.regular(10) == TimeGrid.regular(10)
        assert hash(TimeGrid.regular(10)) == hash(TimeGrid.regular(10))
        assert TimeGrid.regular(10) != TimeGrid.regular(11)


class TestFunctionalDataset:
    def test_shapes(self):
        d = _dataset()
        assert (d.M, d.K, d.I, d.R) == (6, 4, 3, 1)
        assert d.coefficient_names == ("(Intercept)", "c0")
        np.testing.assert_array_equal(d.periods_per_subject(), [2, 3, 1])

    def test_arrays_are_read_only(self):
        d = _dataset()
        with pytest.raises(ValueError):
            d.responses[0, 0] = 1.0

    def test_grid_length_mismatch(self):
        with pytest.raises(ValueError, match="grid"):
            FunctionalDataset(np.zeros((2, 3)), [0, 1], [0, 0], np.zeros((2, 0)), (), TimeGrid.regular(4))

    def test_select_covariates(self):
        d = _dataset(R=3)
        sub = d.select_covariates(["c2", "c0"])
        np.testing.assert_array_equal(sub.covariates, d.covariates[:, [2, 0]])
        assert sub.covariate_names == ("c2", "c0")
        with pytest.raises(KeyError):
            d.select_covariates(["nope"])


class TestValidateDataset:
    def test_simulated_dataset_is_valid(self):
        d, _ = simulate_dataset(GeneratorConfig(n_subjects=8, periods=(1, 4), grid=TimeGrid.regular(6)))
        report = validate_dataset(d)
        assert report.ok
        assert len(report) == 0

    def test_hypnos_dataset_is_valid(self):
        d, _ = simulate_dataset(hypnos_config(1))
        assert validate_dataset(d).ok

    def test_covariates_varying_within_subject(self):
        rc = np.array([[0.0], [0.0], [1.0], [1.0], [1.0]])
        rc[1, 0] = 1.0  # subject 0 changes its covariate between periods
        d = FunctionalDataset.from_rows(
            np.zeros((5, 3)), [0, 0, 1, 1, 1], [0, 1, 0, 1, 2], rc, ("x",), TimeGrid.regular(3)
        )
        report = validate_dataset(d)
        assert len(report) == 1
        assert "vary" in report.violations[0]

    def test_missing_response_flagged(self):
        y = np.zeros((3, 4))
        y[1, 2] = np.nan
        d = FunctionalDataset(y, [0, 0, 1], [0, 1, 0], np.zeros((2, 0)), (), TimeGrid.regular(4))
        report = validate_dataset(d)
        assert not report.ok
        assert "grid index 2" in report.violations[0]

    def test_subject_without_rows_flagged(self):
        d = FunctionalDataset(np.zeros((2, 2)), [0, 2], [0, 0], np.zeros((3, 1)), ("x",), TimeGrid.regular(2))
        assert any("without any rows" in v for v in validate_dataset(d))

    def test_duplicate_period_flagged(self):
        d = FunctionalDataset(np.zeros((2, 2)), [0, 0], [0, 0], np.zeros((1, 0)), (), TimeGrid.regular(2))
        assert any("duplicate" in v for v in validate_dataset(d))

    def test_never_raises_on_nonfinite_covariates(self):
        d = FunctionalDataset(np.zeros((2, 2)), [0, 1], [0, 0], [[np.inf], [0.0]], ("x",), TimeGrid.regular(2))
        assert len(validate_dataset(d)) == 1


class TestDesignAt:
    def test_two_subject_expansion(self):
        d = FunctionalDataset(np.zeros((2, 3)), [0, 1], [0, 0], [[0.0], [1.0]], ("x",), TimeGrid.regular(3))
        np.testing.assert_array_equal(design_at(d, 0).X, [[1.0, 0.0], [1.0, 1.0]])

    def test_last_grid_index_on_default_grid(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal((4, 84))
        d = FunctionalDataset(y, [0, 0, 1, 1], [0, 1, 0, 1], np.zeros((2, 0)), (), TimeGrid.default())
        np.testing.assert_array_equal(design_at(d, 83).y, y[:, -1])

    def test_single_subject_groups(self):
        d = FunctionalDataset(np.zeros((3, 2)), [0, 0, 0], [0, 1, 2], np.zeros((1, 0)), (), TimeGrid.regular(2))
        np.testing.assert_array_equal(design_at(d, 0).groups, [0, 0, 0])

    def test_out_of_range(self):
        d = _dataset()
        with pytest.raises(IndexError):
            design_at(d, d.K)
        with pytest.raises(IndexError):
            design_at(d, -1)

    def test_pure(self):
        d = _dataset()
        a, b = design_at(d, 1), design_at(d, 1)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.groups, b.groups)
        a.y[0] = 99.0  # mutating the returned design never leaks into the dataset
        assert design_at(d, 1).y[0] != 99.0

    @settings(max_examples=40, deadline=None)
    @given(J=st.lists(st.integers(1, 5), min_size=1, max_size=6), K=st.integers(1, 8),
           R=st.integers(0, 3), seed=st.integers(0, 10_000))
    def test_rows_align_across_grid(self, J, K, R, seed):
        d = _dataset(tuple(J), R, K, seed)
        ref = design_at(d, 0)
        for k in range(d.K):
            des = design_at(d, k)
            np.testing.assert_array_equal(des.X, ref.X)
            np.testing.assert_array_equal(des.groups, d.subject_of_row)
            np.testing.assert_array_equal(des.y, d.responses[:, k])
            np.testing.assert_array_equal(des.X[:, 1:], d.covariates[d.subject_of_row])
