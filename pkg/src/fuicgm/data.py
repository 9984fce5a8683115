"""Shared data model for multilevel functional data.

A dataset holds one response curve per (subject, period) row, sampled on a
common equally spaced time grid, plus covariates stored once per subject.
Indices are 0-based throughout: subjects are ``0..I-1`` and grid points
``0..K-1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_SPACING = 5.0
DEFAULT_N_POINTS = 84


@dataclass(frozen=True)
class TimeGrid:
    """Equally spaced time offsets in minutes from sleep onset."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 1:
            raise ValueError("grid points must be a non-empty 1-D array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if pts.size >= 2:
            steps = np.diff(pts)
            if np.any(steps <= 0):
                raise ValueError("grid points must be strictly increasing")
            if np.max(np.abs(steps - steps[0])) > 1e-9 * abs(steps[0]):
                raise ValueError("grid points must be equally spaced")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def default(cls) -> TimeGrid:
        """84 points at 5-minute spacing: 5, 10, ..., 420 minutes."""
        return cls.regular(DEFAULT_N_POINTS, DEFAULT_SPACING)

    @classmethod
    def regular(cls, n_points: int, spacing: float = DEFAULT_SPACING) -> TimeGrid:
        return cls(spacing * np.arange(1, n_points + 1, dtype=float))

    @property
    def K(self) -> int:
        return int(self.points.size)

    @property
    def spacing(self) -> float:
        if self.K < 2:
            return DEFAULT_SPACING
        return float(self.points[1] - self.points[0])

    def __len__(self) -> int:
        return self.K

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    def __hash__(self) -> int:
        return hash(self.points.tobytes())


@dataclass(frozen=True)
class FunctionalDataset:
    """Responses over (subject, period) rows with subject-level covariates.

    Attributes:
        responses: ``(M, K)`` response matrix.
        subject_of_row: ``(M,)`` subject index of each row, in ``0..I-1``.
        period_of_row: ``(M,)`` within-subject period index of each row.
        covariates: ``(I, R)`` covariate matrix, one row per subject.
        covariate_names: R labels.
        grid: the shared time grid.
        subject_ids: optional external identifiers, one per subject.
        row_covariates: row-level covariates the dataset was built from, kept
            only so :func:`validate_dataset` can audit them.
    """

    responses: np.ndarray
    subject_of_row: np.ndarray
    period_of_row: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    grid: TimeGrid
    subject_ids: tuple[str, ...] | None = None
    row_covariates: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        responses = np.array(self.responses, dtype=float)
        if responses.ndim != 2:
            raise ValueError("responses must be a 2-D (M, K) array")
        subj = np.array(self.subject_of_row, dtype=np.intp)
        per = np.array(self.period_of_row, dtype=np.intp)
        cov = np.array(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(-1, 0) if cov.size == 0 else cov[:, None]
        names = tuple(str(n) for n in self.covariate_names)
        M = responses.shape[0]
        if subj.shape != (M,) or per.shape != (M,):
            raise ValueError("subject_of_row and period_of_row must have length M")
        if responses.shape[1] != self.grid.K:
            raise ValueError(
                f"responses have {responses.shape[1]} columns but the grid has {self.grid.K} points"
            )
        if cov.shape[1] != len(names):
            raise ValueError("covariate_names must match the number of covariate columns")
        if subj.size and (subj.min() < 0 or subj.max() >= cov.shape[0]):
            raise ValueError("subject indices must lie in 0..I-1")
        ids = None if self.subject_ids is None else tuple(str(s) for s in self.subject_ids)
        if ids is not None and len(ids) != cov.shape[0]:
            raise ValueError("subject_ids must have one entry per subject")
        for arr in (responses, subj, per, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "subject_of_row", subj)
        object.__setattr__(self, "period_of_row", per)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "subject_ids", ids)
        if self.row_covariates is not None:
            rc = np.array(self.row_covariates, dtype=float)
            rc.setflags(write=False)
            object.__setattr__(self, "row_covariates", rc)

    @classmethod
    def from_rows(
        cls,
        responses,
        subject_of_row,
        period_of_row,
        row_covariates,
        covariate_names,
        grid: TimeGrid,
        subject_ids=None,
    ) -> FunctionalDataset:
        """Build a dataset from row-level covariates.

        Each subject's covariate row is taken from its first data row. Rows
        that disagree are not an error here; :func:`validate_dataset` reports
        them.
        """
        subj = np.asarray(subject_of_row, dtype=np.intp)
        rc = np.asarray(row_covariates, dtype=float).reshape(subj.size, -1)
        n_subjects = int(subj.max()) + 1 if subj.size else 0
        cov = np.full((n_subjects, rc.shape[1]), np.nan)
        first = {}
        for m, i in enumerate(subj):
            first.setdefault(int(i), m)
        for i, m in first.items():
            cov[i] = rc[m]
        return cls(
            responses=responses,
            subject_of_row=subj,
            period_of_row=period_of_row,
            covariates=cov,
            covariate_names=tuple(covariate_names),
            grid=grid,
            subject_ids=subject_ids,
            row_covariates=rc,
        )

    @property
    def M(self) -> int:
        return int(self.responses.shape[0])

    @property
    def K(self) -> int:
        return self.grid.K

    @property
    def I(self) -> int:  # noqa: E743
        return int(self.covariates.shape[0])

    @property
    def R(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def coefficient_names(self) -> tuple[str, ...]:
        return ("(Intercept)",) + self.covariate_names

    def periods_per_subject(self) -> np.ndarray:
        return np.bincount(self.subject_of_row, minlength=self.I)

    def expanded_design(self) -> np.ndarray:
        """``(M, R+1)`` design matrix: intercept then the subject's covariates."""
        X = np.empty((self.M, self.R + 1))
        X[:, 0] = 1.0
        X[:, 1:] = self.covariates[self.subject_of_row]
        return X

    def take_rows(self, rows) -> FunctionalDataset:
        """Subset or reorder rows, keeping subject numbering unchanged."""
        rows = np.asarray(rows, dtype=np.intp)
        return FunctionalDataset(
            responses=self.responses[rows],
            subject_of_row=self.subject_of_row[rows],
            period_of_row=self.period_of_row[rows],
            covariates=self.covariates,
            covariate_names=self.covariate_names,
            grid=self.grid,
            subject_ids=self.subject_ids,
        )

    def select_covariates(self, names) -> FunctionalDataset:
        names = tuple(names)
        missing = [n for n in names if n not in self.covariate_names]
        if missing:
            raise KeyError(f"unknown covariates: {missing}")
        idx = [self.covariate_names.index(n) for n in names]
        return FunctionalDataset(
            responses=self.responses,
            subject_of_row=self.subject_of_row,
            period_of_row=self.period_of_row,
            covariates=self.covariates[:, idx],
            covariate_names=names,
            grid=self.grid,
            subject_ids=self.subject_ids,
        )


@dataclass(frozen=True)
class PointwiseDesign:
    """Regression problem at a single grid point."""

    y: np.ndarray
    X: np.ndarray
    groups: np.ndarray
    column_names: tuple[str, ...] = ()

    @property
    def n_obs(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_params(self) -> int:
        return int(self.X.shape[1])


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def validate_dataset(d: FunctionalDataset) -> ValidationReport:
    """List every violated dataset invariant. Never raises."""
    report = ValidationReport()
    v = report.violations

    bad = ~np.isfinite(d.responses)
    if bad.any():
        rows, cols = np.nonzero(bad)
        v.append(
            f"responses contain {bad.sum()} missing or non-finite values "
            f"(first at row {rows[0]}, grid index {cols[0]})"
        )

    counts = d.periods_per_subject()
    absent = np.flatnonzero(counts == 0)
    if absent.size:
        v.append(f"subjects without any rows: {absent.tolist()}")

    if not np.all(np.isfinite(d.covariates)):
        v.append("covariates contain missing or non-finite values")

    if d.row_covariates is not None:
        rc = d.row_covariates
        if rc.shape != (d.M, d.R):
            v.append(f"row-level covariates have shape {rc.shape}, expected {(d.M, d.R)}")
        else:
            expanded = d.covariates[d.subject_of_row]
            differs = np.any(rc != expanded, axis=1)
            if differs.any():
                subjects = np.unique(d.subject_of_row[differs])
                v.append(
                    f"covariates vary across periods within subjects {subjects.tolist()}"
                )

    seen = set()
    dupes = []
    for i, j in zip(d.subject_of_row.tolist(), d.period_of_row.tolist()):
        if (i, j) in seen:
            dupes.append((i, j))
        seen.add((i, j))
    if dupes:
        v.append(f"duplicate (subject, period) rows: {dupes[:5]}")

    if d.grid.K < 1:
        v.append("grid is empty")
    return report


def design_at(d: FunctionalDataset, k: int) -> PointwiseDesign:
    """Assemble the regression problem at grid index ``k`` (0-based)."""
    if not 0 <= k < d.K:
        raise IndexError(f"grid index {k} out of range for K={d.K}")
    return PointwiseDesign(
        y=d.responses[:, k].copy(),
        X=d.expanded_design(),
        groups=d.subject_of_row.copy(),
        column_names=d.coefficient_names,
    )
