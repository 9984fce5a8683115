"""Subject bootstrap, pointwise and joint confidence bands, and joint-band p-values.

The joint band for a coefficient curve is built from the bootstrap mean and
covariance of its smoothed replicate curves. Gaussian draws around the mean
give the distribution of the maximum standardized deviation; its upper
quantile scales the bootstrap standard errors into a simultaneous band. The
p-value for ``H0: beta(t) = beta0(t) on S`` is the smallest level at which
that band excludes ``beta0`` somewhere on ``S``, computed from the same
Monte-Carlo sample so the two always agree.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import rng as rngmod
from .data import FunctionalDataset, TimeGrid
from .lmm import (
    GroupedProblem,
    PointwiseFitSeries,
    SingularDesignError,
    SolverOptions,
    dataset_problem,
    fit_problem,
    series_from_arrays,
)
from .smoothing import SmoothConfig, smooth_curves

logger = logging.getLogger(__name__)

MAX_REDRAWS = 10


class DegenerateEnsembleError(ValueError):
    pass


class BootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class BootstrapEnsemble:
    """Smoothed bootstrap replicates of one coefficient curve.

    Attributes:
        draws: ``(B, K)`` replicate curves.
        seed: master seed the replicates were drawn with.
        name: coefficient label.
        index: position of the coefficient in the design (keys its MC stream).
        mean: column means of ``draws``.
        cov: ``(K, K)`` empirical covariance of ``draws``.
    """

    draws: np.ndarray
    seed: int
    name: str = ""
    index: int = 0
    mean: np.ndarray = field(default=None, repr=False)
    cov: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=float)
        if draws.ndim != 2 or draws.shape[0] < 2:
            raise ValueError("draws must be a (B, K) array with B >= 2")
        object.__setattr__(self, "draws", draws)
        if self.mean is None:
            object.__setattr__(self, "mean", draws.mean(axis=0))
        if self.cov is None:
            cov = np.atleast_2d(np.cov(draws, rowvar=False))
            object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def B(self) -> int:
        return int(self.draws.shape[0])

    @property
    def K(self) -> int:
        return int(self.draws.shape[1])

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


@dataclass(frozen=True)
class JointBand:
    """Simultaneous band ``mean +/- q * se`` and the deviation sample behind it."""

    alpha: float
    q: float
    lower: np.ndarray
    upper: np.ndarray
    u_sample: np.ndarray
    mean: np.ndarray
    se: np.ndarray

    @property
    def N(self) -> int:
        return int(self.u_sample.size)

    def at(self, alpha: float) -> JointBand:
        """The band at another level, from the same deviation sample."""
        q = critical_value(self.u_sample, alpha)
        lower, upper = _envelope(self.mean, self.se, q)
        return replace(self, alpha=float(alpha), q=q, lower=lower, upper=upper)


@dataclass(frozen=True)
class TestSpec:
    """Null curve and tested subset of grid indices (``None`` means the whole grid)."""

    __test__ = False

    null_function: np.ndarray | None = None
    subset: np.ndarray | None = None


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    p_value: float
    max_standardized_deviation: float
    covariate_name: str = ""


def _replicate(problem: GroupedProblem, b: int, seed: int, solver: SolverOptions,
               smooth: SmoothConfig, grid: TimeGrid) -> np.ndarray:
    """Smoothed coefficient curves ``(p, K)`` for bootstrap replicate ``b``."""
    gen = rngmod.stream(seed, rngmod.BOOTSTRAP, b)
    n_groups = problem.labels.size
    for _ in range(MAX_REDRAWS + 1):
        idx = gen.integers(0, n_groups, size=n_groups)
        try:
            sample = problem.resample(idx)
        except SingularDesignError:
            continue
        if np.unique(idx).size < 2:
            continue
        beta = fit_problem(sample, solver)["beta"]  # (K, p)
        values, _ = smooth_curves(beta.T, grid, smooth)
        return values
    raise BootstrapError(
        f"replicate {b}: no full-rank resample after {MAX_REDRAWS} redraws"
    )


def cluster_bootstrap(
    d: FunctionalDataset,
    B: int,
    seed: int,
    solver: SolverOptions | None = None,
    smooth: SmoothConfig | None = None,
    n_jobs: int = 1,
) -> dict[str, BootstrapEnsemble]:
    """Resample subjects with replacement, refit and smooth every coefficient.

    Each replicate draws ``I`` subjects, keeps all of a drawn subject's
    periods and treats repeated draws of a subject as separate clusters.
    Replicate ``b`` uses its own random stream, so the result is identical
    for any ``n_jobs``.

    Returns:
        One ensemble per coefficient (intercept included), keyed by name.
    """
    if B < 2:
        raise ValueError("need at least two bootstrap replicates")
    if d.I < 2:
        raise ValueError("need at least two subjects to bootstrap")
    solver = solver or SolverOptions()
    smooth = smooth or SmoothConfig()
    problem = dataset_problem(d, solver)

    def work(b):
        return _replicate(problem, b, seed, solver, smooth, d.grid)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            reps = list(pool.map(work, range(B)))
    else:
        reps = [work(b) for b in range(B)]
    stacked = np.stack(reps)  # (B, p, K)
    return {
        name: BootstrapEnsemble(draws=stacked[:, j, :], seed=seed, name=name, index=j)
        for j, name in enumerate(d.coefficient_names)
    }


def rejection_count(alpha: float, N: int) -> int:
    """Largest count ``c`` of deviations ``>= m`` with ``(1 + c) / (N + 1) <= alpha``.

    Returns -1 when no count qualifies (``alpha < 1 / (N + 1)``).
    """
    c = int(np.floor(alpha * (N + 1))) - 1
    while c + 1 <= N and (2 + c) / (N + 1) <= alpha:
        c += 1
    while c >= 0 and (1 + c) / (N + 1) > alpha:
        c -= 1
    return max(c, -1)


def critical_value(u_sample: np.ndarray, alpha: float) -> float:
    """Order statistic of the sorted deviations used as the ``1 - alpha`` quantile.

    Uses the ``ceil((1 - alpha)(N + 1))``-th smallest value, the convention
    under which ``m > q`` holds exactly when ``(1 + #{u >= m}) / (N + 1) <= alpha``.
    Returns ``inf`` when alpha is below the Monte-Carlo resolution.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    N = u_sample.size
    j = N - rejection_count(alpha, N)  # 1-based order statistic
    if j > N:
        return float("inf")
    return float(u_sample[j - 1])


def _envelope(mean, se, q):
    if np.isinf(q):
        width = np.where(se > 0, np.inf, 0.0)
    else:
        width = q * se
    return mean - width, mean + width


def _factor(cov: np.ndarray) -> np.ndarray:
    """Square-root factor ``L`` with ``L L' = cov`` (ridged if needed)."""
    K = cov.shape[0]
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    ridge = 1e-10 * np.trace(cov) / K
    try:
        return np.linalg.cholesky(cov + ridge * np.eye(K))
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.clip(w, 0.0, None))


def _usable(se: np.ndarray, name: str) -> np.ndarray:
    ok = se > 0
    if not ok.all():
        warnings.warn(
            f"{name or 'ensemble'}: {int((~ok).sum())} zero-variance grid point(s) "
            "excluded from the maximum statistic",
            stacklevel=3,
        )
    return ok


def joint_critical_value(e: BootstrapEnsemble, alpha: float = 0.05, N: int = 10000,
                         seed: int = 0) -> JointBand:
    """Simulate standardized maximum deviations and take their ``1 - alpha`` quantile."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if N < 100:
        raise ValueError("need at least 100 Monte-Carlo draws")
    cov = e.cov
    if not np.any(cov) or np.trace(cov) <= 0:
        raise DegenerateEnsembleError("degenerate ensemble: covariance is identically zero")
    se = e.se
    ok = _usable(se, e.name)
    L = _factor(cov)
    gen = rngmod.stream(seed, rngmod.MONTE_CARLO, e.index)
    z = gen.standard_normal((N, e.K))
    dev = z @ L.T
    u = np.max(np.abs(dev[:, ok]) / se[ok], axis=1)
    u.sort()
    q = critical_value(u, alpha)
    lower, upper = _envelope(e.mean, se, q)
    return JointBand(alpha=float(alpha), q=q, lower=lower, upper=upper,
                     u_sample=u, mean=e.mean.copy(), se=se)


def joint_band(e: BootstrapEnsemble, alpha: float = 0.05, N: int = 10000, seed: int = 0) -> JointBand:
    """``mean -/+ q * se`` with ``q`` from :func:`joint_critical_value`."""
    return joint_critical_value(e, alpha, N, seed)


def pointwise_band(source, alpha: float = 0.05, coefficient: str | None = None):
    """Pointwise ``estimate +/- z * se`` envelopes.

    ``source`` is either a :class:`PointwiseFitSeries` (raw estimates with
    model-based standard errors; ``coefficient`` names the curve) or a
    :class:`BootstrapEnsemble` (bootstrap mean and standard errors).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    z = float(stats.norm.ppf(1.0 - alpha / 2.0))
    if isinstance(source, PointwiseFitSeries):
        if coefficient is None:
            raise ValueError("coefficient name required for a fit series")
        est, se = source.coefficient(coefficient)
    elif isinstance(source, BootstrapEnsemble):
        est, se = source.mean, source.se
    else:
        raise TypeError(f"unsupported band source {type(source).__name__}")
    return est - z * se, est + z * se


def _subset_mask(spec: TestSpec, K: int) -> np.ndarray:
    if spec.subset is None:
        return np.ones(K, dtype=bool)
    sub = np.asarray(spec.subset)
    if sub.dtype == bool:
        if sub.shape != (K,):
            raise ValueError("boolean subset must have one entry per grid point")
        mask = sub.copy()
    else:
        if sub.size and (sub.min() < 0 or sub.max() >= K):
            raise ValueError("subset index out of range")
        mask = np.zeros(K, dtype=bool)
        mask[sub.astype(np.intp)] = True
    if not mask.any():
        raise ValueError("tested subset is empty")
    return mask


def max_standardized_deviation(mean, se, null, mask) -> float:
    use = mask & (se > 0)
    if not use.any():
        raise DegenerateEnsembleError("no grid point in the subset has positive variance")
    return float(np.max(np.abs(mean[use] - null[use]) / se[use]))


def global_pvalue(e: BootstrapEnsemble, band: JointBand, spec: TestSpec | None = None) -> TestResult:
    """Joint-band p-value ``(1 + #{u_n >= m}) / (N + 1)``.

    ``m`` is the largest standardized distance between the bootstrap mean and
    the null curve over the tested subset.
    """
    spec = spec or TestSpec()
    mask = _subset_mask(spec, e.K)
    null = np.zeros(e.K) if spec.null_function is None else np.asarray(spec.null_function, float)
    if null.shape != (e.K,):
        raise ValueError("null function must have one value per grid point")
    m = max_standardized_deviation(band.mean, band.se, null, mask)
    return TestResult(p_value=pvalue_from_sample(band.u_sample, m), max_standardized_deviation=m,
                      covariate_name=e.name)


def pvalue_from_sample(u_sorted: np.ndarray, m: float) -> float:
    N = u_sorted.size
    count = N - int(np.searchsorted(u_sorted, m, side="left"))
    return (1 + count) / (N + 1)


@dataclass
class CoefficientInference:
    """Everything reported for one coefficient curve."""

    name: str
    estimate_raw: np.ndarray
    se_pointwise: np.ndarray
    estimate_smooth: np.ndarray
    lambda_smooth: float
    ensemble: BootstrapEnsemble
    band: JointBand
    test: TestResult

    def joint(self, alpha: float) -> JointBand:
        return self.band.at(alpha)

    def pointwise(self, alpha: float):
        z = float(stats.norm.ppf(1.0 - alpha / 2.0))
        return self.estimate_raw - z * self.se_pointwise, self.estimate_raw + z * self.se_pointwise


@dataclass
class FuiResult:
    grid: TimeGrid
    fits: PointwiseFitSeries
    coefficients: dict[str, CoefficientInference]
    B: int
    N: int
    seed: int


def run_fui(
    d: FunctionalDataset,
    B: int = 100,
    N: int = 10000,
    seed: int = 0,
    alpha: float = 0.05,
    solver: SolverOptions | None = None,
    smooth: SmoothConfig | None = None,
    n_jobs: int = 1,
    null_functions: dict | None = None,
    subset=None,
) -> FuiResult:
    """Pointwise fits, smoothing, bootstrap, joint bands and p-values in one call."""
    solver = solver or SolverOptions()
    smooth = smooth or SmoothConfig()
    problem = dataset_problem(d, solver)
    fits = series_from_arrays(fit_problem(problem, solver), d.grid, d.coefficient_names)
    smoothed, lams = smooth_curves(fits.beta.T, d.grid, smooth)
    ensembles = cluster_bootstrap(d, B, seed, solver, smooth, n_jobs=n_jobs)
    out = {}
    for j, name in enumerate(d.coefficient_names):
        e = ensembles[name]
        band = joint_critical_value(e, alpha, N, seed)
        null = None if not null_functions else null_functions.get(name)
        test = global_pvalue(e, band, TestSpec(null_function=null, subset=subset))
        out[name] = CoefficientInference(
            name=name,
            estimate_raw=fits.beta[:, j].copy(),
            se_pointwise=fits.se[:, j].copy(),
            estimate_smooth=smoothed[j],
            lambda_smooth=float(lams[j]),
            ensemble=e,
            band=band,
            test=test,
        )
    return FuiResult(grid=d.grid, fits=fits, coefficients=out, B=B, N=N, seed=seed)
