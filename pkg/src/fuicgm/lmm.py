"""Random-intercept linear mixed model fitted by profiled REML.

The model at one grid point is ``y = X beta + Z b + eps`` with one random
intercept per group, ``b ~ N(0, sigma2_b)`` and ``eps ~ N(0, sigma2_eps)``.
Writing ``lam = sigma2_b / sigma2_eps`` the marginal covariance is
``sigma2_eps * H(lam)`` with ``H = I + lam Z Z'``, block diagonal with
equicorrelated blocks. Every quantity REML needs reduces to per-group sums:

    X' H^-1 X = W_xx + sum_g w_g n_g xbar_g xbar_g'
    X' H^-1 y = W_xy + sum_g w_g n_g xbar_g ybar_g
    y' H^-1 y = W_yy + sum_g w_g n_g ybar_g^2
    log|H|    = sum_g log(1 + n_g lam)

where ``w_g = 1 / (1 + n_g lam)`` and the ``W`` terms are within-group
scatter, fixed once per design. Evaluating the objective therefore costs
O(G p^2) and never forms an M x M matrix. ``sigma2_eps`` is profiled out and
the remaining scalar ``lam`` is optimised on ``theta = log(1 + lam)``.

All routines are vectorised over a batch of response columns that share one
design, which is how every grid point of a functional dataset is fitted at
once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import FunctionalDataset, PointwiseDesign, TimeGrid

LOG_2PI = float(np.log(2.0 * np.pi))
_GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)
# Coarse scan used to bracket the maximiser before golden-section refinement.
_SCAN_LAMBDAS = np.concatenate([[0.0], np.logspace(-4.0, 4.0, 33)])
_MAX_EXPANSIONS = 40
_LAMBDA_CAP = 1e15


class SingularDesignError(ValueError):
    """Raised when the fixed-effects design is rank deficient."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(
            "design matrix is rank deficient; linearly dependent column(s): "
            + ", ".join(str(c) for c in self.columns)
        )


@dataclass(frozen=True)
class SolverOptions:
    """Settings for :func:`fit_pointwise` and friends.

    ``fixed_lambda`` pins the variance ratio and skips optimisation
    (``0.0`` gives ordinary least squares).
    """

    ftol: float = 1e-8
    xtol: float = 1e-7
    max_iter: int = 200
    sigma2_floor: float = 1e-10
    rank_tol: float = 1e-10
    fixed_lambda: float | None = None


@dataclass(frozen=True)
class PointwiseFit:
    beta: np.ndarray
    se: np.ndarray
    sigma2_b: float
    sigma2_eps: float
    converged: bool
    reml_value: float
    lam: float


@dataclass(frozen=True)
class PointwiseFitSeries:
    """Fits at every grid point, stored column-wise.

    ``beta`` and ``se`` are ``(K, R+1)``; the variance components, the REML
    value and the convergence flags are length-K vectors.
    """

    beta: np.ndarray
    se: np.ndarray
    sigma2_b: np.ndarray
    sigma2_eps: np.ndarray
    converged: np.ndarray
    reml_value: np.ndarray
    lam: np.ndarray
    grid: TimeGrid
    coefficient_names: tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return int(self.beta.shape[0])

    def __getitem__(self, k: int) -> PointwiseFit:
        return PointwiseFit(
            beta=self.beta[k].copy(),
            se=self.se[k].copy(),
            sigma2_b=float(self.sigma2_b[k]),
            sigma2_eps=float(self.sigma2_eps[k]),
            converged=bool(self.converged[k]),
            reml_value=float(self.reml_value[k]),
            lam=float(self.lam[k]),
        )

    @property
    def fits(self) -> list[PointwiseFit]:
        return [self[k] for k in range(len(self))]

    def coefficient(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Raw estimate and model-based standard error curves for one coefficient."""
        j = self.coefficient_names.index(name)
        return self.beta[:, j].copy(), self.se[:, j].copy()


def dependent_columns(XtX: np.ndarray, tol: float = 1e-10) -> list[int]:
    """Columns of X that lie (numerically) in the span of earlier columns.

    Works on the cross-product matrix with a sequential Cholesky sweep: a
    column whose residual variance after projecting out the previous
    independent columns falls below ``tol`` times its own norm is flagged.
    """
    p = XtX.shape[0]
    keep: list[int] = []
    bad: list[int] = []
    for j in range(p):
        diag = XtX[j, j]
        if diag <= 0.0:
            bad.append(j)
            continue
        if keep:
            S = XtX[np.ix_(keep, keep)]
            v = XtX[keep, j]
            resid = diag - v @ np.linalg.solve(S, v)
        else:
            resid = diag
        if resid <= tol * diag:
            bad.append(j)
        else:
            keep.append(j)
    return bad


class GroupedProblem:
    """Sufficient statistics of a random-intercept problem, per group.

    Args:
        X: ``(M, p)`` fixed-effects design shared by every response column.
        Y: ``(M,)`` or ``(M, K)`` responses.
        groups: ``(M,)`` group labels (any hashable integers).
        column_names: optional labels used in error messages.
    """

    def __init__(self, X, Y, groups, column_names=(), rank_tol: float = 1e-10):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        groups = np.asarray(groups)
        M, p = X.shape
        if Y.shape[0] != M or groups.shape != (M,):
            raise ValueError("X, Y and groups must have the same number of rows")
        bad = np.flatnonzero(~np.all(np.isfinite(Y), axis=0))
        if bad.size:
            raise ValueError(f"non-finite responses at column(s) {bad.tolist()}")
        if not np.all(np.isfinite(X)):
            raise ValueError("design matrix contains non-finite values")

        labels, inv, n = np.unique(groups, return_inverse=True, return_counts=True)
        G = labels.size
        names = tuple(column_names) or tuple(f"x{j}" for j in range(p))

        # Shift responses by their column mean when X carries a constant column;
        # this keeps the between-group sums well conditioned.
        self.shift = np.zeros(Y.shape[1])
        self.shift_col: int | None = None
        for j in range(p):
            col = X[:, j]
            if col[0] != 0.0 and np.all(col == col[0]):
                self.shift_col = j
                self.shift_value = float(col[0])
                self.shift = Y.mean(axis=0)
                break
        Yc = Y - self.shift

        order = np.argsort(inv, kind="stable")
        starts = np.concatenate([[0], np.cumsum(n)[:-1]])
        Xs, Ys = X[order], Yc[order]
        xbar = np.add.reduceat(Xs, starts, axis=0) / n[:, None]
        ybar = np.add.reduceat(Ys, starts, axis=0) / n[:, None]
        Xw = Xs - np.repeat(xbar, n, axis=0)
        Yw = Ys - np.repeat(ybar, n, axis=0)

        # Per-group within scatter, kept for bootstrap re-indexing.
        self.Wxx_g = np.einsum("mi,mj->mij", Xw, Xw)
        self.Wxx_g = np.add.reduceat(self.Wxx_g, starts, axis=0)
        self.Wxy_g = np.add.reduceat(Yw[:, :, None] * Xw[:, None, :], starts, axis=0)
        self.Wyy_g = np.add.reduceat(Yw * Yw, starts, axis=0)
        self.n = n.astype(float)
        self.xbar = xbar
        self.ybar = ybar
        self.labels = labels
        self.column_names = names
        self.rank_tol = rank_tol
        self._finalize(np.arange(G))

    def _finalize(self, idx):
        """Aggregate group statistics over the (possibly repeated) groups ``idx``."""
        n = self.n[idx]
        xbar = self.xbar[idx]
        ybar = self.ybar[idx]
        self.N = float(n.sum())
        self.p = xbar.shape[1]
        self.G = idx.size
        self._n = n
        self._xbar = xbar
        self._ybarT = np.ascontiguousarray(ybar.T)  # (K, G)
        self._xx = (xbar[:, :, None] * xbar[:, None, :]).reshape(idx.size, -1)
        self.Wxx = self.Wxx_g[idx].sum(axis=0)
        self.Wxy = self.Wxy_g[idx].sum(axis=0)  # (K, p)
        self.Wyy = self.Wyy_g[idx].sum(axis=0)  # (K,)
        XtX = self.Wxx + (n[:, None] * self._xx).sum(axis=0).reshape(self.p, self.p)
        bad = dependent_columns(XtX, self.rank_tol)
        if bad:
            raise SingularDesignError([self.column_names[j] for j in bad])
        self._shift_k = self.shift

    def resample(self, idx) -> GroupedProblem:
        """New problem built from groups ``idx``; repeated indices become distinct groups."""
        new = object.__new__(GroupedProblem)
        new.__dict__.update(self.__dict__)
        new._finalize(np.asarray(idx, dtype=np.intp))
        return new

    @property
    def K(self) -> int:
        return self._ybarT.shape[0]

    def _pieces(self, lam):
        """A, b, y'H^-1y and log|H| for ``lam`` of shape ``(K, L)``."""
        lam = np.asarray(lam, dtype=float)
        K, L = lam.shape
        p = self.p
        ln = lam[:, :, None] * self._n  # (K, L, G)
        v = self._n / (1.0 + ln)  # w_g * n_g
        A = self.Wxx + (v.reshape(K * L, -1) @ self._xx).reshape(K, L, p, p)
        vy = v * self._ybarT[:, None, :]
        b = self.Wxy[:, None, :] + vy @ self._xbar
        yHy = self.Wyy[:, None] + np.einsum("klg,kg->kl", vy, self._ybarT)
        logdetH = np.log1p(ln).sum(axis=-1)
        return A, b, yHy, logdetH

    def evaluate(self, lam, sigma2_floor: float = 1e-10, full: bool = False):
        """Profiled restricted log-likelihood at ``lam`` (shape ``(K, L)``).

        With ``full=True`` also returns beta, its covariance and sigma2_eps.
        """
        A, b, yHy, logdetH = self._pieces(lam)
        dof = self.N - self.p
        chol = np.linalg.cholesky(A)
        beta = np.linalg.solve(A, b[..., None])[..., 0]
        rHr = np.maximum(yHy - np.einsum("klp,klp->kl", b, beta), 0.0)
        sigma2 = np.maximum(rHr / dof, sigma2_floor)
        logdetA = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)
        value = -0.5 * (dof * (LOG_2PI + np.log(sigma2)) + rHr / sigma2 + logdetH + logdetA)
        if not full:
            return value
        Ainv = np.linalg.inv(A)
        cov = sigma2[..., None, None] * Ainv
        beta = beta.copy()
        if self.shift_col is not None:
            beta[..., self.shift_col] += (self._shift_k / self.shift_value)[:, None]
        return value, beta, cov, sigma2


def _objective_theta(problem: GroupedProblem, theta, floor):
    return problem.evaluate(np.expm1(theta), floor)


def _optimize(problem: GroupedProblem, opts: SolverOptions):
    """Maximise the profiled REML over theta = log(1 + lam), column-wise.

    Returns ``(lam, converged)`` arrays of length K.
    """
    K = problem.K
    floor = opts.sigma2_floor
    theta = np.log1p(_SCAN_LAMBDAS)
    grid = np.broadcast_to(theta, (K, theta.size)).copy()
    values = _objective_theta(problem, grid, floor)
    hit_cap = np.zeros(K, dtype=bool)

    # Push the scan outward until no column peaks at its last point.
    for _ in range(_MAX_EXPANSIONS):
        at_end = np.argmax(values, axis=1) == grid.shape[1] - 1
        if not at_end.any():
            break
        last = grid[:, -1]
        if np.all(np.expm1(last[at_end]) >= _LAMBDA_CAP):
            hit_cap |= at_end
            break
        nxt = last + np.maximum(1.0, 0.5 * last)
        grid = np.concatenate([grid, nxt[:, None]], axis=1)
        values = np.concatenate(
            [values, _objective_theta(problem, nxt[:, None], floor)], axis=1
        )
    else:
        hit_cap |= np.argmax(values, axis=1) == grid.shape[1] - 1

    rows = np.arange(K)
    best = np.argmax(values, axis=1)
    a = grid[rows, np.maximum(best - 1, 0)]
    b = grid[rows, np.minimum(best + 1, grid.shape[1] - 1)]
    scan_theta = grid[rows, best]
    scan_val = values[rows, best]

    # Golden-section refinement inside each column's bracket.
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = _objective_theta(problem, c[:, None], floor)[:, 0]
    fd = _objective_theta(problem, d[:, None], floor)[:, 0]
    done = np.zeros(K, dtype=bool)
    for _ in range(opts.max_iter):
        width = b - a
        mid = 0.5 * (a + b)
        done |= (np.abs(fc - fd) <= opts.ftol) & (width <= opts.xtol * (1.0 + mid))
        if done.all():
            break
        left = fc > fd  # maximiser lies in [a, d]
        act = ~done
        new_b = np.where(act & left, d, b)
        new_a = np.where(act & ~left, c, a)
        new_c = np.where(act & left, new_b - _GOLDEN * (new_b - new_a), np.where(act, d, c))
        new_d = np.where(act & ~left, new_a + _GOLDEN * (new_b - new_a), np.where(act, c, d))
        probe = np.where(left, new_c, new_d)
        fprobe = _objective_theta(problem, probe[:, None], floor)[:, 0]
        fc_new = np.where(act & left, fprobe, np.where(act, fd, fc))
        fd_new = np.where(act & ~left, fprobe, np.where(act, fc, fd))
        a, b, c, d, fc, fd = new_a, new_b, new_c, new_d, fc_new, fd_new

    gold_theta = np.where(fc >= fd, c, d)
    gold_val = np.maximum(fc, fd)
    zero_val = values[:, 0]
    cand_theta = np.stack([gold_theta, scan_theta, np.zeros(K)], axis=1)
    cand_val = np.stack([gold_val, scan_val, zero_val], axis=1)
    # Ties favour the boundary so that flat objectives report lam = 0.
    pick = np.argmax(cand_val[:, ::-1], axis=1)
    pick = 2 - pick
    theta_hat = cand_theta[rows, pick]
    converged = (done | (pick == 2)) & ~hit_cap
    return np.expm1(theta_hat), converged


def fit_problem(problem: GroupedProblem, opts: SolverOptions | None = None):
    """Fit every response column of ``problem``.

    Returns a dict of arrays: ``beta`` and ``se`` ``(K, p)``; ``sigma2_b``,
    ``sigma2_eps``, ``lam``, ``reml_value`` and ``converged`` of length K.
    """
    opts = opts or SolverOptions()
    K = problem.K
    if problem.G < 2 and opts.fixed_lambda is None:
        raise ValueError("at least two groups are required to estimate a random intercept")
    if problem.N <= problem.p:
        raise ValueError("need more observations than fixed-effect parameters")
    if opts.fixed_lambda is not None:
        if opts.fixed_lambda < 0:
            raise ValueError("fixed_lambda must be non-negative")
        lam = np.full(K, float(opts.fixed_lambda))
        converged = np.ones(K, dtype=bool)
    else:
        lam, converged = _optimize(problem, opts)
    value, beta, cov, sigma2 = problem.evaluate(lam[:, None], opts.sigma2_floor, full=True)
    se = np.sqrt(np.diagonal(cov[:, 0], axis1=-2, axis2=-1))
    sigma2 = sigma2[:, 0]
    return {
        "beta": beta[:, 0],
        "se": se,
        "sigma2_b": lam * sigma2,
        "sigma2_eps": sigma2,
        "lam": lam,
        "reml_value": value[:, 0],
        "converged": converged,
    }


def reml_objective(lam: float, design: PointwiseDesign, sigma2_floor: float = 1e-10) -> float:
    """Restricted log-likelihood at variance ratio ``lam`` with sigma2_eps profiled out."""
    if lam < 0:
        raise ValueError("variance ratio must be non-negative")
    problem = GroupedProblem(design.X, design.y, design.groups, design.column_names)
    return float(problem.evaluate(np.array([[lam]]), sigma2_floor)[0, 0])


def fit_pointwise(design: PointwiseDesign, opts: SolverOptions | None = None) -> PointwiseFit:
    """Fit the random-intercept model to a single response vector."""
    opts = opts or SolverOptions()
    problem = GroupedProblem(
        design.X, design.y, design.groups, design.column_names, rank_tol=opts.rank_tol
    )
    out = fit_problem(problem, opts)
    return PointwiseFit(
        beta=out["beta"][0],
        se=out["se"][0],
        sigma2_b=float(out["sigma2_b"][0]),
        sigma2_eps=float(out["sigma2_eps"][0]),
        converged=bool(out["converged"][0]),
        reml_value=float(out["reml_value"][0]),
        lam=float(out["lam"][0]),
    )


def dataset_problem(d: FunctionalDataset, opts: SolverOptions | None = None) -> GroupedProblem:
    opts = opts or SolverOptions()
    bad = np.flatnonzero(~np.all(np.isfinite(d.responses), axis=0))
    if bad.size:
        raise ValueError(f"grid index {int(bad[0])}: responses contain non-finite values")
    return GroupedProblem(
        d.expanded_design(),
        d.responses,
        d.subject_of_row,
        d.coefficient_names,
        rank_tol=opts.rank_tol,
    )


def series_from_arrays(out: dict, grid: TimeGrid, names) -> PointwiseFitSeries:
    return PointwiseFitSeries(
        beta=out["beta"],
        se=out["se"],
        sigma2_b=out["sigma2_b"],
        sigma2_eps=out["sigma2_eps"],
        converged=out["converged"],
        reml_value=out["reml_value"],
        lam=out["lam"],
        grid=grid,
        coefficient_names=tuple(names),
    )


def fit_all_timepoints(d: FunctionalDataset, opts: SolverOptions | None = None) -> PointwiseFitSeries:
    """Fit the pointwise model at every grid point of ``d``."""
    problem = dataset_problem(d, opts)
    out = fit_problem(problem, opts)
    return series_from_arrays(out, d.grid, d.coefficient_names)
