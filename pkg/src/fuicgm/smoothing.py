"""Penalised cubic regression spline smoothing of coefficient curves.

Curves are fitted with a cubic B-spline basis on equally spaced knots and a
second-order difference penalty on the basis coefficients; the penalty weight
is chosen by generalised cross-validation over a fixed log-spaced grid. For a
fixed grid and basis the smoother is diagonalised once,

    S(lam) = U diag(1 / (1 + lam * s)) U',

so smoothing a batch of curves at every candidate penalty is a pair of
matrix products. Linear functions lie in the null space of the penalty
(``s = 0``) and pass through unchanged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import BSpline

from .data import TimeGrid


@dataclass(frozen=True)
class SmoothConfig:
    """Smoother settings.

    ``fixed_lambda`` bypasses GCV. ``enabled=False`` returns raw curves.
    """

    n_basis: int = 30
    lambda_min: float = 1e-6
    lambda_max: float = 1e6
    n_lambda: int = 50
    fixed_lambda: float | None = None
    enabled: bool = True

    def lambda_grid(self) -> np.ndarray:
        return np.logspace(np.log10(self.lambda_min), np.log10(self.lambda_max), self.n_lambda)


@dataclass(frozen=True)
class CoefficientFunction:
    values: np.ndarray
    raw: np.ndarray
    lambda_smooth: float
    covariate_name: str = ""
    passthrough: bool = False


def basis_size(K: int, requested: int = 30) -> int:
    return min(requested, max(4, K - 1))


def bspline_basis(x: np.ndarray, n_basis: int) -> np.ndarray:
    """Cubic B-spline design matrix with ``n_basis`` columns on equally spaced knots."""
    lo, hi = float(x[0]), float(x[-1])
    n_inner = n_basis - 3  # number of knot intervals
    h = (hi - lo) / n_inner
    knots = lo + h * np.arange(-3, n_inner + 4)
    xs = np.clip(x, lo, hi)
    return BSpline.design_matrix(xs, knots, 3).toarray()


def difference_penalty(n_basis: int, order: int = 2) -> np.ndarray:
    D = np.diff(np.eye(n_basis), n=order, axis=0)
    return D.T @ D


@lru_cache(maxsize=32)
def _eigen_smoother(points: tuple, n_basis: int):
    """Orthonormal ``U`` (K x nb) and penalty eigenvalues ``s`` for the grid."""
    x = np.asarray(points)
    B = bspline_basis(x, n_basis)
    P = difference_penalty(n_basis)
    R = np.linalg.cholesky(B.T @ B).T  # B'B = R'R
    Rinv = np.linalg.inv(R)
    s, V = np.linalg.eigh(Rinv.T @ P @ Rinv)
    s = np.where(s < 1e-10 * s.max(), 0.0, s)
    U = B @ Rinv @ V
    U.setflags(write=False)
    s.setflags(write=False)
    return U, s


def smoother_matrix(grid: TimeGrid, lam: float, n_basis: int = 30) -> np.ndarray:
    """Explicit ``K x K`` hat matrix at penalty ``lam``."""
    U, s = _eigen_smoother(tuple(grid.points.tolist()), basis_size(grid.K, n_basis))
    return (U / (1.0 + lam * s)) @ U.T


def smooth_curves(raw, grid: TimeGrid, cfg: SmoothConfig | None = None):
    """Smooth a batch of curves independently.

    Args:
        raw: ``(n, K)`` curves, or a single length-K curve.
        grid: time grid the curves live on.
        cfg: smoother settings.

    Returns:
        ``(values, lambdas)`` with ``values`` shaped like ``raw`` and one
        selected penalty per curve (``nan`` when smoothing was skipped).
    """
    cfg = cfg or SmoothConfig()
    raw = np.asarray(raw, dtype=float)
    single = raw.ndim == 1
    Y = raw[None, :] if single else raw
    if Y.shape[-1] != grid.K:
        raise ValueError(f"curves have length {Y.shape[-1]} but the grid has {grid.K} points")
    bad = np.argwhere(~np.isfinite(Y))
    if bad.size:
        raise ValueError(f"non-finite value at index {int(bad[0, -1])}")
    if not cfg.enabled or grid.K < 4:
        lam = np.full(Y.shape[0], np.nan)
        out = Y.copy()
    else:
        U, s = _eigen_smoother(tuple(grid.points.tolist()), basis_size(grid.K, cfg.n_basis))
        coef = Y @ U  # (n, nb)
        if cfg.fixed_lambda is not None:
            lam = np.full(Y.shape[0], float(cfg.fixed_lambda))
            out = (coef / (1.0 + cfg.fixed_lambda * s)) @ U.T
        else:
            lams = cfg.lambda_grid()
            shrink = 1.0 / (1.0 + lams[:, None] * s[None, :])  # (L, nb)
            fitted = (coef[:, None, :] * shrink[None]) @ U.T  # (n, L, K)
            rss = ((Y[:, None, :] - fitted) ** 2).sum(axis=-1)
            edf = shrink.sum(axis=1)
            gcv = grid.K * rss / (grid.K - edf) ** 2
            best = np.argmin(gcv, axis=1)
            lam = lams[best]
            out = fitted[np.arange(Y.shape[0]), best]
    return (out[0], lam[0]) if single else (out, lam)


def smooth_curve(raw, grid: TimeGrid, cfg: SmoothConfig | None = None, name: str = "") -> CoefficientFunction:
    """Smooth a single coefficient curve, recording the selected penalty."""
    raw = np.asarray(raw, dtype=float)
    cfg = cfg or SmoothConfig()
    passthrough = (not cfg.enabled) or grid.K < 4
    if cfg.enabled and grid.K < 4:
        warnings.warn("fewer than 4 grid points; returning the raw curve", stacklevel=2)
    values, lam = smooth_curves(raw, grid, cfg)
    return CoefficientFunction(
        values=values,
        raw=raw.copy(),
        lambda_smooth=0.0 if passthrough else float(lam),
        covariate_name=name,
        passthrough=passthrough,
    )
