"""Independent reference computations used by the tests.

Nothing here imports the package: the REML oracle works on dense matrices
and finds the optimum by brute-force grid search followed by a bounded
zoom, so it shares no code path with the grouped solver.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize_scalar


def dense_reml(lam: float, X: np.ndarray, y: np.ndarray, groups: np.ndarray):
    """Profiled restricted log-likelihood at variance ratio ``lam`` from dense algebra.

    Returns ``(value, beta, sigma2_eps)``.
    """
    N, p = X.shape
    Z = (groups[:, None] == np.unique(groups)[None, :]).astype(float)
    H = np.eye(N) + lam * Z @ Z.T
    Hinv = np.linalg.inv(H)
    A = X.T @ Hinv @ X
    beta = np.linalg.solve(A, X.T @ Hinv @ y)
    r = y - X @ beta
    s2 = float(r @ Hinv @ r) / (N - p)
    _, logdet_h = np.linalg.slogdet(H)
    _, logdet_a = np.linalg.slogdet(A)
    value = -0.5 * ((N - p) * (np.log(2 * np.pi) + np.log(s2)) + (N - p) + logdet_h + logdet_a)
    return value, beta, s2


def grid_reml_optimum(X, y, groups, n_grid: int = 2000, lo: float = 1e-6, hi: float = 1e6):
    """Maximise the dense REML over ``{0} U logspace(lo, hi, n_grid)``, then zoom.

    The zoom maximises over ``log(lam)`` between the neighbours of the best
    grid point. Returns a dict with ``lam``, ``beta``, ``sigma2_b``,
    ``sigma2_eps`` and ``value``.
    """
    lams = np.concatenate([[0.0], np.logspace(np.log10(lo), np.log10(hi), n_grid)])
    vals = np.array([dense_reml(l, X, y, groups)[0] for l in lams])
    i = int(np.argmax(vals))
    best_lam, best_val = lams[i], vals[i]
    if 0 < i < len(lams) - 1:
        left = lams[i - 1] if i > 1 else lams[1] / 10.0
        right = lams[i + 1]
        res = minimize_scalar(
            lambda t: -dense_reml(np.exp(t), X, y, groups)[0],
            bounds=(np.log(left), np.log(right)),
            method="bounded",
            options={"xatol": 1e-12},
        )
        if -res.fun > best_val:
            best_lam, best_val = float(np.exp(res.x)), -res.fun
    value, beta, s2 = dense_reml(best_lam, X, y, groups)
    return {"lam": best_lam, "beta": beta, "sigma2_b": best_lam * s2, "sigma2_eps": s2, "value": value}


def random_instance(rng: np.random.Generator, I: int, J_max: int, R: int,
                    sigma2_b: float, sigma2_eps: float = 1.0):
    """Random-intercept data: ``I`` subjects with 1..J_max rows, ``R`` covariates."""
    J = rng.integers(1, J_max + 1, size=I)
    J[: 2] = np.maximum(J[:2], 2)
    groups = np.repeat(np.arange(I), J)
    Xs = rng.standard_normal((I, R))
    X = np.column_stack([np.ones(I), Xs])[groups]
    beta = rng.normal(0, 2, size=R + 1)
    b = rng.normal(0, np.sqrt(sigma2_b), size=I)[groups]
    y = X @ beta + b + rng.normal(0, np.sqrt(sigma2_eps), size=groups.size)
    return X, y, groups


def ols(X, y):
    return np.linalg.lstsq(X, y, rcond=None)[0]


def band_excludes(lower, upper, null, mask) -> bool:
    return bool(np.any(((null < lower) | (null > upper)) & mask))
