"""Simulate multilevel functional data with known truth.

Each response curve is

    y_ij(t) = beta_0(t) + sum_r beta_r(t) x_ir + b_i(t) + eps_ij(t)

with ``b_i`` and ``eps_ij`` mean-zero Gaussian processes on the grid. Subject
``i`` draws its random curve and all of its period errors from its own random
stream, so datasets do not depend on evaluation order.

Configs are JSON documents; see ``README.md`` for the schema.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .data import FunctionalDataset, TimeGrid

# Period counts per subject reproducing the HYPNOS sleep-period profile:
# 174 subjects, 1812 periods, 5 to 20 per subject, median 11.
HYPNOS_PERIOD_HISTOGRAM = {
    5: 13, 6: 13, 7: 13, 8: 13, 9: 14, 10: 14, 11: 30, 12: 25,
    13: 15, 14: 8, 15: 5, 16: 3, 17: 2, 18: 2, 19: 2, 20: 2,
}


def hypnos_period_counts() -> np.ndarray:
    values = list(HYPNOS_PERIOD_HISTOGRAM)
    return np.repeat(values, [HYPNOS_PERIOD_HISTOGRAM[v] for v in values])


@dataclass(frozen=True)
class KernelSpec:
    """Stationary covariance kernel on the time grid (minutes)."""

    variance: float = 1.0
    length_scale: float = 60.0
    family: str = "squared_exponential"

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("kernel variance must be non-negative")
        if self.length_scale <= 0:
            raise ValueError("kernel length scale must be positive")
        if self.family not in ("squared_exponential", "exponential"):
            raise ValueError(f"unknown kernel family {self.family!r}")

    def matrix(self, points: np.ndarray) -> np.ndarray:
        d = np.abs(points[:, None] - points[None, :])
        if self.family == "squared_exponential":
            return self.variance * np.exp(-0.5 * (d / self.length_scale) ** 2)
        return self.variance * np.exp(-d / self.length_scale)


@dataclass(frozen=True)
class CurveSpec:
    """Coefficient function shape, evaluated at times in minutes.

    kinds and their parameters:
        constant: ``value``
        linear: ``start`` (value at t=0) and ``slope`` (per hour)
        sine: ``amplitude``, ``period`` (minutes), ``phase`` (radians), ``offset``
        bump: ``height``, ``center``, ``width`` (minutes), ``baseline``
    """

    kind: str = "constant"
    params: dict = field(default_factory=dict)

    def __call__(self, t: np.ndarray) -> np.ndarray:
        p = self.params
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full(t.shape, float(p.get("value", 0.0)))
        if self.kind == "linear":
            return p.get("start", 0.0) + p.get("slope", 0.0) * t / 60.0
        if self.kind == "sine":
            return p.get("offset", 0.0) + p.get("amplitude", 1.0) * np.sin(
                2.0 * np.pi * t / p.get("period", 420.0) + p.get("phase", 0.0)
            )
        if self.kind == "bump":
            z = (t - p.get("center", 180.0)) / p.get("width", 60.0)
            return p.get("baseline", 0.0) + p.get("height", 1.0) * np.exp(-0.5 * z * z)
        raise ValueError(f"unknown curve kind {self.kind!r}")

    @classmethod
    def zero(cls) -> CurveSpec:
        return cls("constant", {"value": 0.0})


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    distribution: str = "bernoulli"
    p: float = 0.5
    effect: CurveSpec = field(default_factory=CurveSpec.zero)

    def draw(self, gen: np.random.Generator, n: int) -> np.ndarray:
        if self.distribution == "bernoulli":
            return (gen.random(n) < self.p).astype(float)
        if self.distribution == "normal":
            return gen.standard_normal(n)
        raise ValueError(f"unknown covariate distribution {self.distribution!r}")


@dataclass(frozen=True)
class GeneratorConfig:
    """A generative instance of the multilevel function-on-scalar model.

    ``periods`` is an int (same for every subject), a ``(lo, hi)`` tuple
    (uniform, inclusive) or a list of per-subject counts that is randomly
    permuted across subjects.
    """

    n_subjects: int = 50
    periods: object = 5
    grid: TimeGrid = field(default_factory=TimeGrid.default)
    intercept: CurveSpec = field(default_factory=CurveSpec.zero)
    covariates: tuple[CovariateSpec, ...] = ()
    kernel_b: KernelSpec = field(default_factory=KernelSpec)
    kernel_eps: KernelSpec = field(default_factory=KernelSpec)
    heavy_tails: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be positive")
        lo, hi = self._period_bounds()
        if lo < 1 or hi > 50:
            raise ValueError("periods per subject must lie in [1, 50]")
        object.__setattr__(self, "covariates", tuple(self.covariates))

    def _period_bounds(self):
        per = self.periods
        if isinstance(per, (int, np.integer)):
            return int(per), int(per)
        if isinstance(per, tuple) and len(per) == 2:
            return int(per[0]), int(per[1])
        arr = np.asarray(per, dtype=int)
        if arr.size != self.n_subjects:
            raise ValueError("explicit period counts must have one entry per subject")
        return int(arr.min()), int(arr.max())

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    def true_betas(self) -> np.ndarray:
        """``(R+1, K)`` true coefficient curves on the grid."""
        t = self.grid.points
        return np.stack([self.intercept(t)] + [c.effect(t) for c in self.covariates])


@dataclass(frozen=True)
class TruthRecord:
    betas: np.ndarray  # (R+1, K)
    fixed: np.ndarray  # (M, K)
    random_effects: np.ndarray  # (I, K)
    errors: np.ndarray  # (M, K)
    period_counts: np.ndarray  # (I,)


def kernel_factor(kernel: KernelSpec, grid: TimeGrid) -> np.ndarray:
    """Lower Cholesky factor of the kernel matrix, ridged once if needed."""
    C = kernel.matrix(grid.points)
    if kernel.variance == 0:
        return np.zeros_like(C)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(C + 1e-10 * kernel.variance * np.eye(grid.K))
    except np.linalg.LinAlgError as exc:
        raise ValueError("kernel matrix is not positive semidefinite on this grid") from exc


def gp_sample(kernel: KernelSpec, grid: TimeGrid, n: int, seed=0) -> np.ndarray:
    """``n`` iid draws of a mean-zero Gaussian process on ``grid``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    gen = seed if isinstance(seed, np.random.Generator) else rngmod.stream(seed, rngmod.SIMULATION)
    L = kernel_factor(kernel, grid)
    return gen.standard_normal((n, grid.K)) @ L.T


def _period_counts(cfg: GeneratorConfig, gen: np.random.Generator) -> np.ndarray:
    per = cfg.periods
    if isinstance(per, (int, np.integer)):
        return np.full(cfg.n_subjects, int(per))
    if isinstance(per, tuple) and len(per) == 2:
        return gen.integers(int(per[0]), int(per[1]) + 1, size=cfg.n_subjects)
    return gen.permutation(np.asarray(per, dtype=int))


def simulate_dataset(cfg: GeneratorConfig) -> tuple[FunctionalDataset, TruthRecord]:
    """Draw one dataset from ``cfg`` together with every component of its truth."""
    I, K = cfg.n_subjects, cfg.grid.K
    counts = _period_counts(cfg, rngmod.stream(cfg.seed, rngmod.SIMULATION, 0))
    cov_gen = rngmod.stream(cfg.seed, rngmod.SIMULATION, 1)
    X = np.empty((I, len(cfg.covariates)))
    for r, spec in enumerate(cfg.covariates):
        X[:, r] = spec.draw(cov_gen, I)

    Lb = kernel_factor(cfg.kernel_b, cfg.grid)
    Le = kernel_factor(cfg.kernel_eps, cfg.grid)
    M = int(counts.sum())
    b = np.empty((I, K))
    eps = np.empty((M, K))
    row = 0
    for i in range(I):
        gen = rngmod.stream(cfg.seed, rngmod.SIMULATION, 2, i)
        J = int(counts[i])
        b[i] = Lb @ gen.standard_normal(K)
        e = gen.standard_normal((J, K)) @ Le.T
        if cfg.heavy_tails:
            # multivariate t with 3 degrees of freedom: Gaussian curve times sqrt(3 / chi2_3)
            e *= np.sqrt(3.0 / gen.chisquare(3.0, size=J))[:, None]
        eps[row:row + J] = e
        row += J

    subject_of_row = np.repeat(np.arange(I), counts)
    period_of_row = np.concatenate([np.arange(c) for c in counts]) if I else np.empty(0, int)
    betas = cfg.true_betas()
    design = np.column_stack([np.ones(I), X])
    fixed = (design @ betas)[subject_of_row]
    responses = fixed + b[subject_of_row] + eps
    dataset = FunctionalDataset(
        responses=responses,
        subject_of_row=subject_of_row,
        period_of_row=period_of_row,
        covariates=X,
        covariate_names=cfg.covariate_names,
        grid=cfg.grid,
        subject_ids=tuple(f"S{i + 1:03d}" for i in range(I)),
    )
    truth = TruthRecord(betas=betas, fixed=fixed, random_effects=b, errors=eps, period_counts=counts)
    return dataset, truth


def hypnos_config(seed: int = 0) -> GeneratorConfig:
    """HYPNOS-shaped defaults: 174 subjects, 1812 periods, 84-point grid, seven covariates.

    Effect sizes and covariance parameters are plausible placeholders in
    mg/dL, not estimates from the trial.
    """
    covs = (
        CovariateSpec("age", "normal", effect=CurveSpec("constant", {"value": -6.0})),
        CovariateSpec("sex", "bernoulli", 0.5, CurveSpec("constant", {"value": 4.0})),
        CovariateSpec("bmi", "bernoulli", 0.4, CurveSpec("constant", {"value": 1.0})),
        CovariateSpec("osa", "bernoulli", 0.6, CurveSpec("constant", {"value": 8.0})),
        CovariateSpec(
            "biguanide", "bernoulli", 145 / 174,
            CurveSpec("bump", {"height": -15.0, "center": 180.0, "width": 60.0, "baseline": -5.0}),
        ),
        CovariateSpec("sulfonylurea", "bernoulli", 66 / 174, CurveSpec.zero()),
        CovariateSpec("hba1c", "normal", effect=CurveSpec("linear", {"start": 25.0, "slope": -1.5})),
    )
    return GeneratorConfig(
        n_subjects=174,
        periods=hypnos_period_counts().tolist(),
        grid=TimeGrid.default(),
        intercept=CurveSpec("linear", {"start": 160.0, "slope": -2.0}),
        covariates=covs,
        kernel_b=KernelSpec(variance=20.0**2, length_scale=60.0),
        kernel_eps=KernelSpec(variance=15.0**2, length_scale=60.0),
        seed=seed,
    )


# --- config files -------------------------------------------------------------


def _curve_from_dict(d) -> CurveSpec:
    if d is None:
        return CurveSpec.zero()
    if isinstance(d, (int, float)):
        return CurveSpec("constant", {"value": float(d)})
    d = dict(d)
    kind = d.pop("kind", "constant")
    return CurveSpec(kind, d)


def _curve_to_dict(c: CurveSpec) -> dict:
    return {"kind": c.kind, **c.params}


def config_from_dict(d: dict) -> GeneratorConfig:
    """Build a config from its JSON representation.

    ``"preset": "hypnos"`` starts from :func:`hypnos_config`; other keys then
    override it.
    """
    d = dict(d)
    if d.pop("preset", None) == "hypnos":
        base = config_to_dict(hypnos_config(int(d.get("seed", 0))))
        base.update(d)
        d = base
    grid_d = d.get("grid", {})
    grid = TimeGrid.regular(int(grid_d.get("n_points", 84)), float(grid_d.get("spacing", 5.0)))
    per = d.get("periods", 5)
    if isinstance(per, dict) and "range" in per:
        per = tuple(int(v) for v in per["range"])
    elif isinstance(per, dict) and "counts" in per:
        per = [int(v) for v in per["counts"]]
    elif per == "hypnos":
        per = hypnos_period_counts().tolist()
    covs = tuple(
        CovariateSpec(
            name=c["name"],
            distribution=c.get("distribution", "bernoulli"),
            p=float(c.get("p", 0.5)),
            effect=_curve_from_dict(c.get("effect")),
        )
        for c in d.get("covariates", [])
    )
    return GeneratorConfig(
        n_subjects=int(d.get("n_subjects", 50)),
        periods=per,
        grid=grid,
        intercept=_curve_from_dict(d.get("intercept")),
        covariates=covs,
        kernel_b=KernelSpec(**d.get("kernel_b", {})),
        kernel_eps=KernelSpec(**d.get("kernel_eps", {})),
        heavy_tails=bool(d.get("heavy_tails", False)),
        seed=int(d.get("seed", 0)),
    )


def config_to_dict(cfg: GeneratorConfig) -> dict:
    per = cfg.periods
    if isinstance(per, (int, np.integer)):
        per_out = int(per)
    elif isinstance(per, tuple):
        per_out = {"range": [int(per[0]), int(per[1])]}
    else:
        per_out = {"counts": [int(v) for v in per]}
    return {
        "seed": cfg.seed,
        "n_subjects": cfg.n_subjects,
        "periods": per_out,
        "grid": {"n_points": cfg.grid.K, "spacing": cfg.grid.spacing},
        "intercept": _curve_to_dict(cfg.intercept),
        "covariates": [
            {"name": c.name, "distribution": c.distribution, "p": c.p, "effect": _curve_to_dict(c.effect)}
            for c in cfg.covariates
        ],
        "kernel_b": {"variance": cfg.kernel_b.variance, "length_scale": cfg.kernel_b.length_scale,
                     "family": cfg.kernel_b.family},
        "kernel_eps": {"variance": cfg.kernel_eps.variance, "length_scale": cfg.kernel_eps.length_scale,
                       "family": cfg.kernel_eps.family},
        "heavy_tails": cfg.heavy_tails,
    }


def load_config(path) -> GeneratorConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


# --- raw CSV export -------------------------------------------------------------

BASE_EPOCH = 1_600_000_000  # 2020-09-13 12:26:40 UTC
DAY = 86_400


def period_onset(i: int, j: int) -> int:
    """Deterministic onset (epoch seconds) of period ``j`` of subject ``i``."""
    jitter = 60 * ((7 * i + 13 * j) % 45)
    return BASE_EPOCH + j * DAY + 22 * 3600 + jitter


def write_raw_csv(d: FunctionalDataset, out_dir, sleep_hours: float = 8.0) -> dict:
    """Write ``cgm.csv``, ``sleep.csv`` and ``covariates.csv`` for the ingest module.

    CGM readings are placed exactly at ``onset + t_k`` so ingestion recovers
    the responses bit for bit.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = d.subject_ids or tuple(f"S{i + 1:03d}" for i in range(d.I))
    offsets = (60.0 * d.grid.points).astype(np.int64)
    if not np.array_equal(offsets, 60.0 * d.grid.points):
        raise ValueError("grid points must be whole seconds to export raw readings")
    paths = {"cgm": out / "cgm.csv", "sleep": out / "sleep.csv", "covariates": out / "covariates.csv"}
    with open(paths["cgm"], "w", newline="") as fc, open(paths["sleep"], "w", newline="") as fs:
        wc, ws = csv.writer(fc), csv.writer(fs)
        wc.writerow(["subject_id", "timestamp", "glucose"])
        ws.writerow(["subject_id", "onset", "offset"])
        for m in range(d.M):
            i, j = int(d.subject_of_row[m]), int(d.period_of_row[m])
            onset = period_onset(i, j)
            ws.writerow([ids[i], onset, onset + int(sleep_hours * 3600)])
            for off, v in zip(offsets.tolist(), d.responses[m].tolist()):
                wc.writerow([ids[i], onset + off, repr(v)])
    with open(paths["covariates"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", *d.covariate_names])
        for i in range(d.I):
            w.writerow([ids[i], *(repr(float(v)) for v in d.covariates[i])])
    return paths


def write_truth(truth: TruthRecord, d: FunctionalDataset, out_dir) -> Path:
    """True coefficient curves on the grid, one column per coefficient."""
    path = Path(out_dir) / "truth_betas.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_minutes", *d.coefficient_names])
        for k, t in enumerate(d.grid.points.tolist()):
            w.writerow([repr(t), *(repr(float(v)) for v in truth.betas[:, k])])
    return path
