"""Monte-Carlo studies of joint-band coverage and test size.

Each run simulates a dataset from the multilevel model, runs the complete
bootstrap pipeline and records whether the 95% joint band for the target
coefficient covers the true curve at every grid point, and whether the
joint-band test rejects.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .data import TimeGrid
from .datagen import CovariateSpec, CurveSpec, GeneratorConfig, KernelSpec, simulate_dataset
from .inference import cluster_bootstrap, global_pvalue, joint_critical_value

TARGET = "x"


def study_config(effect: str = "bump", n_subjects: int = 50, periods: int = 5, n_points: int = 40,
                 family: str = "squared_exponential", heavy_tails: bool = False) -> GeneratorConfig:
    """Design used by the coverage and size studies.

    Covariance parameters are the generator's HYPNOS-like defaults (sd 20 and
    15 mg/dL, correlation length 60 min). ``effect="bump"`` gives the target
    covariate a localized effect peaking mid-window; ``effect="zero"`` makes
    it null. A second, continuous covariate with a constant effect is always
    present.
    """
    if effect == "bump":
        target = CurveSpec("bump", {"height": -15.0, "center": 100.0, "width": 40.0, "baseline": -5.0})
    elif effect == "zero":
        target = CurveSpec.zero()
    else:
        raise ValueError(f"unknown effect {effect!r}")
    return GeneratorConfig(
        n_subjects=n_subjects,
        periods=periods,
        grid=TimeGrid.regular(n_points, 5.0),
        intercept=CurveSpec("linear", {"start": 160.0, "slope": -2.0}),
        covariates=(
            CovariateSpec(TARGET, "bernoulli", 0.5, target),
            CovariateSpec("z", "normal", effect=CurveSpec("constant", {"value": 20.0})),
        ),
        kernel_b=KernelSpec(variance=20.0**2, length_scale=60.0, family=family),
        kernel_eps=KernelSpec(variance=15.0**2, length_scale=60.0, family=family),
        heavy_tails=heavy_tails,
    )


@dataclass(frozen=True)
class RunOutcome:
    covered: bool
    p_value: float
    q: float


def one_run(cfg: GeneratorConfig, seed: int, B: int, N: int, alpha: float = 0.05) -> RunOutcome:
    d, truth = simulate_dataset(replace(cfg, seed=seed))
    ens = cluster_bootstrap(d, B, seed)[TARGET]
    band = joint_critical_value(ens, alpha, N, seed)
    j = d.coefficient_names.index(TARGET)
    true_curve = truth.betas[j]
    covered = bool(np.all((band.lower <= true_curve) & (true_curve <= band.upper)))
    p = global_pvalue(ens, band).p_value
    return RunOutcome(covered=covered, p_value=p, q=band.q)


def _run_star(args):
    return one_run(*args)


@dataclass(frozen=True)
class StudyResult:
    kind: str
    runs: int
    rate: float
    low: float
    high: float
    seconds: float
    outcomes: tuple[RunOutcome, ...]

    @property
    def passed(self) -> bool:
        return self.low <= self.rate <= self.high

    def wilson(self, level: float = 0.95) -> tuple[float, float]:
        z = stats.norm.ppf(0.5 + level / 2)
        n, p = self.runs, self.rate
        centre = (p + z * z / (2 * n)) / (1 + z * z / n)
        half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
        return centre - half, centre + half

    def line(self) -> str:
        lo, hi = self.wilson()
        verdict = "PASS" if self.passed else "FAIL"
        return (f"[{verdict}] {self.kind}: rate {self.rate:.3f} over {self.runs} runs "
                f"(accept [{self.low:.2f}, {self.high:.2f}], 95% CI {lo:.3f}-{hi:.3f}, {self.seconds:.0f} s)")


def run_study(kind: str, runs: int = 200, B: int = 100, N: int = 2000, seed: int = 0,
              alpha: float = 0.05, n_jobs: int = 1, cfg: GeneratorConfig | None = None) -> StudyResult:
    """Joint-band coverage (``kind="coverage"``) or test size (``kind="type1"``).

    Run ``r`` uses seed ``seed * 100003 + r`` for both simulation and
    inference, so the study is reproducible and independent of ``n_jobs``.
    """
    if kind == "coverage":
        cfg = cfg or study_config("bump")
        low, high = 0.91, 0.99
    elif kind == "type1":
        cfg = cfg or study_config("zero")
        low, high = 0.02, 0.09
    else:
        raise ValueError(f"unknown study {kind!r}")
    tasks = [(cfg, seed * 100003 + r, B, N, alpha) for r in range(runs)]
    start = time.perf_counter()
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(_run_star, tasks, chunksize=max(1, runs // (4 * n_jobs))))
    else:
        outcomes = [_run_star(t) for t in tasks]
    elapsed = time.perf_counter() - start
    if kind == "coverage":
        rate = float(np.mean([o.covered for o in outcomes]))
    else:
        rate = float(np.mean([o.p_value <= alpha for o in outcomes]))
    return StudyResult(kind=kind, runs=runs, rate=rate, low=low, high=high, seconds=elapsed,
                       outcomes=tuple(outcomes))
