"""Command-line interface: ``fuicgm {simulate,fit,infer,report,coverage-study}``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import datagen, ingest, report
from .data import TimeGrid
from .inference import run_fui
from .lmm import SolverOptions, dataset_problem, fit_problem, series_from_arrays
from .smoothing import SmoothConfig, smooth_curves
from .study import run_study


class _Timer:
    def __init__(self, quiet: bool = False):
        self.quiet = quiet
        self.stages = []

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                dt = time.perf_counter() - self.t0
                timer.stages.append((name, dt))
                if not timer.quiet and exc[0] is None:
                    print(f"[time] {name}: {dt:.3f} s")

        return _Ctx()


def _data_paths(args):
    base = Path(args.data) if args.data else None

    def pick(explicit, default):
        if explicit:
            return Path(explicit)
        if base is None:
            raise SystemExit(f"error: --data or an explicit path for {default} is required")
        return base / default

    return pick(args.cgm, "cgm.csv"), pick(args.sleep, "sleep.csv"), pick(args.covariates, "covariates.csv")


def _covariate_list(text):
    if text is None:
        return None
    return [c.strip() for c in text.split(",") if c.strip()]


def _load(args, timer):
    cgm, sleep, cov = _data_paths(args)
    with timer.stage("ingest"):
        d, rep = ingest.ingest_files(
            cgm, sleep, cov,
            grid=TimeGrid.regular(args.grid_points, args.grid_spacing),
            covariates=_covariate_list(args.use_covariates),
            max_gap_minutes=args.max_gap,
            min_periods=args.min_periods,
            min_hours=args.min_hours,
        )
    return d, rep


def _smooth_cfg(args) -> SmoothConfig:
    return SmoothConfig(n_basis=args.n_basis, enabled=not args.no_smooth)


def cmd_simulate(args) -> int:
    cfg = datagen.load_config(args.config) if args.config else datagen.hypnos_config()
    if args.seed is not None:
        cfg = datagen.GeneratorConfig(**{**cfg.__dict__, "seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d, truth = datagen.simulate_dataset(cfg)
    datagen.write_raw_csv(d, out)
    datagen.write_truth(truth, d, out)
    (out / "config.json").write_text(json.dumps(datagen.config_to_dict(cfg), indent=2) + "\n")
    print(f"simulated {d.I} subjects, {d.M} periods, {d.K} grid points -> {out}")
    return 0


def cmd_fit(args) -> int:
    timer = _Timer(args.quiet)
    d, rep = _load(args, timer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ingest_report.txt").write_text(rep.to_text())
    (out / "ingest_report.json").write_text(rep.to_json())
    solver = SolverOptions()
    with timer.stage(f"pointwise fits ({d.K} grid points, {d.M} curves, {d.I} subjects)"):
        series = series_from_arrays(fit_problem(dataset_problem(d, solver), solver), d.grid,
                                    d.coefficient_names)
    with timer.stage("smoothing"):
        smoothed, lams = smooth_curves(series.beta.T, d.grid, _smooth_cfg(args))
    report.write_fit(series, smoothed, lams, out)
    if not series.converged.all():
        print(f"warning: {int((~series.converged).sum())} grid point(s) did not converge", file=sys.stderr)
    return 0


def cmd_infer(args) -> int:
    timer = _Timer(args.quiet)
    d, rep = _load(args, timer)
    alphas = sorted(set(args.alpha or [0.05]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ingest_report.txt").write_text(rep.to_text())
    (out / "ingest_report.json").write_text(rep.to_json())
    with timer.stage(f"inference (B={args.B}, N={args.N}, threads={args.threads})"):
        res = run_fui(d, B=args.B, N=args.N, seed=args.seed, alpha=alphas[0],
                      smooth=_smooth_cfg(args), n_jobs=args.threads)
    report.write_inference(res, alphas, out)
    if not args.quiet:
        print(f"{'covariate':<16} p-value")
        for name, ci in res.coefficients.items():
            if name != report.INTERCEPT:
                print(f"{name:<16} {report.format_pvalue(ci.test.p_value)}")
    return 0


def cmd_report(args) -> int:
    paths = report.write_svgs(args.infer, args.out, alpha=args.alpha)
    for p in paths:
        print(p)
    return 0


def cmd_coverage_study(args) -> int:
    kinds = ["coverage", "type1"] if args.which == "both" else [args.which]
    ok = True
    for kind in kinds:
        res = run_study(kind, runs=args.runs, B=args.B, N=args.N, seed=args.seed, n_jobs=args.jobs)
        print(res.line(), flush=True)
        ok &= res.passed
    return 0 if ok else 1


def _add_data_args(p):
    p.add_argument("--data", help="directory holding cgm.csv, sleep.csv and covariates.csv")
    p.add_argument("--cgm", help="CGM readings CSV (subject_id,timestamp,glucose)")
    p.add_argument("--sleep", help="sleep periods CSV (subject_id,onset,offset)")
    p.add_argument("--covariates", help="subject covariates CSV (subject_id,<names...>)")
    p.add_argument("--use-covariates", metavar="A,B,...",
                   help="comma-separated covariates to include (empty string: intercept only)")
    p.add_argument("--max-gap", type=float, default=ingest.MAX_GAP_MINUTES,
                   help="largest gap (minutes) interpolated across (default: %(default)s)")
    p.add_argument("--min-periods", type=int, default=ingest.MIN_PERIODS,
                   help="minimum accepted periods per subject (default: %(default)s)")
    p.add_argument("--min-hours", type=float, default=ingest.MIN_PERIOD_HOURS,
                   help="minimum sleep period length in hours (default: %(default)s)")
    p.add_argument("--grid-points", type=_at_least(1), default=84,
                   help="number of grid points after onset (default: %(default)s)")
    p.add_argument("--grid-spacing", type=float, default=5.0,
                   help="grid spacing in minutes (default: %(default)s)")
    p.add_argument("--n-basis", type=int, default=30, help="spline basis size (default: %(default)s)")
    p.add_argument("--no-smooth", action="store_true", help="skip smoothing of coefficient curves")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--quiet", action="store_true", help="suppress timing output")


def _positive_alpha(text):
    a = float(text)
    if not 0.0 < a < 1.0:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return a


def _at_least(n):
    def parse(text):
        v = int(text)
        if v < n:
            raise argparse.ArgumentTypeError(f"must be at least {n}")
        return v
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuicgm",
        description="Fast univariate inference for multilevel function-on-scalar regression.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a dataset and write raw CSV inputs")
    p.add_argument("--config", help="JSON generator config (default: HYPNOS-like preset)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="ingest data, fit pointwise mixed models and smooth")
    _add_data_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("infer", help="bootstrap, joint bands and p-values")
    _add_data_args(p)
    p.add_argument("--B", type=_at_least(2), default=100, help="bootstrap replicates (default: %(default)s)")
    p.add_argument("--N", type=_at_least(100), default=10000,
                   help="Monte-Carlo draws for the max statistic (default: %(default)s)")
    p.add_argument("--alpha", type=_positive_alpha, action="append",
                   help="band level(s); repeatable (default: 0.05)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default: %(default)s)")
    p.add_argument("--threads", type=_at_least(1), default=1,
                   help="worker threads for bootstrap replicates; output does not depend on it")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("report", help="render SVG panels from infer output")
    p.add_argument("--infer", required=True, help="directory written by 'infer'")
    p.add_argument("--alpha", type=_positive_alpha, default=0.05, help="band level to draw")
    p.add_argument("--out", required=True, help="output directory for SVG files")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("coverage-study", help="Monte-Carlo joint-band coverage and type-I error")
    p.add_argument("--which", choices=["coverage", "type1", "both"], default="both")
    p.add_argument("--runs", type=_at_least(1), default=200)
    p.add_argument("--B", type=_at_least(2), default=100)
    p.add_argument("--N", type=_at_least(100), default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=_at_least(1), default=1, help="worker processes")
    p.set_defaults(func=cmd_coverage_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
