"""Artifact files: fit and inference CSVs, p-value table, band widths, SVG panels.

Every writer formats floats with ``repr`` so files round-trip exactly through
:func:`read_table` and repeated runs produce identical bytes.
"""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np
from scipy import stats

from .inference import FuiResult
from .lmm import PointwiseFitSeries

INTERCEPT = "(Intercept)"


def slug(name: str) -> str:
    if name == INTERCEPT:
        return "intercept"
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "coef"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_table(path) -> dict[str, np.ndarray]:
    """Columns of a CSV written by this module; numeric columns become float arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = list(zip(*reader)) or [()] * len(header)
    out = {}
    for name, values in zip(header, cols):
        try:
            out[name] = np.array([float(v) for v in values])
        except ValueError:
            out[name] = np.array(values, dtype=object)
    return out


def write_fit(series: PointwiseFitSeries, smoothed: np.ndarray, lambdas, out_dir) -> list[Path]:
    """``fit.csv`` (long format, one row per coefficient and grid point) and
    ``variance_components.csv``."""
    out = Path(out_dir)
    t = series.grid.points
    rows = []
    for j, name in enumerate(series.coefficient_names):
        for k in range(len(t)):
            rows.append([name, t[k], series.beta[k, j], series.se[k, j], smoothed[j, k], lambdas[j]])
    p1 = write_table(out / "fit.csv",
                     ["coefficient", "t_minutes", "estimate_raw", "se", "estimate_smooth", "lambda_smooth"],
                     rows)
    p2 = write_table(
        out / "variance_components.csv",
        ["t_minutes", "sigma2_b", "sigma2_eps", "lambda", "reml", "converged"],
        [[t[k], series.sigma2_b[k], series.sigma2_eps[k], series.lam[k], series.reml_value[k],
          bool(series.converged[k])] for k in range(len(t))],
    )
    return [p1, p2]


def format_pvalue(p: float) -> str:
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def alpha_tag(alpha: float) -> str:
    return f"{alpha:g}"


def write_inference(res: FuiResult, alphas, out_dir, include_intercept: bool = True) -> list[Path]:
    """Per-coefficient band CSVs, ``pvalues.csv``, ``band_width_ratio.csv`` and
    ``critical_values.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    t = res.grid.points
    ratio_rows, q_rows, p_rows = [], [], []
    for name, ci in res.coefficients.items():
        if name == INTERCEPT and not include_intercept:
            continue
        header = ["t_minutes", "estimate_raw", "estimate_smooth", "estimate", "se_pointwise", "se_boot"]
        cols = [t, ci.estimate_raw, ci.estimate_smooth, ci.ensemble.mean, ci.se_pointwise, ci.ensemble.se]
        for a in alphas:
            lo_p, hi_p = ci.pointwise(a)
            band = ci.joint(a)
            tag = alpha_tag(a)
            header += [f"lower_pointwise_{tag}", f"upper_pointwise_{tag}",
                       f"lower_joint_{tag}", f"upper_joint_{tag}"]
            cols += [lo_p, hi_p, band.lower, band.upper]
            w_joint = float(np.mean(band.upper - band.lower))
            w_pw = float(np.mean(hi_p - lo_p))
            w_pw_boot = float(np.mean(2.0 * stats.norm.ppf(1.0 - a / 2.0) * ci.ensemble.se))
            ratio_rows.append([name, a, w_joint, w_pw, w_pw_boot,
                               w_joint / w_pw if w_pw > 0 else float("nan"),
                               w_pw_boot / w_pw if w_pw > 0 else float("nan")])
            q_rows.append([name, a, band.q, band.N])
        paths.append(write_table(out / f"infer_{slug(name)}.csv", header, zip(*cols)))
        if name != INTERCEPT:
            p = ci.test.p_value
            p_rows.append([name, p, format_pvalue(p),
                           ci.test.max_standardized_deviation, res.N])
    paths.append(write_table(out / "pvalues.csv",
                             ["covariate", "p_value", "p_display", "max_stat", "N"], p_rows))
    paths.append(write_table(
        out / "band_width_ratio.csv",
        ["coefficient", "alpha", "mean_width_joint", "mean_width_pointwise",
         "mean_width_pointwise_boot", "ratio_joint_to_pointwise", "ratio_boot_to_model_pointwise"],
        ratio_rows))
    paths.append(write_table(out / "critical_values.csv", ["coefficient", "alpha", "q", "N"], q_rows))
    return paths


# --- SVG ------------------------------------------------------------------------

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 70, 20, 40, 50


def _nice_ticks(lo: float, hi: float, n: int = 5):
    if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
        lo, hi = (lo - 1, lo + 1) if np.isfinite(lo) else (-1.0, 1.0)
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.floor(lo / step) * step
    stop = np.ceil(hi / step) * step
    ticks = np.arange(start, stop + 0.5 * step, step)
    return float(start), float(stop), ticks


def _path(xs, ys) -> str:
    return " ".join(f"{'M' if i == 0 else 'L'}{x:.2f},{y:.2f}" for i, (x, y) in enumerate(zip(xs, ys)))


def _polygon(xs, lo, hi) -> str:
    pts = list(zip(xs, hi)) + list(zip(xs[::-1], lo[::-1]))
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)


def render_svg(title: str, hours, estimate, lower_pw, upper_pw, lower_joint, upper_joint,
               estimate_raw=None, subtitle: str = "") -> str:
    """One panel: joint band, pointwise band, estimate, and a zero reference line."""
    hours = np.asarray(hours, float)
    x_hi = max(7.0, float(np.ceil(hours.max()))) if hours.size else 7.0
    finite = np.concatenate([np.asarray(a, float) for a in
                             (estimate, lower_pw, upper_pw, lower_joint, upper_joint)])
    finite = finite[np.isfinite(finite)]
    y_lo, y_hi, yt = _nice_ticks(min(finite.min(), 0.0), max(finite.max(), 0.0))

    def sx(h):
        return _ML + (np.asarray(h) - 0.0) / (x_hi - 0.0) * (_W - _ML - _MR)

    def sy(v):
        v = np.clip(np.asarray(v, float), y_lo, y_hi)
        return _H - _MB - (v - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    X = sx(hours)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-size="15">{_escape(title)}</text>',
    ]
    if subtitle:
        parts.append(f'<text x="{_W / 2:.1f}" y="34" text-anchor="middle" fill="#555">{_escape(subtitle)}</text>')
    parts.append(f'<polygon points="{_polygon(X, sy(lower_joint), sy(upper_joint))}" '
                 f'fill="#9ecae1" fill-opacity="0.6" stroke="none"><title>joint band</title></polygon>')
    parts.append(f'<polygon points="{_polygon(X, sy(lower_pw), sy(upper_pw))}" '
                 f'fill="#3182bd" fill-opacity="0.45" stroke="none"><title>pointwise band</title></polygon>')
    parts.append(f'<line x1="{sx(0):.2f}" y1="{sy(0):.2f}" x2="{sx(x_hi):.2f}" y2="{sy(0):.2f}" '
                 f'stroke="#444" stroke-dasharray="4,3"/>')
    if estimate_raw is not None:
        parts.append(f'<path d="{_path(X, sy(estimate_raw))}" fill="none" stroke="#636363" '
                     f'stroke-width="1" stroke-dasharray="2,2"/>')
    parts.append(f'<path d="{_path(X, sy(estimate))}" fill="none" stroke="black" stroke-width="2"/>')
    # axes
    x0, x1 = sx(0.0), sx(x_hi)
    y0, y1 = sy(y_lo), sy(y_hi)
    parts.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y0:.2f}" stroke="black"/>')
    parts.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x0:.2f}" y2="{y1:.2f}" stroke="black"/>')
    for h in range(int(x_hi) + 1):
        xx = sx(float(h))
        parts.append(f'<line x1="{xx:.2f}" y1="{y0:.2f}" x2="{xx:.2f}" y2="{y0 + 5:.2f}" stroke="black"/>')
        parts.append(f'<text x="{xx:.2f}" y="{y0 + 18:.2f}" text-anchor="middle">{h}</text>')
    for v in yt:
        yy = sy(v)
        parts.append(f'<line x1="{x0 - 5:.2f}" y1="{yy:.2f}" x2="{x0:.2f}" y2="{yy:.2f}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 8:.2f}" y="{yy + 4:.2f}" text-anchor="end">{v:g}</text>')
    parts.append(f'<text x="{(x0 + x1) / 2:.2f}" y="{_H - 10}" text-anchor="middle">'
                 f'Hours from sleep onset</text>')
    parts.append(f'<text x="18" y="{(y0 + y1) / 2:.2f}" text-anchor="middle" '
                 f'transform="rotate(-90 18 {(y0 + y1) / 2:.2f})">Effect</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_svgs(infer_dir, out_dir, alpha: float = 0.05) -> list[Path]:
    """Render one panel per ``infer_*.csv`` found in ``infer_dir``."""
    infer_dir, out = Path(infer_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pvals = {}
    ptab = infer_dir / "pvalues.csv"
    if ptab.exists():
        tab = read_table(ptab)
        pvals = {n: format_pvalue(p) for n, p in zip(tab["covariate"].tolist(), tab["p_value"])}
    tag = alpha_tag(alpha)
    paths = []
    for f in sorted(infer_dir.glob("infer_*.csv")):
        tab = read_table(f)
        key = f.stem[len("infer_"):]
        name = next((n for n in pvals if slug(n) == key), INTERCEPT if key == "intercept" else key)
        needed = [f"lower_pointwise_{tag}", f"upper_pointwise_{tag}", f"lower_joint_{tag}", f"upper_joint_{tag}"]
        if any(n not in tab for n in needed):
            raise KeyError(f"{f.name} has no bands at alpha={tag}")
        sub = f"p = {pvals[name]}" if name in pvals else ""
        sub = (sub + "; " if sub else "") + f"{100 * (1 - alpha):g}% pointwise (dark) and joint (light) bands"
        svg = render_svg(name, tab["t_minutes"] / 60.0, tab["estimate"], *(tab[n] for n in needed),
                         estimate_raw=tab["estimate_raw"], subtitle=sub)
        path = out / f"{key}.svg"
        path.write_text(svg)
        paths.append(path)
    return paths
