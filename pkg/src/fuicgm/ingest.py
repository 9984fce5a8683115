"""Turn raw CGM readings and sleep periods into a functional dataset.

Protocol:
    1. drop sleep periods shorter than 5 hours (exactly 5 hours is kept);
    2. linearly interpolate each subject's glucose at ``onset + t_k`` for the
       grid offsets ``t_k``, rejecting the period if a grid point is not
       bracketed by readings at most ``max_gap`` minutes apart or the record
       ends before the last grid point;
    3. drop subjects with fewer than 5 accepted periods or no covariates.

Input formats (CSV with header):
    cgm.csv        subject_id,timestamp,glucose
    sleep.csv      subject_id,onset,offset
    covariates.csv subject_id,<name1>,...,<nameR>

Timestamps are epoch seconds or ISO-8601 strings; naive ISO times are read as
UTC. The two may be mixed within a file.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .data import FunctionalDataset, TimeGrid

MIN_PERIOD_HOURS = 5.0
MIN_PERIODS = 5
MAX_GAP_MINUTES = 30.0

REJECT_NO_READINGS = "no_readings"
REJECT_STARTS_LATE = "starts_late"
REJECT_ENDS_EARLY = "ends_early"
REJECT_GAP = "gap"


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class CgmRecord:
    subject_id: str
    timestamp: float
    glucose: float


@dataclass(frozen=True)
class SleepPeriodRecord:
    subject_id: str
    onset: float
    offset: float

    @property
    def hours(self) -> float:
        return (self.offset - self.onset) / 3600.0


@dataclass
class IngestReport:
    """What ingestion kept and why it dropped the rest."""

    subjects_kept: list[str] = field(default_factory=list)
    subjects_dropped: dict[str, str] = field(default_factory=dict)
    periods_total: int = 0
    periods_short: int = 0
    periods_kept: int = 0
    periods_rejected: Counter = field(default_factory=Counter)
    readings_invalid: int = 0
    readings_duplicate: int = 0

    def to_dict(self) -> dict:
        return {
            "subjects_kept": len(self.subjects_kept),
            "subjects_dropped": dict(sorted(self.subjects_dropped.items())),
            "periods_total": self.periods_total,
            "periods_short": self.periods_short,
            "periods_kept": self.periods_kept,
            "periods_rejected": dict(sorted(self.periods_rejected.items())),
            "readings_invalid": self.readings_invalid,
            "readings_duplicate": self.readings_duplicate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [
            f"subjects kept: {len(self.subjects_kept)}",
            f"subjects dropped: {len(self.subjects_dropped)}",
        ]
        reasons = Counter(self.subjects_dropped.values())
        for reason, n in sorted(reasons.items()):
            lines.append(f"  {reason}: {n}")
        lines += [
            f"sleep periods read: {self.periods_total}",
            f"  shorter than {MIN_PERIOD_HOURS:g} h: {self.periods_short}",
        ]
        for reason, n in sorted(self.periods_rejected.items()):
            lines.append(f"  rejected ({reason}): {n}")
        lines.append(f"  kept: {self.periods_kept}")
        lines.append(f"invalid readings dropped: {self.readings_invalid}")
        lines.append(f"duplicate timestamps merged: {self.readings_duplicate}")
        return "\n".join(lines) + "\n"


def parse_timestamp(value: str) -> float:
    """Epoch seconds from an epoch number or an ISO-8601 string."""
    s = str(value).strip()
    try:
        return float(s)
    except ValueError:
        pass
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _rows(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestError(f"{path}: empty file")
        yield reader.fieldnames
        yield from reader


def _require(fields, needed, path):
    missing = [f for f in needed if f not in fields]
    if missing:
        raise IngestError(f"{path}: missing column(s) {missing}")


def read_cgm_csv(path) -> list[CgmRecord]:
    it = _rows(path)
    _require(next(it), ["subject_id", "timestamp", "glucose"], path)
    out = []
    for row in it:
        g = row["glucose"].strip()
        out.append(CgmRecord(row["subject_id"].strip(), parse_timestamp(row["timestamp"]),
                             float(g) if g else math.nan))
    return out


def read_sleep_csv(path) -> list[SleepPeriodRecord]:
    it = _rows(path)
    _require(next(it), ["subject_id", "onset", "offset"], path)
    out = []
    for row in it:
        rec = SleepPeriodRecord(row["subject_id"].strip(), parse_timestamp(row["onset"]),
                                parse_timestamp(row["offset"]))
        if rec.offset <= rec.onset:
            raise IngestError(f"{path}: period for {rec.subject_id} ends before it starts")
        out.append(rec)
    return out


def read_covariates_csv(path) -> tuple[tuple[str, ...], dict[str, np.ndarray]]:
    it = _rows(path)
    fields = next(it)
    _require(fields, ["subject_id"], path)
    names = tuple(f for f in fields if f != "subject_id")
    table = {}
    for row in it:
        sid = row["subject_id"].strip()
        if sid in table:
            raise IngestError(f"{path}: duplicate covariate row for {sid}")
        table[sid] = np.array([float(row[n]) for n in names])
    return names, table


def filter_periods(periods, min_hours: float = MIN_PERIOD_HOURS) -> list[SleepPeriodRecord]:
    """Keep periods lasting at least ``min_hours``."""
    return [p for p in periods if p.offset - p.onset >= min_hours * 3600.0]


def _subject_series(readings, report: IngestReport | None = None, require_positive: bool = True):
    """Sorted, de-duplicated ``(times, values)`` arrays per subject."""
    by_subject = defaultdict(list)
    for r in readings:
        ok = math.isfinite(r.glucose) and math.isfinite(r.timestamp)
        if ok and require_positive and r.glucose <= 0:
            ok = False
        if not ok:
            if report is not None:
                report.readings_invalid += 1
            continue
        by_subject[r.subject_id].append((r.timestamp, r.glucose))
    out = {}
    for sid, pairs in by_subject.items():
        pairs.sort()
        t = np.array([p[0] for p in pairs])
        v = np.array([p[1] for p in pairs])
        uniq, start = np.unique(t, return_index=True)
        if uniq.size != t.size:
            if report is not None:
                report.readings_duplicate += t.size - uniq.size
            v = np.add.reduceat(v, start) / np.diff(np.append(start, t.size))
            t = uniq
        out[sid] = (t, v)
    return out


def extract_window(times: np.ndarray, values: np.ndarray, onset: float, grid: TimeGrid,
                   max_gap_minutes: float = MAX_GAP_MINUTES):
    """Interpolate one subject's readings at ``onset + t_k``.

    Returns ``(curve, None)`` on success or ``(None, reason)`` on rejection.
    """
    if times.size == 0:
        return None, REJECT_NO_READINGS
    targets = onset + 60.0 * grid.points
    if times[0] > targets[0]:
        return None, REJECT_STARTS_LATE
    if times[-1] < targets[-1]:
        return None, REJECT_ENDS_EARLY
    right = np.searchsorted(times, targets, side="left")
    exact = times[right] == targets
    left = np.where(exact, right, right - 1)
    gaps = times[right] - times[left]
    if np.any(gaps > 60.0 * max_gap_minutes):
        return None, REJECT_GAP
    return np.interp(targets, times, values), None


def filter_subjects(curves: dict, covariate_table: dict, names, grid: TimeGrid,
                    report: IngestReport, min_periods: int = MIN_PERIODS) -> FunctionalDataset:
    """Assemble the dataset from accepted curves, dropping under-observed subjects.

    Args:
        curves: subject id -> list of ``(onset, curve)`` accepted periods.
        covariate_table: subject id -> covariate vector.
    """
    ids = sorted(set(curves) | set(covariate_table))
    rows, subj, per, cov, kept = [], [], [], [], []
    for sid in ids:
        periods = sorted(curves.get(sid, []), key=lambda p: p[0])
        if sid not in covariate_table:
            report.subjects_dropped[sid] = "no_covariates"
            continue
        if not periods:
            report.subjects_dropped[sid] = "no_periods"
            continue
        if len(periods) < min_periods:
            report.subjects_dropped[sid] = "too_few_periods"
            continue
        i = len(kept)
        kept.append(sid)
        cov.append(covariate_table[sid])
        for j, (_, curve) in enumerate(periods):
            rows.append(curve)
            subj.append(i)
            per.append(j)
    report.subjects_kept = kept
    report.periods_kept = len(rows)
    if not kept:
        raise IngestError("no subjects remain after filtering")
    return FunctionalDataset(
        responses=np.vstack(rows),
        subject_of_row=np.array(subj),
        period_of_row=np.array(per),
        covariates=np.vstack(cov) if names else np.empty((len(kept), 0)),
        covariate_names=tuple(names),
        grid=grid,
        subject_ids=tuple(kept),
    )


def ingest(
    readings,
    periods,
    covariate_names,
    covariate_table,
    grid: TimeGrid | None = None,
    min_hours: float = MIN_PERIOD_HOURS,
    min_periods: int = MIN_PERIODS,
    max_gap_minutes: float = MAX_GAP_MINUTES,
    require_positive: bool = True,
) -> tuple[FunctionalDataset, IngestReport]:
    """Run the full protocol on in-memory records."""
    grid = grid or TimeGrid.default()
    report = IngestReport()
    series = _subject_series(readings, report, require_positive)
    periods = sorted(set(periods), key=lambda p: (p.subject_id, p.onset, p.offset))
    report.periods_total = len(periods)
    long_enough = filter_periods(periods, min_hours)
    report.periods_short = len(periods) - len(long_enough)
    curves = defaultdict(list)
    empty = (np.empty(0), np.empty(0))
    for p in long_enough:
        t, v = series.get(p.subject_id, empty)
        curve, reason = extract_window(t, v, p.onset, grid, max_gap_minutes)
        if reason is not None:
            report.periods_rejected[reason] += 1
            curves.setdefault(p.subject_id, [])
        else:
            curves[p.subject_id].append((p.onset, curve))
    for p in periods:
        curves.setdefault(p.subject_id, [])
    dataset = filter_subjects(curves, covariate_table, covariate_names, grid, report, min_periods)
    return dataset, report


def ingest_files(cgm_path, sleep_path, covariates_path, grid: TimeGrid | None = None,
                 covariates: list[str] | None = None, **kwargs):
    """Read the three CSV inputs and ingest them.

    ``covariates`` optionally selects (and orders) a subset of covariate columns;
    an empty list gives an intercept-only dataset.
    """
    names, table = read_covariates_csv(covariates_path)
    if covariates is not None:
        missing = [c for c in covariates if c not in names]
        if missing:
            raise IngestError(f"unknown covariate(s) {missing}; available: {list(names)}")
        idx = [names.index(c) for c in covariates]
        table = {k: v[idx] for k, v in table.items()}
        names = tuple(covariates)
    return ingest(read_cgm_csv(cgm_path), read_sleep_csv(sleep_path), names, table, grid, **kwargs)
