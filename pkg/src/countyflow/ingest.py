"""Loading and validating OD trips, case counts and demographics."""
from __future__ import annotations

import dataclasses
import datetime as dt
import logging
import os
from typing import Iterable, Iterator

import numpy as np
import pandas as pd

from .core import AnalysisCalendar, FIPS_MAX, FIPS_MIN, fips_str

log = logging.getLogger(__name__)

TRIP_COLUMNS = ["date", "origin_fips", "destination_fips", "trips"]
CASE_COLUMNS = ["date", "fips", "cumulative_cases"]
DEMO_COLUMNS = [
    "fips",
    "population",
    "pct_age65",
    "pct_male",
    "pct_african_american",
    "median_income",
]

FATAL = "fatal"
WARNING = "warning"
INFO = "info"


@dataclasses.dataclass
class Issue:
    severity: str
    code: str
    message: str
    location: str = ""


@dataclasses.dataclass
class ValidationReport:
    issues: list = dataclasses.field(default_factory=list)
    counts: dict = dataclasses.field(default_factory=dict)

    def add(self, severity, code, message, location=""):
        self.issues.append(Issue(severity, code, message, location))

    @property
    def fatal(self) -> list:
        return [i for i in self.issues if i.severity == FATAL]

    @property
    def warnings(self) -> list:
        return [i for i in self.issues if i.severity == WARNING]

    @property
    def ok(self) -> bool:
        return not self.fatal

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "fatal": [dataclasses.asdict(i) for i in self.fatal],
            "warnings": [dataclasses.asdict(i) for i in self.warnings],
            "info": [dataclasses.asdict(i) for i in self.issues if i.severity == INFO],
            "counts": self.counts,
        }


class IngestError(Exception):
    """Raised when a load produced fatal issues; carries the report."""

    def __init__(self, report: ValidationReport, dataset: str):
        self.report = report
        fatal = report.fatal
        head = "; ".join(f"{i.location}: {i.message}" for i in fatal[:5])
        super().__init__(f"{dataset}: {len(fatal)} fatal issue(s): {head}")


@dataclasses.dataclass(frozen=True)
class TripRecord:
    date: dt.date
    origin: int
    destination: int
    trips: float


@dataclasses.dataclass(frozen=True, eq=False)
class TripPanel:
    """Sparse daily county-to-county trips, sorted by (day, origin, destination).

    ``day`` holds indices into ``calendar.days``. A pair absent on a day means
    zero trips.
    """

    calendar: AnalysisCalendar
    day: np.ndarray
    origin: np.ndarray
    destination: np.ndarray
    trips: np.ndarray

    @classmethod
    def from_arrays(cls, calendar, day, origin, destination, trips) -> "TripPanel":
        day = np.asarray(day, dtype=np.int64)
        origin = np.asarray(origin, dtype=np.int64)
        destination = np.asarray(destination, dtype=np.int64)
        trips = np.asarray(trips, dtype=np.float64)
        n = len(day)
        if not (len(origin) == len(destination) == len(trips) == n):
            raise ValueError("record arrays differ in length")
        if n:
            if day.min() < 0 or day.max() >= len(calendar):
                raise ValueError("record day index outside calendar")
            if np.any(origin == destination):
                raise ValueError("self-loop records are not inter-county trips")
            if np.any(~np.isfinite(trips)) or np.any(trips < 0):
                raise ValueError("trips must be finite and non-negative")
        order = np.lexsort((destination, origin, day))
        day, origin, destination, trips = (a[order] for a in (day, origin, destination, trips))
        if n > 1:
            same = (
                (day[1:] == day[:-1])
                & (origin[1:] == origin[:-1])
                & (destination[1:] == destination[:-1])
            )
            if same.any():
                k = int(np.argmax(same))
                raise ValueError(
                    f"duplicate record {calendar.days[day[k]]} "
                    f"{fips_str(origin[k])}->{fips_str(destination[k])}"
                )
        for a in (day, origin, destination, trips):
            a.setflags(write=False)
        return cls(calendar, day, origin, destination, trips)

    @classmethod
    def from_records(cls, calendar, records: Iterable[TripRecord]) -> "TripPanel":
        recs = list(records)
        return cls.from_arrays(
            calendar,
            [calendar.index(r.date) for r in recs],
            [r.origin for r in recs],
            [r.destination for r in recs],
            [r.trips for r in recs],
        )

    def __len__(self) -> int:
        return len(self.trips)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TripPanel):
            return NotImplemented
        return (
            self.calendar.days == other.calendar.days
            and np.array_equal(self.day, other.day)
            and np.array_equal(self.origin, other.origin)
            and np.array_equal(self.destination, other.destination)
            and np.array_equal(self.trips, other.trips)
        )

    __hash__ = None

    @property
    def counties(self) -> np.ndarray:
        return np.union1d(self.origin, self.destination)

    def day_bounds(self, i: int) -> tuple:
        lo = int(np.searchsorted(self.day, i, side="left"))
        hi = int(np.searchsorted(self.day, i, side="right"))
        return lo, hi

    def records(self) -> Iterator[TripRecord]:
        days = self.calendar.days
        for k in range(len(self)):
            yield TripRecord(
                days[self.day[k]], int(self.origin[k]), int(self.destination[k]), float(self.trips[k])
            )

    def total(self) -> float:
        return float(self.trips.sum())

    def scaled(self, factor: float) -> "TripPanel":
        return TripPanel.from_arrays(
            self.calendar, self.day, self.origin, self.destination, self.trips * factor
        )


@dataclasses.dataclass(frozen=True, eq=False)
class CaseSeries:
    """Daily cumulative confirmed cases on a shared grid ``grid_start..end``.

    Rows follow ascending ``fips``. Dates before a county's first report (and
    counties absent from the source) read as zero; dates after ``end`` are
    outside coverage.
    """

    fips: np.ndarray
    grid_start: dt.date
    end: dt.date
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "_row", {int(f): k for k, f in enumerate(self.fips)})

    @classmethod
    def from_dict(cls, series: dict, grid_start: dt.date, end: dt.date | None = None) -> "CaseSeries":
        """Build from ``{fips: values}`` where each value list starts at ``grid_start``."""
        fips = np.array(sorted(series), dtype=np.int64)
        width = max((len(v) for v in series.values()), default=1)
        if end is None:
            end = grid_start + dt.timedelta(days=width - 1)
        n_days = (end - grid_start).days + 1
        values = np.zeros((len(fips), n_days))
        for k, f in enumerate(fips):
            v = np.asarray(series[int(f)], dtype=np.float64)
            values[k, : len(v)] = v[:n_days]
            if len(v) < n_days and len(v):
                values[k, len(v):] = v[-1]
        return cls(fips, grid_start, end, values)

    def covers(self, d: dt.date) -> bool:
        return d <= self.end

    def _col(self, d: dt.date) -> int:
        return (d - self.grid_start).days

    def cumulative(self, fips: int, d: dt.date) -> float:
        if d > self.end:
            raise ValueError(f"{d} beyond case data coverage ending {self.end}")
        k = self._row.get(int(fips))
        c = self._col(d)
        if k is None or c < 0:
            return 0.0
        return float(self.values[k, c])

    def cumulative_many(self, fips: np.ndarray, d: dt.date) -> np.ndarray:
        """Vectorized :meth:`cumulative` for many counties on one date."""
        if d > self.end:
            raise ValueError(f"{d} beyond case data coverage ending {self.end}")
        fips = np.asarray(fips, dtype=np.int64)
        out = np.zeros(len(fips))
        c = self._col(d)
        if c < 0 or not len(self.fips):
            return out
        pos = np.searchsorted(self.fips, fips)
        pos = np.clip(pos, 0, len(self.fips) - 1)
        hit = self.fips[pos] == fips
        out[hit] = self.values[pos[hit], c]
        return out

    def scaled(self, factor: float) -> "CaseSeries":
        return CaseSeries(self.fips, self.grid_start, self.end, self.values * factor)


@dataclasses.dataclass(frozen=True)
class DemographicsRecord:
    county: int
    population: int
    pct_age65: float
    pct_male: float
    pct_african_american: float
    median_income: float

    def __post_init__(self):
        if not self.population > 0:
            raise ValueError(f"{fips_str(self.county)}: population must be positive")
        for name in ("pct_age65", "pct_male", "pct_african_american"):
            v = getattr(self, name)
            if not 0 <= v <= 100:
                raise ValueError(f"{fips_str(self.county)}: {name}={v} outside [0, 100]")
        if not self.median_income > 0:
            raise ValueError(f"{fips_str(self.county)}: median_income must be positive")


class DemographicsTable:
    def __init__(self, records: Iterable[DemographicsRecord]):
        self._records = {}
        for r in records:
            if r.county in self._records:
                raise ValueError(f"duplicate county {fips_str(r.county)}")
            self._records[r.county] = r
        self.fips = np.array(sorted(self._records), dtype=np.int64)
        self.population = np.array(
            [self._records[f].population for f in self.fips], dtype=np.float64
        )

    def __len__(self):
        return len(self._records)

    def __contains__(self, fips) -> bool:
        return int(fips) in self._records

    def __getitem__(self, fips) -> DemographicsRecord:
        return self._records[int(fips)]

    def __iter__(self):
        return (self._records[int(f)] for f in self.fips)

    def populations_of(self, fips: np.ndarray) -> np.ndarray:
        """Population per county; NaN where the county has no record."""
        fips = np.asarray(fips, dtype=np.int64)
        out = np.full(len(fips), np.nan)
        if not len(self.fips):
            return out
        pos = np.clip(np.searchsorted(self.fips, fips), 0, len(self.fips) - 1)
        hit = self.fips[pos] == fips
        out[hit] = self.population[pos[hit]]
        return out


# --------------------------------------------------------------------------
# CSV loaders


def _read_csv(path, columns, report, dataset) -> pd.DataFrame | None:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        report.add(FATAL, "missing_file", f"{dataset} file not found", str(path))
        return None
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        report.add(FATAL, "parse_error", str(exc).strip(), str(path))
        return None
    except pd.errors.EmptyDataError:
        report.add(FATAL, "parse_error", "empty file", str(path))
        return None
    if list(frame.columns) != columns:
        report.add(
            FATAL, "bad_header", f"expected header {','.join(columns)}, got {','.join(frame.columns)}", str(path)
        )
        return None
    return frame


def _bad_rows(report, mask, path, code, message, frame, col):
    for idx in np.flatnonzero(np.asarray(mask))[:20]:
        report.add(FATAL, code, f"{message}: {frame[col].iloc[idx]!r}", f"{path}:{idx + 2}")
    extra = int(np.count_nonzero(mask)) - 20
    if extra > 0:
        report.add(FATAL, code, f"{extra} more rows with the same problem", str(path))


def _parse_dates(frame, col, report, path):
    parsed = pd.to_datetime(frame[col], format="%Y-%m-%d", errors="coerce")
    _bad_rows(report, parsed.isna(), path, "bad_date", "unparseable date", frame, col)
    return parsed


def _parse_fips(frame, col, report, path):
    s = frame[col].str.strip()
    num = pd.to_numeric(s.where(s.str.fullmatch(r"\d{1,5}")), errors="coerce")
    bad = num.isna() | (num < FIPS_MIN) | (num > FIPS_MAX)
    _bad_rows(report, bad, path, "bad_fips", "invalid FIPS code", frame, col)
    return num


def _to_float(text: str) -> float:
    if "_" in text:
        return np.nan
    try:
        return float(text)
    except ValueError:
        return np.nan


def _parse_number(frame, col, report, path):
    # float() rather than pd.to_numeric: the latter is not exact for every repr
    num = frame[col].str.strip().map(_to_float).astype(np.float64)
    bad = num.isna() | ~np.isfinite(num.fillna(0))
    _bad_rows(report, bad, path, "bad_number", f"invalid {col}", frame, col)
    return num


def load_trips(paths, calendar: AnalysisCalendar, report: ValidationReport | None = None) -> TripPanel:
    """Read OD CSV files into a :class:`TripPanel` restricted to ``calendar``.

    Rows on weekends or holidays are dropped and counted. Malformed rows,
    self-loops, negative trips and duplicate (date, origin, destination)
    keys are fatal; the collected issues are raised as :class:`IngestError`.
    """
    report = report if report is not None else ValidationReport()
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    counts = {"read": 0, "accepted": 0, "rejected": 0, "excluded_days": 0, "files": len(paths)}
    parts = []
    n_fatal = len(report.fatal)
    for path in paths:
        frame = _read_csv(path, TRIP_COLUMNS, report, "trips")
        if frame is None:
            continue
        counts["read"] += len(frame)
        dates = _parse_dates(frame, "date", report, path)
        origin = _parse_fips(frame, "origin_fips", report, path)
        dest = _parse_fips(frame, "destination_fips", report, path)
        trips = _parse_number(frame, "trips", report, path)
        neg = trips < 0
        _bad_rows(report, neg, path, "negative_trips", "negative trips", frame, "trips")
        loop = origin.notna() & (origin == dest)
        _bad_rows(report, loop, path, "self_loop", "origin equals destination", frame, "origin_fips")
        bad = dates.isna() | origin.isna() | dest.isna() | trips.isna() | neg | loop
        counts["rejected"] += int(bad.sum())
        ok = ~bad
        part = pd.DataFrame(
            {
                "date": dates[ok].dt.date,
                "origin": origin[ok].astype(np.int64),
                "destination": dest[ok].astype(np.int64),
                "trips": trips[ok].astype(np.float64),
                "line": (frame.index[ok] + 2),
                "path": str(path),
            }
        )
        parts.append(part)
    frame = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(
        columns=["date", "origin", "destination", "trips", "line", "path"]
    )
    on_cal = frame["date"].map(lambda d: d in calendar).astype(bool) if len(frame) else pd.Series([], dtype=bool)
    n_off = int((~on_cal).sum())
    if n_off:
        counts["excluded_days"] = n_off
        report.add(INFO, "excluded_day", f"{n_off} rows on weekends/holidays or outside the calendar dropped")
    frame = frame[on_cal]
    dup = frame.duplicated(["date", "origin", "destination"], keep=False)
    if dup.any():
        for _, row in frame[dup].head(20).iterrows():
            report.add(
                FATAL,
                "duplicate",
                f"duplicate record {row['date']} {fips_str(row['origin'])}->{fips_str(row['destination'])}",
                f"{row['path']}:{row['line']}",
            )
    counts["accepted"] = len(frame)
    report.counts["trips"] = counts
    if len(report.fatal) > n_fatal:
        raise IngestError(report, "trips")
    return TripPanel.from_arrays(
        calendar,
        [calendar.index(d) for d in frame["date"]],
        frame["origin"].to_numpy(),
        frame["destination"].to_numpy(),
        frame["trips"].to_numpy(),
    )


def load_cases(path, report: ValidationReport | None = None, end: dt.date | None = None) -> CaseSeries:
    """Read long-form cumulative cases onto a contiguous daily grid.

    Interior gaps are forward filled and every county is extended to the
    last date in the file (or ``end`` when later). Downward revisions are
    kept with a warning.
    """
    report = report if report is not None else ValidationReport()
    n_fatal = len(report.fatal)
    counts = {"read": 0, "accepted": 0, "rejected": 0, "filled": 0}
    report.counts["cases"] = counts
    frame = _read_csv(path, CASE_COLUMNS, report, "cases")
    if frame is None:
        raise IngestError(report, "cases")
    counts["read"] = len(frame)
    dates = _parse_dates(frame, "date", report, path)
    fips = _parse_fips(frame, "fips", report, path)
    cum = _parse_number(frame, "cumulative_cases", report, path)
    neg = cum < 0
    _bad_rows(report, neg, path, "negative_cases", "negative cumulative count", frame, "cumulative_cases")
    good = pd.DataFrame({"date": dates, "fips": fips, "cum": cum, "line": frame.index + 2})
    dup = good.duplicated(["date", "fips"], keep=False) & good["fips"].notna() & good["date"].notna()
    for _, row in good[dup].head(20).iterrows():
        report.add(FATAL, "duplicate", f"duplicate case row for {fips_str(int(row['fips']))}", f"{path}:{row['line']}")
    if len(report.fatal) > n_fatal:
        counts["rejected"] = int((dates.isna() | fips.isna() | cum.isna() | neg | dup).sum())
        raise IngestError(report, "cases")
    counts["accepted"] = len(good)
    if not len(good):
        start = end or dt.date(2020, 1, 1)
        return CaseSeries(np.zeros(0, dtype=np.int64), start, end or start, np.zeros((0, 1)))
    good["fips"] = good["fips"].astype(np.int64)
    good["date"] = good["date"].dt.date
    grid_start = min(good["date"])
    grid_end = max(good["date"])
    if end is not None and end > grid_end:
        grid_end = end
    n_days = (grid_end - grid_start).days + 1
    ids = np.array(sorted(good["fips"].unique()), dtype=np.int64)
    values = np.zeros((len(ids), n_days))
    for k, (f, grp) in enumerate(good.sort_values(["fips", "date"]).groupby("fips", sort=True)):
        cols = np.array([(d - grid_start).days for d in grp["date"]])
        vals = grp["cum"].to_numpy(dtype=np.float64)
        row = np.full(n_days, np.nan)
        row[cols] = vals
        row[: cols[0]] = 0.0
        gaps = int(np.isnan(row[cols[0]:]).sum())
        counts["filled"] += gaps
        row = pd.Series(row).ffill().to_numpy()
        values[k] = row
        if np.any(np.diff(vals) < 0):
            report.add(WARNING, "decreasing_cumulative", "cumulative count decreases", fips_str(int(f)))
    if counts["filled"]:
        report.add(INFO, "forward_filled", f"{counts['filled']} missing county-days forward filled")
    return CaseSeries(ids, grid_start, grid_end, values)


def load_demographics(path, report: ValidationReport | None = None) -> DemographicsTable:
    report = report if report is not None else ValidationReport()
    n_fatal = len(report.fatal)
    counts = {"read": 0, "accepted": 0, "rejected": 0}
    report.counts["demographics"] = counts
    frame = _read_csv(path, DEMO_COLUMNS, report, "demographics")
    if frame is None:
        raise IngestError(report, "demographics")
    counts["read"] = len(frame)
    fips = _parse_fips(frame, "fips", report, path)
    nums = {c: _parse_number(frame, c, report, path) for c in DEMO_COLUMNS[1:]}
    pop = nums["population"]
    _bad_rows(report, pop <= 0, path, "bad_population", "population must be positive", frame, "population")
    _bad_rows(report, pop.notna() & (pop != pop.round()), path, "bad_population", "population must be an integer", frame, "population")
    for c in ("pct_age65", "pct_male", "pct_african_american"):
        _bad_rows(report, (nums[c] < 0) | (nums[c] > 100), path, "bad_percent", f"{c} outside [0, 100]", frame, c)
    _bad_rows(report, nums["median_income"] <= 0, path, "bad_income", "median_income must be positive", frame, "median_income")
    dup = fips.duplicated(keep=False) & fips.notna()
    _bad_rows(report, dup, path, "duplicate", "duplicate county", frame, "fips")
    if len(report.fatal) > n_fatal:
        counts["rejected"] = len(frame)
        raise IngestError(report, "demographics")
    records = [
        DemographicsRecord(
            int(fips.iloc[k]),
            int(pop.iloc[k]),
            float(nums["pct_age65"].iloc[k]),
            float(nums["pct_male"].iloc[k]),
            float(nums["pct_african_american"].iloc[k]),
            float(nums["median_income"].iloc[k]),
        )
        for k in range(len(frame))
    ]
    counts["accepted"] = len(records)
    return DemographicsTable(records)


def cross_validate(
    panel: TripPanel,
    cases: CaseSeries,
    demo: DemographicsTable,
    report: ValidationReport | None = None,
    max_missing_share: float = 0.5,
) -> ValidationReport:
    """Check that trip counties are covered by demographics and case data."""
    report = report if report is not None else ValidationReport()
    counties = panel.counties
    no_demo = [int(f) for f in counties if f not in demo]
    case_ids = set(int(f) for f in cases.fips)
    no_cases = [int(f) for f in counties if int(f) not in case_ids]
    if no_demo:
        report.add(
            WARNING,
            "missing_demographics",
            f"{len(no_demo)} trip counties lack demographics and are excluded from risk computations: "
            + " ".join(fips_str(f) for f in no_demo[:50]),
        )
    if no_cases:
        report.add(
            WARNING,
            "missing_cases",
            f"{len(no_cases)} trip counties lack case data (read as zero cases): "
            + " ".join(fips_str(f) for f in no_cases[:50]),
        )
    total = panel.total()
    share = 0.0
    if total > 0 and no_demo:
        share = float(panel.trips[np.isin(panel.origin, no_demo)].sum()) / total
        if share > max_missing_share:
            report.add(
                FATAL,
                "demographics_coverage",
                f"{share:.1%} of trip volume originates in counties without demographics",
            )
    report.counts["cross"] = {
        "counties_without_demographics": len(no_demo),
        "counties_without_cases": len(no_cases),
        "volume_share_without_demographics": round(share, 6),
    }
    return report


# --------------------------------------------------------------------------
# CSV writers (the inverse of the loaders)


def fmt_num(x) -> str:
    """Render a number for CSV output; integral values print without a decimal part."""
    if x is None:
        return ""
    x = float(x)
    if not np.isfinite(x):
        return ""
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def write_trips(panel: TripPanel, path) -> None:
    days = panel.calendar.days
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(TRIP_COLUMNS) + "\n")
        for d, o, j, t in zip(panel.day, panel.origin, panel.destination, panel.trips):
            fh.write(f"{days[d].isoformat()},{fips_str(o)},{fips_str(j)},{fmt_num(t)}\n")


def write_cases(cases: CaseSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CASE_COLUMNS) + "\n")
        n_days = cases.values.shape[1]
        for k, f in enumerate(cases.fips):
            for c in range(n_days):
                d = cases.grid_start + dt.timedelta(days=c)
                fh.write(f"{d.isoformat()},{fips_str(f)},{fmt_num(cases.values[k, c])}\n")


def write_demographics(demo: DemographicsTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(DEMO_COLUMNS) + "\n")
        for r in demo:
            fh.write(
                f"{fips_str(r.county)},{r.population},{fmt_num(r.pct_age65)},{fmt_num(r.pct_male)},"
                f"{fmt_num(r.pct_african_american)},{fmt_num(r.median_income)}\n"
            )
