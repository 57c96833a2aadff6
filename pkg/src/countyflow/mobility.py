"""Trend, baseline, percent-change and region flow metrics over a TripPanel."""
from __future__ import annotations

import dataclasses
import datetime as dt

import numpy as np

from .core import AnalysisCalendar, DateRange, OutOfRangeError, RegionSpec, week_start
from .ingest import TripPanel

TOTAL_US_COUNTIES = 3143
REGION_METRICS = ("inflow", "outflow", "n_origins", "n_destinations")


class InvalidWindowError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


@dataclasses.dataclass(frozen=True, eq=False)
class DailySeries:
    dates: tuple
    values: np.ndarray

    def __len__(self):
        return len(self.dates)

    def as_dict(self) -> dict:
        return dict(zip(self.dates, self.values.tolist()))


@dataclasses.dataclass(frozen=True, eq=False)
class BaselineTable:
    fips: np.ndarray
    baseline: np.ndarray
    window: DateRange

    def as_dict(self) -> dict:
        return {int(f): float(b) for f, b in zip(self.fips, self.baseline)}


@dataclasses.dataclass(frozen=True)
class RegionFlowMetrics:
    date: dt.date
    inflow: float
    outflow: float
    n_origins: int
    n_destinations: int


def national_inflow_series(panel: TripPanel) -> DailySeries:
    cal = panel.calendar
    totals = np.bincount(panel.day, weights=panel.trips, minlength=len(cal)).astype(np.float64)
    return DailySeries(cal.days, totals)


def moving_average(s: DailySeries, window: int = 3) -> DailySeries:
    """Centered mean over series positions; the window shrinks at the edges."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    half = window // 2
    v = np.asarray(s.values, dtype=np.float64)
    n = len(v)
    csum = np.concatenate(([0.0], np.cumsum(v)))
    idx = np.arange(n)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, n)
    return DailySeries(s.dates, (csum[hi] - csum[lo]) / (hi - lo))


def county_inflow_matrix(panel: TripPanel, counties: np.ndarray | None = None) -> tuple:
    """Daily total inflow per county as a (n_days, n_counties) array."""
    if counties is None:
        counties = panel.counties
    n_days = len(panel.calendar)
    col = np.searchsorted(counties, panel.destination)
    flat = panel.day * len(counties) + col
    mat = np.bincount(flat, weights=panel.trips, minlength=n_days * len(counties))
    return counties, mat.reshape(n_days, len(counties))


def _window_rows(cal: AnalysisCalendar, window: DateRange) -> np.ndarray:
    rows = np.array([i for i, d in enumerate(cal.days) if d in window], dtype=np.int64)
    if not len(rows):
        raise InvalidWindowError(f"window {window.start}..{window.end} contains no analysis days")
    return rows


def county_baselines(panel: TripPanel, window: DateRange) -> BaselineTable:
    rows = _window_rows(panel.calendar, window)
    counties, mat = county_inflow_matrix(panel)
    return BaselineTable(counties, mat[rows].mean(axis=0), window)


def weekly_pct_change(panel: TripPanel, week_of: dt.date, baselines: BaselineTable) -> dict:
    """Percent change of mean daily inflow in the week of ``week_of`` vs baseline.

    Counties with a zero baseline map to None.
    """
    monday = week_start(week_of)
    rows = _window_rows(panel.calendar, DateRange(monday, monday + dt.timedelta(days=6)))
    _, mat = county_inflow_matrix(panel, baselines.fips)
    week_mean = mat[rows].mean(axis=0)
    out = {}
    for f, base, m in zip(baselines.fips, baselines.baseline, week_mean):
        out[int(f)] = None if base == 0 else 100.0 * (m - base) / base
    return out


def share_with_increase(changes: dict) -> float:
    defined = [v for v in changes.values() if v is not None]
    if not defined:
        raise DegenerateInputError("no defined percent changes")
    return sum(1 for v in defined if v > 0) / len(defined)


def _day_slice(panel: TripPanel, d: dt.date) -> slice:
    if d not in panel.calendar:
        raise OutOfRangeError(f"{d} is not an analysis day")
    lo, hi = panel.day_bounds(panel.calendar.index(d))
    return slice(lo, hi)


def region_flow_metrics(panel: TripPanel, region: RegionSpec, d: dt.date) -> RegionFlowMetrics:
    sl = _day_slice(panel, d)
    members = np.array(sorted(region.members))
    o, j, t = panel.origin[sl], panel.destination[sl], panel.trips[sl]
    o_in, j_in = np.isin(o, members), np.isin(j, members)
    inbound = ~o_in & j_in
    outbound = o_in & ~j_in
    pos = t > 0
    return RegionFlowMetrics(
        d,
        float(t[inbound].sum()),
        float(t[outbound].sum()),
        len(np.unique(o[inbound & pos])),
        len(np.unique(j[outbound & pos])),
    )


def _unit_metrics(panel: TripPanel, region: RegionSpec, d: dt.date) -> dict:
    """Metric values for the region (key None) and every other county that day."""
    sl = _day_slice(panel, d)
    members = np.array(sorted(region.members))
    counties = np.setdiff1d(panel.counties, members)
    o, j, t = panel.origin[sl], panel.destination[sl], panel.trips[sl]
    n = len(counties)
    pos = (t > 0).astype(np.float64)
    j_ext = ~np.isin(j, members)
    o_ext = ~np.isin(o, members)
    jc = np.searchsorted(counties, j[j_ext])
    oc = np.searchsorted(counties, o[o_ext])
    per_county = {
        "inflow": np.bincount(jc, weights=t[j_ext], minlength=n),
        "outflow": np.bincount(oc, weights=t[o_ext], minlength=n),
        "n_origins": np.bincount(jc, weights=pos[j_ext], minlength=n),
        "n_destinations": np.bincount(oc, weights=pos[o_ext], minlength=n),
    }
    reg = region_flow_metrics(panel, region, d)
    return {m: (float(getattr(reg, m)), per_county[m]) for m in REGION_METRICS}


def _competition_rank(value: float, others: np.ndarray) -> int:
    return 1 + int(np.count_nonzero(others > value))


def region_rank(panel: TripPanel, region: RegionSpec, metric: str, d: dt.date) -> int:
    """Descending competition rank of the region unit among all other counties."""
    if metric not in REGION_METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    value, others = _unit_metrics(panel, region, d)[metric]
    return _competition_rank(value, others)


def region_daily(panel: TripPanel, region: RegionSpec) -> list:
    """(RegionFlowMetrics, {metric: rank}) for every analysis day."""
    out = []
    for d in panel.calendar.days:
        units = _unit_metrics(panel, region, d)
        ranks = {m: _competition_rank(v, others) for m, (v, others) in units.items()}
        out.append((region_flow_metrics(panel, region, d), ranks))
    return out


def region_outflow_by_destination(panel: TripPanel, region: RegionSpec, window: DateRange | None = None) -> tuple:
    """Boolean mask of region-to-outside records, optionally limited to a window."""
    members = np.array(sorted(region.members))
    mask = np.isin(panel.origin, members) & ~np.isin(panel.destination, members)
    if window is not None:
        days = np.array([d in window for d in panel.calendar.days], dtype=bool)
        mask &= days[panel.day]
    return mask


def top_destinations(panel: TripPanel, region: RegionSpec, window: DateRange, k: int) -> list:
    """Top-k external destinations by total trips from the region; ties by FIPS."""
    if k < 1:
        raise ValueError("k must be >= 1")
    mask = region_outflow_by_destination(panel, region, window)
    dest, inv = np.unique(panel.destination[mask], return_inverse=True)
    totals = np.bincount(inv, weights=panel.trips[mask], minlength=len(dest))
    keep = totals > 0
    dest, totals = dest[keep], totals[keep]
    order = np.lexsort((dest, -totals))
    return [(int(dest[i]), float(totals[i])) for i in order[:k]]


def destination_spread(
    panel: TripPanel, region: RegionSpec, window: DateRange, total_counties: int = TOTAL_US_COUNTIES
) -> tuple:
    """Mean daily count of external destinations reached, and its share of all counties."""
    rows = _window_rows(panel.calendar, window)
    mask = region_outflow_by_destination(panel, region) & (panel.trips > 0)
    counts = []
    for i in rows:
        lo, hi = panel.day_bounds(int(i))
        counts.append(len(np.unique(panel.destination[lo:hi][mask[lo:hi]])))
    mean = float(np.mean(counts))
    return mean, mean / total_counties


def calendar_weeks(cal: AnalysisCalendar) -> list:
    """Mondays of every week holding at least one analysis day."""
    return sorted({week_start(d) for d in cal.days})
