"""Case weights, imported (external) risk and lagged outbreak severity."""
from __future__ import annotations

import dataclasses
import datetime as dt

import numpy as np

from .core import DateRange, LagSpec, OutOfRangeError, fips_str
from .ingest import CaseSeries, DemographicsTable, TripPanel

DAILY_SYNCHRONOUS = "daily_synchronous"
PERIOD_END = "period_end"
WEIGHTINGS = (DAILY_SYNCHRONOUS, PERIOD_END)
# packs (origin, destination) pairs into one integer key
FIPS_KEY = 100_000


class MissingDemographicsError(KeyError):
    pass


class EmptyWindowError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class CaseWeight:
    county: int
    date: dt.date
    w: float


@dataclasses.dataclass(frozen=True)
class ExternalRisk:
    county: int
    window: DateRange
    er: float
    n_origins: int


@dataclasses.dataclass(frozen=True)
class InternalCovariates:
    county: int
    age65: float
    male: float
    african_american: float
    income: float


@dataclasses.dataclass(frozen=True)
class SeveritySample:
    county: int
    anchor_date: dt.date
    lag: LagSpec
    severity: float | None
    available: bool


def _population(demo: DemographicsTable, county: int) -> float:
    if county not in demo:
        raise MissingDemographicsError(f"no demographics for county {fips_str(county)}")
    return float(demo[county].population)


def case_weight(cases: CaseSeries, demo: DemographicsTable, i: int, d: dt.date) -> CaseWeight:
    """Cumulative cases per 1000 residents of county ``i`` on ``d``."""
    pop = _population(demo, i)
    return CaseWeight(i, d, 1000.0 * cases.cumulative(i, d) / pop)


def internal_covariates(demo: DemographicsTable, j: int) -> InternalCovariates:
    _population(demo, j)
    r = demo[j]
    return InternalCovariates(j, r.pct_age65, r.pct_male, r.pct_african_american, r.median_income)


def external_risk_day(
    panel: TripPanel,
    cases: CaseSeries,
    demo: DemographicsTable,
    j: int,
    d: dt.date,
    diagnostics: dict | None = None,
) -> float:
    """Case-weighted inbound trips into ``j`` on analysis day ``d``.

    Origins without demographics contribute nothing; they are tallied in
    ``diagnostics["skipped_origins"]`` when a dict is passed.
    """
    if d not in panel.calendar:
        raise OutOfRangeError(f"{d} is not an analysis day")
    lo, hi = panel.day_bounds(panel.calendar.index(d))
    into = np.flatnonzero(panel.destination[lo:hi] == j) + lo
    total = 0.0
    skipped = 0
    # records are sorted by origin within a day
    for k in into:
        i = int(panel.origin[k])
        if i not in demo:
            skipped += 1
            continue
        total += case_weight(cases, demo, i, d).w * float(panel.trips[k])
    if diagnostics is not None:
        diagnostics["skipped_origins"] = diagnostics.get("skipped_origins", 0) + skipped
    return total


@dataclasses.dataclass(frozen=True, eq=False)
class RiskGrid:
    """External risk of every destination county over one window."""

    window: DateRange
    fips: np.ndarray
    er: np.ndarray
    n_origins: np.ndarray
    skipped_records: int

    def lookup(self, j: int) -> tuple:
        k = np.searchsorted(self.fips, j)
        if k < len(self.fips) and self.fips[k] == j:
            return float(self.er[k]), int(self.n_origins[k])
        return 0.0, 0


def external_risk_grid(
    panel: TripPanel,
    cases: CaseSeries,
    demo: DemographicsTable,
    window: DateRange,
    weighting: str = DAILY_SYNCHRONOUS,
) -> RiskGrid:
    """Vectorized :func:`external_risk_period` for all destinations at once.

    Daily sums run over origins in ascending FIPS order and the period total
    adds days in calendar order, so results do not depend on evaluation order.
    """
    if weighting not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {weighting!r}")
    cal = panel.calendar
    day_ids = [i for i, d in enumerate(cal.days) if d in window]
    if not day_ids:
        raise EmptyWindowError(f"window {window.start}..{window.end} contains no analysis days")
    dest_ids = panel.counties
    n = len(dest_ids)
    er = np.zeros(n)
    positive = np.zeros(0, dtype=np.int64)
    skipped = 0
    if weighting == PERIOD_END:
        end_weights = _weights_on(cases, demo, dest_ids, window.end)
    for i in day_ids:
        lo, hi = panel.day_bounds(i)
        o, t = panel.origin[lo:hi], panel.trips[lo:hi]
        col = np.searchsorted(dest_ids, panel.destination[lo:hi])
        if weighting == DAILY_SYNCHRONOUS:
            w = _weights_on(cases, demo, dest_ids, cal.days[i])
        else:
            w = end_weights
        wo = w[np.searchsorted(dest_ids, o)]
        missing = np.isnan(wo)
        skipped += int(missing.sum())
        contrib = np.where(missing, 0.0, wo) * t
        er = er + np.bincount(col, weights=contrib, minlength=n)
        hit = contrib > 0
        positive = np.concatenate([positive, o[hit] * FIPS_KEY + dest_ids[col[hit]]])
    pairs = np.unique(positive)
    n_orig = np.bincount(np.searchsorted(dest_ids, pairs % FIPS_KEY), minlength=n)
    return RiskGrid(window, dest_ids, er, n_orig, skipped)


def _weights_on(cases, demo, fips, d) -> np.ndarray:
    pop = demo.populations_of(fips)
    return 1000.0 * cases.cumulative_many(fips, d) / pop


def external_risk_period(
    panel: TripPanel,
    cases: CaseSeries,
    demo: DemographicsTable,
    j: int,
    window: DateRange,
    weighting: str = DAILY_SYNCHRONOUS,
) -> ExternalRisk:
    """Sum of daily external risk of ``j`` over the analysis days in ``window``."""
    days = panel.calendar.days_in(window)
    if not days:
        raise EmptyWindowError(f"window {window.start}..{window.end} contains no analysis days")
    if weighting == DAILY_SYNCHRONOUS:
        total = 0.0
        origins = set()
        for d in days:
            total += external_risk_day(panel, cases, demo, j, d)
            lo, hi = panel.day_bounds(panel.calendar.index(d))
            for k in np.flatnonzero(panel.destination[lo:hi] == j) + lo:
                i = int(panel.origin[k])
                if i in demo and panel.trips[k] > 0 and cases.cumulative(i, d) > 0:
                    origins.add(i)
        return ExternalRisk(j, window, total, len(origins))
    grid = external_risk_grid(panel, cases, demo, window, weighting)
    er, n = grid.lookup(j)
    return ExternalRisk(j, window, er, n)


def severity(
    cases: CaseSeries, demo: DemographicsTable, j: int, anchor: dt.date, lag: LagSpec
) -> SeveritySample:
    """Cases per 1000 residents ``7 * lag.weeks`` calendar days after ``anchor``."""
    pop = _population(demo, j)
    target = anchor + dt.timedelta(days=lag.days)
    if not cases.covers(target):
        return SeveritySample(j, anchor, lag, None, False)
    return SeveritySample(j, anchor, lag, 1000.0 * cases.cumulative(j, target) / pop, True)
