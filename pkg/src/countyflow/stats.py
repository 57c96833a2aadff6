"""Correlation statistics and the log-linear double-risk regression."""
from __future__ import annotations

import dataclasses
import datetime as dt
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.linalg
from scipy.stats import rankdata

from .core import DateRange, LagSpec, PERIOD_LABELS, RegionSpec, StagePartition
from .ingest import CaseSeries, DemographicsTable, TripPanel
from .risk import DAILY_SYNCHRONOUS, external_risk_grid

FIXED_SET_ZERO_FILL = "fixed_set_zero_fill"
POSITIVE_FLOW_ONLY = "positive_flow_only"
SAMPLE_POLICIES = (FIXED_SET_ZERO_FILL, POSITIVE_FLOW_ONLY)

MIN_DESIGN_ROWS = 10
COVARIATES = ("age65", "male", "african_american", "income_std")

ZERO_ER = "zero_er"
ZERO_SEVERITY = "zero_severity"
MISSING_DEMOGRAPHICS = "missing_demographics"
SEVERITY_UNAVAILABLE = "severity_unavailable"


class SingularDesignError(ValueError):
    pass


class DegenerateTargetError(ValueError):
    pass


class InsufficientSampleError(ValueError):
    pass


# --------------------------------------------------------------------------
# correlation


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 3:
        raise ValueError(f"need at least 3 observations, got {len(x)}")
    return x, y


def _product_moment(x, y):
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def pearson(x, y) -> float | None:
    """Sample product-moment correlation; None when either input is constant."""
    x, y = _check_pair(x, y)
    if np.all(x == x[0]) or np.all(y == y[0]):
        return None
    return _product_moment(x, y)


def spearman(x, y) -> float | None:
    """Pearson correlation of average ranks (ties share the mean rank)."""
    x, y = _check_pair(x, y)
    rx, ry = rankdata(x, method="average"), rankdata(y, method="average")
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        return None
    return _product_moment(rx, ry)


@dataclasses.dataclass(frozen=True)
class CorrelationPoint:
    case_date: dt.date
    lag: LagSpec
    pearson_r: float | None
    spearman_rs: float | None
    n: int
    trip_date: dt.date | None = None
    available: bool = True

    @property
    def defined(self) -> bool:
        return self.pearson_r is not None and self.spearman_rs is not None


def lagged_correlation_series(
    panel: TripPanel,
    cases: CaseSeries,
    demo: DemographicsTable,
    region: RegionSpec,
    lag: LagSpec,
    case_dates,
    policy: str = FIXED_SET_ZERO_FILL,
) -> list:
    """Daily correlation between region outflow to each county and its cases per 1000.

    For case date ``d`` the flows are read on ``d - 7T``, stepping back to
    the nearest earlier analysis day. Under the fixed-set policy the sample
    is every external county that ever receives region trips, zero-filled on
    days without flow.
    """
    if policy not in SAMPLE_POLICIES:
        raise ValueError(f"unknown sample policy {policy!r}")
    cal = panel.calendar
    members = np.array(sorted(region.members))
    out_mask = np.isin(panel.origin, members) & ~np.isin(panel.destination, members) & (panel.trips > 0)
    dest_set = np.unique(panel.destination[out_mask])
    pop = demo.populations_of(dest_set)
    dest_set, pop = dest_set[~np.isnan(pop)], pop[~np.isnan(pop)]
    points = []
    for d in case_dates:
        trip_date = cal.last_day_on_or_before(d - dt.timedelta(days=lag.days))
        if trip_date is None or not cases.covers(d):
            points.append(CorrelationPoint(d, lag, None, None, 0, trip_date, False))
            continue
        lo, hi = panel.day_bounds(cal.index(trip_date))
        m = out_mask[lo:hi]
        dj, tj = panel.destination[lo:hi][m], panel.trips[lo:hi][m]
        keep = np.isin(dj, dest_set)
        x = np.zeros(len(dest_set))
        # several region members can feed the same destination
        np.add.at(x, np.searchsorted(dest_set, dj[keep]), tj[keep])
        y = 1000.0 * cases.cumulative_many(dest_set, d) / pop
        if policy == POSITIVE_FLOW_ONLY:
            keep = x > 0
            x, y = x[keep], y[keep]
        n = len(x)
        if n < 3:
            points.append(CorrelationPoint(d, lag, None, None, n, trip_date))
            continue
        points.append(CorrelationPoint(d, lag, pearson(x, y), spearman(x, y), n, trip_date))
    return points


def summarize_correlations(points: list) -> dict:
    """Max, mean and median of the defined daily coefficients."""
    out = {"n_defined": 0}
    for key, attr in (("pearson", "pearson_r"), ("spearman", "spearman_rs")):
        vals = np.array([getattr(p, attr) for p in points if getattr(p, attr) is not None])
        out["n_defined"] = max(out["n_defined"], len(vals))
        for stat, fn in (("max", np.max), ("mean", np.mean), ("median", np.median)):
            out[f"{key}_{stat}"] = float(fn(vals)) if len(vals) else None
    return out


# --------------------------------------------------------------------------
# least squares


@dataclasses.dataclass(frozen=True, eq=False)
class OLSResult:
    coef: np.ndarray
    intercept: float
    r_squared: float
    residuals: np.ndarray
    sse: float
    sst: float


def ols_fit(X, y) -> OLSResult:
    """Least squares of ``y`` on the columns of ``X`` plus an intercept.

    Solved by column-pivoted QR on norm-equilibrated columns; an exactly
    rank-deficient design raises :class:`SingularDesignError`.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if len(y) != n:
        raise ValueError(f"X has {n} rows but y has {len(y)}")
    if n <= k + 1:
        raise SingularDesignError(f"need more than {k + 1} rows, got {n}")
    A = np.column_stack([X, np.ones(n)])
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0) or not np.all(np.isfinite(A)):
        raise SingularDesignError("design has an all-zero or non-finite column")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise DegenerateTargetError("target has zero variance")
    Q, R, piv = scipy.linalg.qr(A / norms, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, k + 1) * np.finfo(float).eps * diag[0]
    if np.any(diag <= tol):
        raise SingularDesignError("design matrix is rank deficient")
    z = scipy.linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(k + 1)
    beta[piv] = z
    beta /= norms
    resid = y - A @ beta
    sse = float(resid @ resid)
    return OLSResult(beta[:k], float(beta[k]), 1.0 - sse / sst, resid, sse, sst)


# --------------------------------------------------------------------------
# double-risk model


@dataclasses.dataclass(frozen=True, eq=False)
class DesignMatrix:
    period: str
    window: DateRange
    lag: LagSpec
    anchor: dt.date
    fips: np.ndarray
    er: np.ndarray
    severity: np.ndarray
    log10_er: np.ndarray
    age65: np.ndarray
    male: np.ndarray
    african_american: np.ndarray
    income: np.ndarray
    income_std: np.ndarray
    log10_severity: np.ndarray
    exclusions: tuple

    def __len__(self):
        return len(self.fips)

    def covariates(self) -> np.ndarray:
        return np.column_stack([self.age65, self.male, self.african_american, self.income_std])

    def regressors(self) -> np.ndarray:
        return np.column_stack([self.log10_er, self.covariates()])

    def exclusion_counts(self) -> dict:
        counts = {}
        for _, reason in self.exclusions:
            counts[reason] = counts.get(reason, 0) + 1
        return counts


@dataclasses.dataclass(frozen=True)
class DoubleRiskFit:
    period: str
    lag_weeks: int
    alpha: float
    beta: tuple
    gamma: float
    r_squared: float
    n: int
    n_excluded: int

    @property
    def scenario(self) -> tuple:
        return (self.period, self.lag_weeks)


@dataclasses.dataclass(frozen=True)
class ImportanceResult:
    period: str
    lag_weeks: int
    r2_full: float
    r2_ir_only: float

    @property
    def delta(self) -> float:
        return self.r2_full - self.r2_ir_only


def standardize(v: np.ndarray) -> np.ndarray:
    """Population z-score; a constant column maps to zeros."""
    if not len(v):
        return v.astype(np.float64)
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)


def build_design(
    panel: TripPanel,
    cases: CaseSeries,
    demo: DemographicsTable,
    period: DateRange,
    lag: LagSpec,
    period_label: str = "",
    weighting: str = DAILY_SYNCHRONOUS,
    min_rows: int = MIN_DESIGN_ROWS,
) -> DesignMatrix:
    """Assemble log10 severity, log10 external risk and covariates per county.

    Severity is read ``7 * lag`` days after the last date of ``period``.
    Counties with zero risk or zero severity (log undefined) are excluded
    with a recorded reason, as are counties lacking demographics or case
    coverage.
    """
    grid = external_risk_grid(panel, cases, demo, period, weighting)
    anchor = period.end
    target = anchor + dt.timedelta(days=lag.days)
    covered = cases.covers(target)
    exclusions = []
    rows = []
    for f in np.union1d(panel.counties, demo.fips):
        f = int(f)
        if f not in demo:
            exclusions.append((f, MISSING_DEMOGRAPHICS))
            continue
        if not covered:
            exclusions.append((f, SEVERITY_UNAVAILABLE))
            continue
        er, _ = grid.lookup(f)
        if not er > 0:
            exclusions.append((f, ZERO_ER))
            continue
        sev = 1000.0 * cases.cumulative(f, target) / demo[f].population
        if not sev > 0:
            exclusions.append((f, ZERO_SEVERITY))
            continue
        rows.append((f, er, sev))
    if len(rows) < min_rows:
        raise InsufficientSampleError(
            f"{period_label or period} lag {lag.weeks}: {len(rows)} usable counties (< {min_rows})"
        )
    fips = np.array([r[0] for r in rows], dtype=np.int64)
    er = np.array([r[1] for r in rows])
    sev = np.array([r[2] for r in rows])
    recs = [demo[f] for f in fips]
    income = np.array([r.median_income for r in recs])
    return DesignMatrix(
        period=period_label,
        window=period,
        lag=lag,
        anchor=anchor,
        fips=fips,
        er=er,
        severity=sev,
        log10_er=np.log10(er),
        age65=np.array([r.pct_age65 for r in recs]),
        male=np.array([r.pct_male for r in recs]),
        african_american=np.array([r.pct_african_american for r in recs]),
        income=income,
        income_std=standardize(income),
        log10_severity=np.log10(sev),
        exclusions=tuple(exclusions),
    )


def fit_double_risk(design: DesignMatrix) -> DoubleRiskFit:
    res = ols_fit(design.regressors(), design.log10_severity)
    return DoubleRiskFit(
        period=design.period,
        lag_weeks=design.lag.weeks,
        alpha=float(res.coef[0]),
        beta=tuple(float(b) for b in res.coef[1:]),
        gamma=res.intercept,
        r_squared=res.r_squared,
        n=len(design),
        n_excluded=len(design.exclusions),
    )


def er_importance(design: DesignMatrix) -> ImportanceResult:
    """R^2 with and without the logged external-risk column on the same rows."""
    full = ols_fit(design.regressors(), design.log10_severity)
    ir_only = ols_fit(design.covariates(), design.log10_severity)
    return ImportanceResult(design.period, design.lag.weeks, full.r_squared, ir_only.r_squared)


@dataclasses.dataclass(frozen=True, eq=False)
class GridCell:
    period: str
    lag: LagSpec
    window: DateRange
    design: DesignMatrix | None
    fit: DoubleRiskFit | None
    importance: ImportanceResult | None
    status: str

    @property
    def ok(self) -> bool:
        return self.fit is not None


def period_windows(partition: StagePartition, periods=PERIOD_LABELS) -> dict:
    return {p: partition.stage_window(p) for p in periods}


def _fit_cell(panel, cases, demo, label, window, lag, weighting) -> GridCell:
    try:
        design = build_design(panel, cases, demo, window, lag, label, weighting)
        fit = fit_double_risk(design)
        imp = er_importance(design)
    except InsufficientSampleError:
        return GridCell(label, lag, window, None, None, None, "insufficient_sample")
    except SingularDesignError:
        return GridCell(label, lag, window, None, None, None, "singular_design")
    except DegenerateTargetError:
        return GridCell(label, lag, window, None, None, None, "degenerate_target")
    return GridCell(label, lag, window, design, fit, imp, "ok")


def scenario_grid(
    panel: TripPanel,
    cases: CaseSeries,
    demo: DemographicsTable,
    partition: StagePartition,
    periods=PERIOD_LABELS,
    lags=(0, 1, 2, 3),
    weighting: str = DAILY_SYNCHRONOUS,
    jobs: int = 1,
) -> list:
    """One fit per (period, lag); failing cells are kept with a status."""
    windows = period_windows(partition, periods)
    tasks = [
        (p, windows[p], LagSpec(t) if not isinstance(t, LagSpec) else t)
        for p in periods
        for t in lags
    ]

    def run(task):
        label, window, lag = task
        return _fit_cell(panel, cases, demo, label, window, lag, weighting)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run, tasks))
    return [run(t) for t in tasks]
