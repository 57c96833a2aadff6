"""Seeded synthetic worlds used as ground truth for the analytics.

Random numbers come from numpy's PCG64 bit generator seeded with a 64-bit
integer. Uniform deviates are ``next_double()`` (53-bit, ``[0, 1)``);
normal deviates use the inverse normal CDF of ``u + 2**-54`` so that no
deviate is infinite. :func:`make_world` consumes, in order: ``2n`` uniforms
for centroids (x then y per county), ``n`` normals for log-population, then
``4n`` uniforms for age, male, African-American share and income (county by
county). :func:`generate_loglinear` draws one normal per modeled county in
ascending FIPS order, from a fresh stream seeded with its ``seed``.
"""
from __future__ import annotations

import dataclasses
import datetime as dt

import numpy as np
import scipy.sparse
from scipy.special import ndtri

from .core import AnalysisCalendar, DateRange, LagSpec, StagePartition, fips_str
from .ingest import CaseSeries, DemographicsRecord, DemographicsTable, TripPanel
from .risk import DAILY_SYNCHRONOUS, PERIOD_END, WEIGHTINGS, external_risk_grid

FIRST_FIPS = 10001


class ConstructionError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & (2**64 - 1)))


def uniform_deviates(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.random(n)


def normal_deviates(rng: np.random.Generator, n: int) -> np.ndarray:
    return ndtri(rng.random(n) + 2.0**-54)


@dataclasses.dataclass(frozen=True)
class GravityParams:
    k: float = 1e-6
    pop_exponent_origin: float = 1.0
    pop_exponent_dest: float = 1.0
    distance_exponent: float = 2.0
    daily_multipliers: tuple = ()

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("gravity scale k must be positive")
        if self.distance_exponent < 0:
            raise ValueError("distance exponent must be >= 0")
        mult = dict(self.daily_multipliers)
        if any(not v > 0 for v in mult.values()):
            raise ValueError("daily multipliers must be positive")
        object.__setattr__(self, "daily_multipliers", tuple(sorted(mult.items())))

    def multiplier(self, d: dt.date) -> float:
        return dict(self.daily_multipliers).get(d, 1.0)


@dataclasses.dataclass(frozen=True)
class EpiParams:
    beta_internal: float = 0.2
    import_coefficient: float = 0.05
    recovery_rate: float = 0.1
    seed_county: int | None = None
    seed_cases: int = 100
    reporting_fraction: float = 0.5

    def __post_init__(self):
        if self.beta_internal < 0 or self.import_coefficient < 0:
            raise ValueError("transmission and import rates must be >= 0")
        if not 0 < self.recovery_rate <= 1:
            raise ValueError("recovery_rate must lie in (0, 1]")
        if not 0 < self.reporting_fraction <= 1:
            raise ValueError("reporting_fraction must lie in (0, 1]")
        if self.seed_cases < 1:
            raise ValueError("seed_cases must be positive")


@dataclasses.dataclass(frozen=True)
class SyntheticCounty:
    fips: int
    population: int
    x: float
    y: float
    pct_age65: float
    pct_male: float
    pct_african_american: float
    median_income: float


@dataclasses.dataclass(frozen=True)
class SyntheticWorld:
    counties: tuple
    seed: int
    gravity: GravityParams = GravityParams()
    epi: EpiParams = EpiParams()

    @property
    def fips(self) -> np.ndarray:
        return np.array([c.fips for c in self.counties], dtype=np.int64)

    @property
    def population(self) -> np.ndarray:
        return np.array([c.population for c in self.counties], dtype=np.float64)

    @property
    def seed_county(self) -> int:
        if self.epi.seed_county is not None:
            return self.epi.seed_county
        return int(self.fips[np.argmax(self.population)])

    def demographics(self) -> DemographicsTable:
        return DemographicsTable(
            DemographicsRecord(
                c.fips, c.population, c.pct_age65, c.pct_male, c.pct_african_american, c.median_income
            )
            for c in self.counties
        )


def make_world(
    n_counties: int,
    seed: int,
    gravity: GravityParams | None = None,
    epi: EpiParams | None = None,
    epicenter: bool = False,
) -> SyntheticWorld:
    """Random counties on a 100 x 100 plane with log-normal populations.

    With ``epicenter=True`` the first county is moved to the centre and
    given ten times the largest other population; it becomes the default
    epidemic seed.
    """
    if n_counties < 2:
        raise ValueError("a world needs at least two counties")
    if n_counties > 99999 - FIRST_FIPS:
        raise ValueError("too many counties for the FIPS range")
    rng = make_rng(seed)
    xy = uniform_deviates(rng, 2 * n_counties).reshape(n_counties, 2) * 100.0
    logpop = 4.5 + 0.5 * normal_deviates(rng, n_counties)
    pop = np.maximum(np.round(10.0**logpop), 1000).astype(np.int64)
    u = uniform_deviates(rng, 4 * n_counties).reshape(n_counties, 4)
    if epicenter:
        xy[0] = (50.0, 50.0)
        pop[0] = 10 * int(pop[1:].max())
    counties = tuple(
        SyntheticCounty(
            fips=FIRST_FIPS + k,
            population=int(pop[k]),
            x=float(xy[k, 0]),
            y=float(xy[k, 1]),
            pct_age65=float(8.0 + 20.0 * u[k, 0]),
            pct_male=float(46.0 + 8.0 * u[k, 1]),
            pct_african_american=float(40.0 * u[k, 2]),
            median_income=float(30000.0 + 60000.0 * u[k, 3]),
        )
        for k in range(n_counties)
    )
    epi = epi or EpiParams()
    if epicenter and epi.seed_county is None:
        epi = dataclasses.replace(epi, seed_county=FIRST_FIPS)
    return SyntheticWorld(counties, int(seed), gravity or GravityParams(), epi)


def stage_multipliers(calendar: AnalysisCalendar, partition: StagePartition, trough: float = 0.65) -> dict:
    """Daily flow multipliers shaped like the national trend.

    Flat before the first cut, linear decline to ``trough`` at the second
    cut, then a linear rebound reaching 0.85 at the end of the calendar.
    """
    c1, c2 = partition.cuts[0], partition.cuts[1]
    end = calendar.end_date
    out = {}
    for d in calendar.days:
        if d <= c1:
            m = 1.0
        elif d <= c2:
            m = 1.0 - (1.0 - trough) * (d - c1).days / (c2 - c1).days
        else:
            m = trough + (0.85 - trough) * (d - c2).days / max((end - c2).days, 1)
        out[d] = m
    return out


def gravity_flows(
    world: SyntheticWorld,
    calendar: AnalysisCalendar,
    origins=None,
    destinations=None,
) -> TripPanel:
    """``E_ij(d) = m(d) * k * P_i**a * P_j**b / dist_ij**c`` for every i != j.

    ``origins`` / ``destinations`` restrict the generated pairs.
    """
    g = world.gravity
    fips = world.fips
    pop = world.population
    xy = np.array([(c.x, c.y) for c in world.counties])
    oi = np.arange(len(fips)) if origins is None else np.searchsorted(fips, sorted(origins))
    dj = np.arange(len(fips)) if destinations is None else np.searchsorted(fips, sorted(destinations))
    O, D = np.meshgrid(oi, dj, indexing="ij")
    O, D = O.ravel(), D.ravel()
    keep = O != D
    O, D = O[keep], D[keep]
    dist = np.hypot(xy[O, 0] - xy[D, 0], xy[O, 1] - xy[D, 1])
    if g.distance_exponent > 0 and np.any(dist == 0):
        raise ValueError("coincident centroids with a positive distance exponent")
    base = g.k * pop[O] ** g.pop_exponent_origin * pop[D] ** g.pop_exponent_dest / dist**g.distance_exponent
    n_days = len(calendar)
    mult = np.array([g.multiplier(d) for d in calendar.days])
    return TripPanel.from_arrays(
        calendar,
        np.repeat(np.arange(n_days), len(O)),
        np.tile(fips[O], n_days),
        np.tile(fips[D], n_days),
        (mult[:, None] * base[None, :]).ravel(),
    )


@dataclasses.dataclass(frozen=True, eq=False)
class EpidemicTrajectory:
    """End-of-day compartments, one row per county and one column per date."""

    fips: np.ndarray
    start: dt.date
    S: np.ndarray
    I: np.ndarray
    R: np.ndarray
    cumulative_infections: np.ndarray
    reported: np.ndarray

    def cases(self) -> CaseSeries:
        end = self.start + dt.timedelta(days=self.S.shape[1] - 1)
        return CaseSeries(self.fips, self.start, end, self.reported)


def run_epidemic(world: SyntheticWorld, panel: TripPanel, end: dt.date | None = None) -> EpidemicTrajectory:
    """Deterministic discrete-day metapopulation SIR driven by the panel's flows.

    Each day: ``new_j = min(S_j, beta*S_j*I_j/P_j + c * sum_i E_ij * I_i/P_i)``,
    recoveries ``gamma * I_j``. Days without records (weekends, holidays)
    carry no imports.
    """
    epi = world.epi
    cal = panel.calendar
    start = cal.start_date
    end = end or cal.end_date
    n_days = (end - start).days + 1
    fips = world.fips
    P = world.population
    n = len(fips)
    S = P.copy()
    I = np.zeros(n)
    R = np.zeros(n)
    seed = int(np.searchsorted(fips, world.seed_county))
    I[seed] = epi.seed_cases
    S[seed] -= epi.seed_cases
    cum = I.copy()
    out = {k: np.zeros((n, n_days)) for k in ("S", "I", "R", "cum")}
    o_idx = np.searchsorted(fips, panel.origin)
    d_idx = np.searchsorted(fips, panel.destination)
    for c in range(n_days):
        d = start + dt.timedelta(days=c)
        imports = np.zeros(n)
        if d in cal:
            lo, hi = panel.day_bounds(cal.index(d))
            prev = I / P
            imports = np.bincount(d_idx[lo:hi], weights=panel.trips[lo:hi] * prev[o_idx[lo:hi]], minlength=n)
        new = np.minimum(S, epi.beta_internal * S * I / P + epi.import_coefficient * imports)
        rec = epi.recovery_rate * I
        S = S - new
        I = I + new - rec
        R = R + rec
        cum = cum + new
        out["S"][:, c], out["I"][:, c], out["R"][:, c], out["cum"][:, c] = S, I, R, cum
    reported = np.floor(epi.reporting_fraction * out["cum"])
    return EpidemicTrajectory(fips, start, out["S"], out["I"], out["R"], out["cum"], reported)


def simulate_epidemic(world: SyntheticWorld, panel: TripPanel, calendar: AnalysisCalendar | None = None) -> CaseSeries:
    end = calendar.end_date if calendar is not None else None
    return run_epidemic(world, panel, end).cases()


# --------------------------------------------------------------------------
# exact log-linear cases


def _standardize(v):
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)


def generate_loglinear(
    world: SyntheticWorld,
    panel: TripPanel,
    period: DateRange,
    lag: LagSpec,
    true_alpha: float,
    true_beta,
    true_gamma: float,
    noise_sigma: float = 0.0,
    seed: int | None = None,
    bootstrap_county: int | None = None,
    bootstrap_cases: float | None = None,
    weighting: str = DAILY_SYNCHRONOUS,
) -> CaseSeries:
    """Cumulative cases for which the double-risk model holds by construction.

    Pass 1 gives the bootstrap county (default: the world's seed county) a
    rising case series so every origin weight is known. Pass 2 computes each
    county's external risk over ``period`` and sets its cumulative count at
    ``period.end + 7*lag`` to ``P/1000 * 10**(alpha*log10(ER) + beta.x +
    gamma + eps)``, where ``x`` is (age65, male, African-American, income
    z-score over the modeled counties). Earlier values ramp linearly from
    zero, starting after the last date whose weights enter any ER. When the
    target date itself carries weights (zero lag) the per-county values
    feed back into ER and are solved by fixed-point iteration.
    """
    if weighting not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {weighting!r}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    beta = np.asarray(true_beta, dtype=np.float64)
    if beta.shape != (4,):
        raise ValueError("true_beta needs four coefficients")
    cal = panel.calendar
    fips = world.fips
    P = world.population
    n = len(fips)
    demo = world.demographics()
    boot = bootstrap_county if bootstrap_county is not None else world.seed_county
    b = int(np.searchsorted(fips, boot))
    if b >= n or fips[b] != boot:
        raise ConstructionError(f"bootstrap county {fips_str(boot)} not in world")
    period_days = cal.days_in(period)
    if not period_days:
        raise ConstructionError("period contains no analysis days")
    target = period.end + dt.timedelta(days=lag.days)
    grid_start = cal.start_date
    end = max(target, cal.end_date)
    n_days = (end - grid_start).days + 1
    col = lambda d: (d - grid_start).days  # noqa: E731

    weight_dates = set(period_days) if weighting == DAILY_SYNCHRONOUS else {period.end}
    before = [d for d in weight_dates if d < target]
    ramp_start = max(before) if before else grid_start - dt.timedelta(days=1)
    coupled = target in weight_dates

    # pass 1: bootstrap series, zero elsewhere
    if bootstrap_cases is None:
        bootstrap_cases = 0.01 * P[b]
    values = np.zeros((n, n_days))
    values[b] = bootstrap_cases * np.arange(1, n_days + 1) / n_days
    if coupled:
        values[b, col(target):] = 0.0
    fixed = external_risk_grid(panel, CaseSeries(fips, grid_start, end, values), demo, period, weighting)
    er_fixed = np.array([fixed.lookup(int(f))[0] for f in fips])

    # flows whose origin weight is read on the target date
    if coupled:
        on_target = np.zeros(len(panel), dtype=bool)
        if weighting == DAILY_SYNCHRONOUS:
            lo, hi = panel.day_bounds(cal.index(target))
            on_target[lo:hi] = True
        else:
            in_period = np.array([d in period for d in cal.days])
            on_target = in_period[panel.day]
        F = scipy.sparse.csr_matrix(
            (
                panel.trips[on_target],
                (np.searchsorted(fips, panel.origin[on_target]), np.searchsorted(fips, panel.destination[on_target])),
            ),
            shape=(n, n),
        )
        boot_modeled = F[:, b].sum() > 0
    else:
        F = None
        boot_modeled = False

    modeled = np.ones(n, dtype=bool)
    if not boot_modeled:
        modeled[b] = False
    idx = np.flatnonzero(modeled)
    x = np.column_stack(
        [
            [world.counties[k].pct_age65 for k in idx],
            [world.counties[k].pct_male for k in idx],
            [world.counties[k].pct_african_american for k in idx],
            _standardize(np.array([world.counties[k].median_income for k in idx])),
        ]
    )
    offset = x @ beta + true_gamma
    if noise_sigma > 0:
        rng = make_rng(world.seed if seed is None else seed)
        offset = offset + noise_sigma * normal_deviates(rng, len(idx))

    def model(er):
        return er[idx] ** true_alpha * 10.0**offset

    if not coupled:
        er = er_fixed
        sev = model(er)
    else:
        w = np.zeros(n)
        if not boot_modeled:
            values[b] = bootstrap_cases * np.arange(1, n_days + 1) / n_days
            w[b] = 1000.0 * values[b, col(target)] / P[b]
        # positive start: with period-end weighting zero is also a fixed point
        sev = 10.0**offset
        for _ in range(10_000):
            w[idx] = sev
            er = er_fixed + F.T @ w
            new = model(er)
            if np.max(np.abs(new - sev)) <= 1e-15 * max(np.max(np.abs(new)), 1e-300):
                sev = new
                break
            sev = new
        else:
            raise ConstructionError("fixed-point iteration for zero-lag cases did not converge")
        w[idx] = sev
        er = er_fixed + F.T @ w
    bad = idx[~(er[idx] > 0)]
    if len(bad):
        raise ConstructionError(
            f"external risk is zero for county {fips_str(int(fips[bad[0]]))}"
            + (f" and {len(bad) - 1} others" if len(bad) > 1 else "")
        )

    counts = sev * P[idx] / 1000.0
    t = col(target)
    r = col(ramp_start)
    span = t - r
    for k, c in zip(idx, counts):
        start_val = values[k, r] if r >= 0 else 0.0
        row = values[k]
        if r >= 0:
            row[r + 1 :] = 0.0
        for cc in range(max(r + 1, 0), t):
            row[cc] = start_val + (c - start_val) * (cc - r) / span
        row[t:] = c
    return CaseSeries(fips, grid_start, end, values)
