"""Calendar, stage partition, regions and other shared types."""
from __future__ import annotations

import dataclasses
import datetime as dt
from typing import Iterable, Iterator

FIPS_MIN = 1001
FIPS_MAX = 99999

STAGE_LABELS = (
    "pre_pandemic",
    "behavior_change",
    "quarantine_fatigue",
    "partial_reopening",
)
AFTER_PANDEMIC = "after_pandemic"
# Row order of the scenario grid.
PERIOD_LABELS = (
    AFTER_PANDEMIC,
    "behavior_change",
    "quarantine_fatigue",
    "partial_reopening",
    "pre_pandemic",
)

DEFAULT_START = dt.date(2020, 1, 2)
DEFAULT_END = dt.date(2020, 5, 15)
DEFAULT_HOLIDAYS = frozenset(
    {dt.date(2020, 1, 1), dt.date(2020, 1, 20), dt.date(2020, 2, 17)}
)
DEFAULT_CUTS = (dt.date(2020, 3, 13), dt.date(2020, 4, 13), dt.date(2020, 4, 23))
NYC_FIPS = frozenset({36061, 36005, 36081, 36047, 36085})


class InvalidRangeError(ValueError):
    pass


class OutOfRangeError(ValueError):
    pass


def check_fips(value) -> int:
    """Coerce ``value`` (int or digit string) to a validated county code."""
    if isinstance(value, str):
        s = value.strip()
        if not s.isdigit():
            raise ValueError(f"invalid FIPS code {value!r}")
        value = int(s)
    if isinstance(value, bool) or int(value) != value:
        raise ValueError(f"invalid FIPS code {value!r}")
    value = int(value)
    if not FIPS_MIN <= value <= FIPS_MAX:
        raise ValueError(f"FIPS code {value} outside [{FIPS_MIN:05d}, {FIPS_MAX}]")
    return value


def fips_str(fips: int) -> str:
    return f"{fips:05d}"


def parse_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value).strip())


@dataclasses.dataclass(frozen=True)
class DateRange:
    """Closed interval of calendar dates."""

    start: dt.date
    end: dt.date

    def __post_init__(self):
        if self.start > self.end:
            raise InvalidRangeError(f"empty date range {self.start}..{self.end}")

    def __contains__(self, d: dt.date) -> bool:
        return self.start <= d <= self.end

    def dates(self) -> Iterator[dt.date]:
        d = self.start
        while d <= self.end:
            yield d
            d += dt.timedelta(days=1)

    @classmethod
    def parse(cls, pair) -> "DateRange":
        start, end = pair
        return cls(parse_date(start), parse_date(end))


@dataclasses.dataclass(frozen=True)
class AnalysisCalendar:
    start_date: dt.date
    end_date: dt.date
    holidays: frozenset
    days: tuple

    def __post_init__(self):
        object.__setattr__(self, "_index", {d: i for i, d in enumerate(self.days)})

    def __len__(self) -> int:
        return len(self.days)

    def __contains__(self, d: dt.date) -> bool:
        return d in self._index

    def index(self, d: dt.date) -> int:
        try:
            return self._index[d]
        except KeyError:
            raise OutOfRangeError(f"{d} is not an analysis day") from None

    def days_in(self, window: DateRange) -> list:
        return [d for d in self.days if d in window]

    def last_day_on_or_before(self, d: dt.date):
        """Latest analysis day not after ``d``, or None."""
        best = None
        for day in self.days:
            if day > d:
                break
            best = day
        return best


def build_calendar(start: dt.date, end: dt.date, holidays: Iterable = ()) -> AnalysisCalendar:
    if start > end:
        raise InvalidRangeError(f"calendar start {start} after end {end}")
    hol = frozenset(parse_date(h) for h in holidays)
    days = tuple(
        d for d in DateRange(start, end).dates() if d.weekday() < 5 and d not in hol
    )
    return AnalysisCalendar(start, end, hol, days)


def default_calendar() -> AnalysisCalendar:
    return build_calendar(DEFAULT_START, DEFAULT_END, DEFAULT_HOLIDAYS)


@dataclasses.dataclass(frozen=True)
class StagePartition:
    """Contiguous stages over ``[start, end]``.

    Each cut date is the last day of the stage it closes, so with the default
    cuts Mar 13 is pre-pandemic and Apr 14 is quarantine fatigue.
    """

    start: dt.date
    end: dt.date
    cuts: tuple = DEFAULT_CUTS
    labels: tuple = STAGE_LABELS

    def __post_init__(self):
        if len(self.labels) != len(self.cuts) + 1:
            raise ValueError("need exactly one more label than cut dates")
        bounds = (self.start, *self.cuts, self.end)
        for a, b in zip(bounds, bounds[1:]):
            if not a < b:
                raise ValueError(f"stage boundaries not strictly increasing at {a}, {b}")

    @property
    def boundaries(self) -> list:
        return list(zip(self.cuts, self.labels))

    def stage_window(self, label: str) -> DateRange:
        if label == AFTER_PANDEMIC:
            return DateRange(self.cuts[0] + dt.timedelta(days=1), self.end)
        try:
            k = self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown stage {label!r}") from None
        lo = self.start if k == 0 else self.cuts[k - 1] + dt.timedelta(days=1)
        hi = self.end if k == len(self.cuts) else self.cuts[k]
        return DateRange(lo, hi)

    def windows(self) -> dict:
        return {label: self.stage_window(label) for label in self.labels}


def default_partition(calendar: AnalysisCalendar | None = None) -> StagePartition:
    cal = calendar or default_calendar()
    return StagePartition(cal.start_date, cal.end_date)


def stage_of(d: dt.date, p: StagePartition) -> str:
    if not p.start <= d <= p.end:
        raise OutOfRangeError(f"{d} outside stage partition {p.start}..{p.end}")
    for cut, label in zip(p.cuts, p.labels):
        if d <= cut:
            return label
    return p.labels[-1]


def week_start(d: dt.date) -> dt.date:
    return d - dt.timedelta(days=d.weekday())


@dataclasses.dataclass(frozen=True)
class RegionSpec:
    name: str
    members: frozenset

    def __post_init__(self):
        members = frozenset(check_fips(m) for m in self.members)
        if not members:
            raise ValueError(f"region {self.name!r} has no members")
        object.__setattr__(self, "members", members)

    def __contains__(self, fips: int) -> bool:
        return fips in self.members


def nyc_region() -> RegionSpec:
    return RegionSpec("NYC", NYC_FIPS)


@dataclasses.dataclass(frozen=True)
class LagSpec:
    weeks: int

    def __post_init__(self):
        if self.weeks not in (0, 1, 2, 3):
            raise ValueError(f"lag must be 0..3 weeks, got {self.weeks}")

    @property
    def days(self) -> int:
        return 7 * self.weeks


LAGS = tuple(LagSpec(t) for t in range(4))
