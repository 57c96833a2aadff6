"""JSON run configuration."""
from __future__ import annotations

import dataclasses
import datetime as dt
import glob
import json
import os

from .core import (
    DEFAULT_CUTS,
    DEFAULT_END,
    DEFAULT_HOLIDAYS,
    DEFAULT_START,
    NYC_FIPS,
    PERIOD_LABELS,
    DateRange,
    RegionSpec,
    StagePartition,
    build_calendar,
    parse_date,
)
from .mobility import TOTAL_US_COUNTIES
from .risk import DAILY_SYNCHRONOUS, WEIGHTINGS
from .stats import FIXED_SET_ZERO_FILL, SAMPLE_POLICIES


class ConfigError(ValueError):
    pass


def _iso(d):
    return d.isoformat() if d is not None else None


@dataclasses.dataclass
class RunConfig:
    trips: list = dataclasses.field(default_factory=lambda: ["trips.csv"])
    cases: str = "cases.csv"
    demographics: str = "demographics.csv"
    output: str = "out"
    start: dt.date = DEFAULT_START
    end: dt.date = DEFAULT_END
    holidays: tuple = tuple(sorted(DEFAULT_HOLIDAYS))
    stage_cuts: tuple = DEFAULT_CUTS
    regions: dict = dataclasses.field(default_factory=lambda: {"NYC": sorted(NYC_FIPS)})
    focus_region: str | None = None
    baseline_window: tuple = (dt.date(2020, 1, 2), dt.date(2020, 1, 31))
    total_county_count: int = TOTAL_US_COUNTIES
    lags: tuple = (0, 1, 2, 3)
    periods: tuple = PERIOD_LABELS
    correlation_sample_policy: str = FIXED_SET_ZERO_FILL
    er_weighting: str = DAILY_SYNCHRONOUS
    pct_change_weeks: tuple | None = None
    top_k: int = 12
    top_window: tuple | None = None
    spread_window: tuple | None = None
    correlation_window: tuple = (dt.date(2020, 3, 13), dt.date(2020, 5, 15))
    synth: dict = dataclasses.field(default_factory=dict)
    base_dir: str = "."

    # ------------------------------------------------------------------
    @classmethod
    def from_dict(cls, raw: dict, base_dir: str = ".") -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        kw = dict(raw)
        try:
            if isinstance(kw.get("trips"), str):
                kw["trips"] = [kw["trips"]]
            for key in ("start", "end"):
                if key in kw:
                    kw[key] = parse_date(kw[key])
            if "holidays" in kw:
                kw["holidays"] = tuple(sorted(parse_date(h) for h in kw["holidays"]))
            if "stage_cuts" in kw:
                kw["stage_cuts"] = tuple(parse_date(c) for c in kw["stage_cuts"])
            for key in ("baseline_window", "top_window", "spread_window", "correlation_window"):
                if kw.get(key) is not None:
                    kw[key] = tuple(parse_date(x) for x in kw[key])
            if kw.get("pct_change_weeks") is not None:
                kw["pct_change_weeks"] = tuple(parse_date(x) for x in kw["pct_change_weeks"])
            if "lags" in kw:
                kw["lags"] = tuple(int(t) for t in kw["lags"])
            if "periods" in kw:
                kw["periods"] = tuple(kw["periods"])
            if "regions" in kw:
                kw["regions"] = {str(k): [int(f) for f in v] for k, v in kw["regions"].items()}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed configuration value: {exc}") from exc
        cfg = cls(**kw, base_dir=base_dir)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"configuration file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        return cls.from_dict(raw, os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> dict:
        """JSON-ready echo, without the machine-specific base directory."""
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "base_dir":
                continue
            v = getattr(self, f.name)
            if isinstance(v, dt.date):
                v = v.isoformat()
            elif isinstance(v, tuple):
                v = [_iso(x) if isinstance(x, dt.date) else x for x in v]
            out[f.name] = v
        return out

    def check(self) -> None:
        if self.start > self.end:
            raise ConfigError("calendar start is after its end")
        if len(self.stage_cuts) != 3:
            raise ConfigError("exactly three stage cut dates are required")
        if not all(self.start <= c < self.end for c in self.stage_cuts):
            raise ConfigError("stage cuts must lie inside the calendar")
        try:
            self.partition()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not set(self.lags) <= {0, 1, 2, 3} or not self.lags:
            raise ConfigError("lags must be a non-empty subset of {0, 1, 2, 3}")
        bad = set(self.periods) - set(PERIOD_LABELS)
        if bad or not self.periods:
            raise ConfigError(f"unknown periods: {', '.join(sorted(bad))}")
        if self.correlation_sample_policy not in SAMPLE_POLICIES:
            raise ConfigError(f"correlation_sample_policy must be one of {SAMPLE_POLICIES}")
        if self.er_weighting not in WEIGHTINGS:
            raise ConfigError(f"er_weighting must be one of {WEIGHTINGS}")
        if not self.regions:
            raise ConfigError("at least one region is required")
        try:
            self.region_specs()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.focus_region is not None and self.focus_region not in self.regions:
            raise ConfigError(f"focus_region {self.focus_region!r} is not a configured region")
        if self.top_k < 1 or self.total_county_count < 1:
            raise ConfigError("top_k and total_county_count must be positive")
        for name in ("baseline_window", "top_window", "spread_window", "correlation_window"):
            w = getattr(self, name)
            if w is not None and (len(w) != 2 or w[0] > w[1]):
                raise ConfigError(f"{name} must be [start, end] with start <= end")
        paths = [self.resolve(p) for p in self.trips] + [
            self.resolve(self.cases),
            self.resolve(self.demographics),
            self.resolve(self.output),
        ]
        if len(set(paths)) != len(paths):
            raise ConfigError("input and output paths must be distinct")

    # ------------------------------------------------------------------
    def resolve(self, path: str) -> str:
        return os.path.normpath(os.path.join(self.base_dir, path))

    def trip_paths(self) -> list:
        out = []
        for pattern in self.trips:
            full = self.resolve(pattern)
            hits = sorted(glob.glob(full))
            out.extend(hits if hits else [full])
        return out

    def calendar(self):
        return build_calendar(self.start, self.end, self.holidays)

    def partition(self) -> StagePartition:
        return StagePartition(self.start, self.end, tuple(self.stage_cuts))

    def region_specs(self) -> dict:
        return {name: RegionSpec(name, frozenset(m)) for name, m in self.regions.items()}

    def region(self) -> RegionSpec:
        specs = self.region_specs()
        return specs[self.focus_region or next(iter(specs))]

    def window(self, name: str) -> DateRange:
        w = getattr(self, name)
        if w is None:
            if name == "spread_window":
                return self.window("baseline_window")
            return DateRange(self.start, self.end)
        return DateRange(*w)
