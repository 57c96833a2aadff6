"""Command-line entry point: validate, analyze, correlate, fit, synth, report."""
from __future__ import annotations

import argparse
import contextlib
import datetime as dt
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .core import AFTER_PANDEMIC, LagSpec, DateRange, fips_str, parse_date
from .ingest import (
    IngestError,
    ValidationReport,
    cross_validate,
    load_cases,
    load_demographics,
    load_trips,
    write_cases,
    write_demographics,
    write_trips,
)
from .mobility import (
    calendar_weeks,
    county_baselines,
    destination_spread,
    moving_average,
    national_inflow_series,
    region_daily,
    share_with_increase,
    top_destinations,
    weekly_pct_change,
    DegenerateInputError,
)
from .risk import external_risk_grid, severity
from .stats import lagged_correlation_series, scenario_grid, summarize_correlations
from . import synth

log = logging.getLogger("countyflow")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_COMPUTE = 2
EXIT_CONFIG = 3

MANIFEST = "manifest.json"


# --------------------------------------------------------------------------
# output formatting


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not np.isfinite(v):
            return ""
        if v == 0:
            v = 0.0
        return format(v, ".10g")
    if isinstance(v, dt.date):
        return v.isoformat()
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@contextlib.contextmanager
def staged_output(out_dir: str, replace_dir: bool = False):
    """Yield a temp directory; on success move its files into ``out_dir``.

    With ``replace_dir`` the whole run directory is swapped in by rename.
    An exception leaves ``out_dir`` untouched.
    """
    parent = os.path.dirname(os.path.abspath(out_dir)) or "."
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".countyflow-", dir=parent)
    try:
        yield tmp
        if replace_dir:
            old = None
            if os.path.exists(out_dir):
                old = tempfile.mkdtemp(prefix=".countyflow-old-", dir=parent)
                os.rmdir(old)
                os.rename(out_dir, old)
            os.rename(tmp, out_dir)
            if old:
                shutil.rmtree(old, ignore_errors=True)
        else:
            os.makedirs(out_dir, exist_ok=True)
            for name in sorted(os.listdir(tmp)):
                os.replace(os.path.join(tmp, name), os.path.join(out_dir, name))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


# --------------------------------------------------------------------------
# pipeline steps


class Inputs:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.calendar = cfg.calendar()
        self.report = ValidationReport()
        self.panel = load_trips(cfg.trip_paths(), self.calendar, self.report)
        self.demo = load_demographics(cfg.resolve(cfg.demographics), self.report)
        self.cases = load_cases(cfg.resolve(cfg.cases), self.report, end=cfg.end)
        cross_validate(self.panel, self.cases, self.demo, self.report)
        if not self.report.ok:
            raise IngestError(self.report, "cross-validation")


def run_validate(cfg: RunConfig, out: str) -> ValidationReport:
    report = ValidationReport()
    cal = cfg.calendar()
    panel = cases = demo = None
    for loader in ("trips", "demographics", "cases"):
        try:
            if loader == "trips":
                panel = load_trips(cfg.trip_paths(), cal, report)
            elif loader == "demographics":
                demo = load_demographics(cfg.resolve(cfg.demographics), report)
            else:
                cases = load_cases(cfg.resolve(cfg.cases), report, end=cfg.end)
        except IngestError:
            pass
    if panel is not None and cases is not None and demo is not None:
        cross_validate(panel, cases, demo, report)
    with staged_output(out) as tmp:
        write_json(os.path.join(tmp, "validation.json"), report.to_dict())
    return report


def run_analyze(cfg: RunConfig, inp: Inputs, tmp: str) -> dict:
    panel = inp.panel
    series = national_inflow_series(panel)
    ma = moving_average(series, 3)
    write_csv(
        os.path.join(tmp, "trend.csv"),
        ["date", "total", "ma3"],
        zip(series.dates, series.values, ma.values),
    )
    baselines = county_baselines(panel, cfg.window("baseline_window"))
    write_csv(
        os.path.join(tmp, "baseline.csv"),
        ["fips", "baseline"],
        ((fips_str(f), b) for f, b in zip(baselines.fips, baselines.baseline)),
    )
    weeks = cfg.pct_change_weeks or calendar_weeks(panel.calendar)
    summary = []
    for wk in weeks:
        changes = weekly_pct_change(panel, wk, baselines)
        monday = wk - dt.timedelta(days=wk.weekday())
        write_csv(
            os.path.join(tmp, f"pct_change_{monday.isoformat()}.csv"),
            ["fips", "pct"],
            ((fips_str(f), v) for f, v in sorted(changes.items())),
        )
        n_def = sum(v is not None for v in changes.values())
        try:
            share = share_with_increase(changes)
        except DegenerateInputError:
            share = None
        summary.append((monday, n_def, share))
    write_csv(os.path.join(tmp, "weekly_summary.csv"), ["week", "n_defined", "share_increase"], summary)

    region = cfg.region()
    rows = []
    for m, r in region_daily(panel, region):
        rows.append(
            (m.date, m.inflow, m.outflow, m.n_origins, m.n_destinations,
             r["inflow"], r["outflow"], r["n_origins"], r["n_destinations"])
        )
    write_csv(
        os.path.join(tmp, "region_daily.csv"),
        ["date", "inflow", "outflow", "n_origins", "n_destinations",
         "rank_inflow", "rank_outflow", "rank_norigins", "rank_ndest"],
        rows,
    )
    top = top_destinations(panel, region, cfg.window("top_window"), cfg.top_k)
    write_csv(
        os.path.join(tmp, "top_destinations.csv"),
        ["rank", "fips", "trips"],
        ((k + 1, fips_str(f), t) for k, (f, t) in enumerate(top)),
    )
    spread_w = cfg.window("spread_window")
    mean, frac = destination_spread(panel, region, spread_w, cfg.total_county_count)
    write_csv(
        os.path.join(tmp, "destination_spread.csv"),
        ["region", "window_start", "window_end", "mean_destinations", "fraction"],
        [(region.name, spread_w.start, spread_w.end, mean, frac)],
    )
    return {"calendar_days": len(panel.calendar), "weeks": len(weeks)}


def run_correlate(cfg: RunConfig, inp: Inputs, tmp: str) -> dict:
    cal = inp.calendar
    lo, hi = cfg.correlation_window
    case_dates = [d for d in cal.days if lo <= d <= hi]
    region = cfg.region()
    summary_rows = []
    for t in cfg.lags:
        lag = LagSpec(t)
        points = lagged_correlation_series(
            inp.panel, inp.cases, inp.demo, region, lag, case_dates, cfg.correlation_sample_policy
        )
        write_csv(
            os.path.join(tmp, f"correlations_lag{t}.csv"),
            ["case_date", "pearson", "spearman", "n", "defined"],
            ((p.case_date, p.pearson_r, p.spearman_rs, p.n, p.defined) for p in points),
        )
        s = summarize_correlations(points)
        summary_rows.append(
            (t, s["n_defined"], s["pearson_max"], s["pearson_mean"], s["pearson_median"],
             s["spearman_max"], s["spearman_mean"], s["spearman_median"])
        )
    write_csv(
        os.path.join(tmp, "correlations_summary.csv"),
        ["lag_weeks", "n_defined", "pearson_max", "pearson_mean", "pearson_median",
         "spearman_max", "spearman_mean", "spearman_median"],
        summary_rows,
    )
    return {"case_dates": len(case_dates)}


def run_fit(cfg: RunConfig, inp: Inputs, tmp: str, jobs: int = 1) -> dict:
    partition = cfg.partition()
    cells = scenario_grid(
        inp.panel, inp.cases, inp.demo, partition, cfg.periods, cfg.lags, cfg.er_weighting, jobs
    )
    fit_rows, imp_rows, excl_rows = [], [], []
    exclusion_counts = {}
    for c in cells:
        f = c.fit
        if f is None:
            fit_rows.append((c.period, c.lag.weeks) + (None,) * 9 + (c.status,))
        else:
            fit_rows.append(
                (c.period, c.lag.weeks, f.alpha, *f.beta, f.gamma, f.r_squared, f.n, f.n_excluded, c.status)
            )
            tag = f"{c.period}_lag{c.lag.weeks}"
            d = c.design
            write_csv(
                os.path.join(tmp, f"design_{tag}.csv"),
                ["fips", "er", "severity", "log10_er", "age65", "male", "african_american",
                 "income", "income_std", "log10_severity"],
                zip((fips_str(x) for x in d.fips), d.er, d.severity, d.log10_er, d.age65, d.male,
                    d.african_american, d.income, d.income_std, d.log10_severity),
            )
            for fips, reason in d.exclusions:
                excl_rows.append((c.period, c.lag.weeks, fips_str(fips), reason))
                exclusion_counts[reason] = exclusion_counts.get(reason, 0) + 1
        if c.period != "pre_pandemic":
            imp = c.importance
            if imp is None:
                imp_rows.append((c.period, c.lag.weeks, None, None, None, c.status))
            else:
                imp_rows.append((c.period, c.lag.weeks, imp.r2_full, imp.r2_ir_only, imp.delta, c.status))
    write_csv(
        os.path.join(tmp, "fits.csv"),
        ["period", "lag_weeks", "alpha", "beta_age", "beta_male", "beta_afri", "beta_inc",
         "gamma", "r2", "n", "n_excluded", "status"],
        fit_rows,
    )
    write_csv(
        os.path.join(tmp, "importance.csv"),
        ["period", "lag_weeks", "r2_full", "r2_ir_only", "delta", "status"],
        imp_rows,
    )
    write_csv(os.path.join(tmp, "exclusions.csv"), ["period", "lag_weeks", "fips", "reason"], excl_rows)

    windows = {p: partition.stage_window(p) for p in cfg.periods}
    er_rows, sev_rows = [], []
    for p, w in windows.items():
        grid = external_risk_grid(inp.panel, inp.cases, inp.demo, w, cfg.er_weighting)
        for f in inp.demo.fips:
            er, n = grid.lookup(int(f))
            er_rows.append((fips_str(f), w.start, w.end, er, n))
    anchors = sorted({w.end for w in windows.values()})
    for anchor in anchors:
        for t in cfg.lags:
            for f in inp.demo.fips:
                s = severity(inp.cases, inp.demo, int(f), anchor, LagSpec(t))
                sev_rows.append((fips_str(f), anchor, t, s.severity, s.available))
    write_csv(os.path.join(tmp, "external_risk.csv"), ["fips", "window_start", "window_end", "er", "n_origins"], er_rows)
    write_csv(os.path.join(tmp, "severity.csv"), ["fips", "anchor", "lag_weeks", "severity", "available"], sev_rows)
    return {
        "cells": len(cells),
        "cells_ok": sum(c.ok for c in cells),
        "importance_rows": len(imp_rows),
        "exclusions": dict(sorted(exclusion_counts.items())),
    }


# --------------------------------------------------------------------------
# synthetic worlds


def _synth_world_and_data(cfg: RunConfig, seed_override=None):
    p = dict(cfg.synth)
    known = {"n_counties", "seed", "mode", "epicenter", "gravity", "epi", "loglinear", "stage_multipliers"}
    unknown = set(p) - known
    if unknown:
        raise ConfigError(f"unknown synth keys: {', '.join(sorted(unknown))}")
    seed = int(seed_override if seed_override is not None else p.get("seed", 1))
    mode = p.get("mode", "epidemic")
    if mode not in ("epidemic", "loglinear"):
        raise ConfigError("synth.mode must be 'epidemic' or 'loglinear'")
    cal = cfg.calendar()
    try:
        gp = dict(p.get("gravity", {}))
        if p.get("stage_multipliers", True):
            gp.setdefault("daily_multipliers", tuple(synth.stage_multipliers(cal, cfg.partition()).items()))
        gravity = synth.GravityParams(**gp)
        epi = synth.EpiParams(**p.get("epi", {}))
        world = synth.make_world(
            int(p.get("n_counties", 10)), seed, gravity, epi, bool(p.get("epicenter", True))
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synth parameters: {exc}") from exc
    panel = synth.gravity_flows(world, cal)
    if mode == "epidemic":
        # run past the calendar so lagged severities stay observable
        cases = synth.run_epidemic(world, panel, cal.end_date + dt.timedelta(days=21)).cases()
    else:
        ll = dict(p.get("loglinear", {}))
        period = ll.get("period", AFTER_PANDEMIC)
        window = (
            cfg.partition().stage_window(period) if isinstance(period, str) else DateRange.parse(period)
        )
        try:
            cases = synth.generate_loglinear(
                world,
                panel,
                window,
                LagSpec(int(ll.get("lag", 1))),
                float(ll.get("alpha", 0.8)),
                tuple(ll.get("beta", (0.01, -0.02, 0.015, 0.1))),
                float(ll.get("gamma", -1.0)),
                float(ll.get("noise_sigma", 0.0)),
                seed=seed,
                weighting=cfg.er_weighting,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid loglinear parameters: {exc}") from exc
    echo = {"seed": seed, "mode": mode, "synth": p, "calendar": [cal.start_date.isoformat(), cal.end_date.isoformat()]}
    return world, panel, cases, echo


def run_synth(cfg: RunConfig, out: str, seed=None) -> dict:
    world, panel, cases, echo = _synth_world_and_data(cfg, seed)
    with staged_output(out) as tmp:
        write_trips(panel, os.path.join(tmp, "trips.csv"))
        write_cases(cases, os.path.join(tmp, "cases.csv"))
        write_demographics(world.demographics(), os.path.join(tmp, "demographics.csv"))
        write_json(os.path.join(tmp, "synth_params.json"), json.loads(json.dumps(echo, default=str)))
    return echo


# --------------------------------------------------------------------------


def _input_digests(cfg: RunConfig) -> dict:
    paths = cfg.trip_paths() + [cfg.resolve(cfg.cases), cfg.resolve(cfg.demographics)]
    return {os.path.relpath(p, cfg.base_dir): sha256(p) for p in paths}


def run_report(cfg: RunConfig, out: str, jobs: int = 1) -> dict:
    timings = {}
    t0 = time.perf_counter()
    with staged_output(out, replace_dir=True) as tmp:
        inp = Inputs(cfg)
        write_json(os.path.join(tmp, "validation.json"), inp.report.to_dict())
        timings["load"] = time.perf_counter() - t0
        steps = {}
        for name, fn in (("analyze", run_analyze), ("correlate", run_correlate), ("fit", run_fit)):
            t = time.perf_counter()
            steps[name] = fn(cfg, inp, tmp, jobs) if name == "fit" else fn(cfg, inp, tmp)
            timings[name] = time.perf_counter() - t
        outputs = {name: sha256(os.path.join(tmp, name)) for name in sorted(os.listdir(tmp))}
        manifest = {
            "tool": "countyflow",
            "version": __version__,
            "config": cfg.to_dict(),
            "inputs": _input_digests(cfg),
            "outputs": outputs,
            "counters": {"ingest": inp.report.counts, **steps},
            "timings_seconds": timings,
        }
        write_json(os.path.join(tmp, MANIFEST), manifest)
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="countyflow", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("validate", "load and cross-check the inputs, write validation.json"),
        ("analyze", "trip trends, baselines, weekly changes and region metrics"),
        ("correlate", "daily lagged correlations between region outflow and cases"),
        ("fit", "double-risk regression grid and external-risk importance"),
        ("synth", "write a synthetic input triplet"),
        ("report", "validate, analyze, correlate and fit, then write manifest.json"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--jobs", type=int, default=1, help="worker threads for the fit grid")
        if name == "synth":
            p.add_argument("--seed", type=int, help="generator seed (overrides synth.seed)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        out = os.path.abspath(args.out) if args.out else cfg.resolve(cfg.output)
        if args.command == "synth":
            run_synth(cfg, out, args.seed)
            return EXIT_OK
        if args.command == "validate":
            report = run_validate(cfg, out)
            for issue in report.issues:
                if issue.severity != "info":
                    print(f"{issue.severity}: {issue.code}: {issue.location} {issue.message}", file=sys.stderr)
            return EXIT_OK if report.ok else EXIT_VALIDATION
        if args.command == "report":
            run_report(cfg, out, args.jobs)
            return EXIT_OK
        inp = Inputs(cfg)
        with staged_output(out) as tmp:
            if args.command == "analyze":
                run_analyze(cfg, inp, tmp)
            elif args.command == "correlate":
                run_correlate(cfg, inp, tmp)
            else:
                run_fit(cfg, inp, tmp, args.jobs)
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, KeyError, ArithmeticError, OSError) as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
