"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run alone with ``python3 -m pytest tests/test_acceptance.py -v`` (the lines
are repeated in the "acceptance criteria" summary section) or as a script.
"""
import csv
import datetime as dt
import filecmp
import json
import os
import sys
import time

import numpy as np
import pytest

from countyflow.cli import main
from countyflow.core import (
    DateRange,
    LagSpec,
    RegionSpec,
    StagePartition,
    build_calendar,
    default_calendar,
    default_partition,
    stage_of,
)
from countyflow.ingest import CaseSeries, DemographicsRecord, DemographicsTable, TripPanel
from countyflow.mobility import region_daily
from countyflow.risk import PERIOD_END, external_risk_day, external_risk_grid, external_risk_period
from countyflow.stats import (
    build_design,
    er_importance,
    fit_double_risk,
    lagged_correlation_series,
    ols_fit,
    pearson,
    scenario_grid,
    spearman,
    summarize_correlations,
)
from countyflow.synth import (
    EpiParams,
    GravityParams,
    generate_loglinear,
    gravity_flows,
    make_world,
    simulate_epidemic,
    stage_multipliers,
)

from oracles import naive_pearson, naive_spearman, normal_equations, triple_loop_er, weekdays

D = dt.date
ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir)
MINI = os.path.join(ROOT, "data", "mini")
GOLDEN = os.path.join(MINI, "golden")

TRUE_ALPHA = 0.8
TRUE_BETA = (0.01, -0.02, 0.015, 0.1)
TRUE_GAMMA = -1.0
GEN_CAL = build_calendar(D(2020, 3, 2), D(2020, 3, 27))
GEN_PERIOD = DateRange(D(2020, 3, 9), D(2020, 3, 20))
# alpha-hat of the first oracle-verified noisy run (3000 counties, seed 42, lag 1)
GOLDEN_ALPHA_NOISY = 0.7944436483382046


def rel_err(a, b):
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


def random_small_world(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 21))
    n_days = int(rng.integers(1, 11))
    fips = sorted(rng.choice(np.arange(1001, 1100), n, replace=False).tolist())
    days = weekdays(D(2020, 3, 2), n_days)
    cal = build_calendar(days[0], days[-1])
    records = {}
    for d in days:
        for i in fips:
            for j in fips:
                if i != j and rng.random() < 0.4:
                    records[(d, i, j)] = 0.0 if rng.random() < 0.1 else float(rng.uniform(0, 1000))
    pop = {f: int(rng.integers(500, 100_000)) for f in fips if rng.random() < 0.85}
    grid_start = D(2020, 3, 1)
    n_grid = (days[-1] - grid_start).days + 1
    raw = {}
    for f in fips:
        if rng.random() < 0.9:
            raw[f] = np.cumsum(rng.integers(0, 50, n_grid) * (rng.random(n_grid) < 0.7)).astype(float)
    cases = CaseSeries.from_dict({f: v.tolist() for f, v in raw.items()}, grid_start, days[-1])
    cum = {(f, grid_start + dt.timedelta(days=c)): float(v[c]) for f, v in raw.items() for c in range(n_grid)}
    demo = DemographicsTable(DemographicsRecord(f, p, 10, 50, 5, 50000) for f, p in pop.items())
    keys = sorted(records)
    panel = TripPanel.from_arrays(
        cal,
        [cal.index(k[0]) for k in keys],
        [k[1] for k in keys],
        [k[2] for k in keys],
        [records[k] for k in keys],
    )
    return cal, panel, cases, demo, records, cum, pop, fips


def test_criterion_1_er_bruteforce(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    checks = 0
    for seed in range(50):
        cal, panel, cases, demo, records, cum, pop, fips = random_small_world(seed)
        window = DateRange(cal.days[0], cal.days[-1])
        grid = external_risk_grid(panel, cases, demo, window)
        grid_end = external_risk_grid(panel, cases, demo, window, PERIOD_END)
        for j in fips:
            for d in cal.days:
                ref = triple_loop_er(records, cum, pop, j, [d])
                worst = max(worst, rel_err(external_risk_day(panel, cases, demo, j, d), ref))
                checks += 1
            ref = triple_loop_er(records, cum, pop, j, cal.days)
            worst = max(worst, rel_err(external_risk_period(panel, cases, demo, j, window).er, ref))
            worst = max(worst, rel_err(grid.lookup(j)[0], ref))
            ref_end = triple_loop_er(records, cum, pop, j, cal.days, weight_day=window.end)
            worst = max(worst, rel_err(grid_end.lookup(j)[0], ref_end))
            checks += 3
    elapsed = time.perf_counter() - t0
    criterion(
        1,
        "ER matches triple-loop evaluation on 50 random worlds",
        worst <= 1e-12 and elapsed < 5,
        f"{checks} comparisons, max rel err {worst:.2e} <= 1e-12, {elapsed:.2f}s < 5s",
    )


def test_criterion_2_correlation_oracles(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    undefined_agree = True
    for _ in range(200):
        n = int(rng.integers(3, 101))
        x = rng.normal(size=n)
        y = 0.5 * x + rng.normal(size=n)
        # inject ties by copying values and rounding a random subset
        for v in (x, y):
            k = int(rng.integers(0, n))
            v[rng.choice(n, k, replace=False)] = v[int(rng.integers(0, n))]
            if rng.random() < 0.5:
                v[:] = np.round(v, 1)
        xs, ys = x.tolist(), y.tolist()
        for fn, ref in ((pearson, naive_pearson), (spearman, naive_spearman)):
            got, want = fn(x, y), ref(xs, ys)
            if got is None or want is None:
                undefined_agree &= got is None and want is None
            else:
                worst = max(worst, abs(got - want))
    r = pearson([1, 2, 3], [1, 3, 2])
    rs = spearman([1, 2, 3, 4], [10, 20, 20, 30])
    hand = abs(r - 0.5) <= 1e-15 and abs(rs - 4.5 / 22.5**0.5) <= 1e-15 and round(rs, 4) == 0.9487
    criterion(
        2,
        "pearson/spearman match naive average-rank oracle",
        worst <= 1e-12 and undefined_agree and hand,
        f"200 vectors, max abs err {worst:.2e} <= 1e-12; r={r!r}, r_s={rs:.6f}",
    )


def test_criterion_3_ols_oracle(criterion):
    rng = np.random.default_rng(3)
    worst = 0.0
    worst_orth = 0.0
    for _ in range(100):
        n = int(rng.integers(10, 201))
        k = int(rng.integers(1, 7))
        X = rng.normal(size=(n, k)) * rng.uniform(0.5, 5, size=k) + rng.normal(size=k)
        y = X @ rng.normal(size=k) + rng.normal() + rng.normal(size=n)
        res = ols_fit(X, y)
        got = np.append(res.coef, res.intercept)
        ref = normal_equations(X, y)
        worst = max(worst, float(np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1e-300))))
        A = np.column_stack([X, np.ones(n)])
        orth = np.abs(A.T @ res.residuals) / (np.linalg.norm(A, axis=0) * np.linalg.norm(y))
        worst_orth = max(worst_orth, float(orth.max()))
    criterion(
        3,
        "OLS matches normal equations, residuals orthogonal",
        worst <= 1e-8 and worst_orth <= 1e-8,
        f"100 instances, max rel coef err {worst:.2e} <= 1e-8, max orthogonality {worst_orth:.2e}",
    )


def test_criterion_4_zero_noise_recovery(criterion):
    t0 = time.perf_counter()
    world = make_world(250, 4)
    panel = gravity_flows(world, GEN_CAL)
    lag = LagSpec(1)
    cases = generate_loglinear(world, panel, GEN_PERIOD, lag, TRUE_ALPHA, TRUE_BETA, TRUE_GAMMA)
    fit = fit_double_risk(build_design(panel, cases, world.demographics(), GEN_PERIOD, lag))
    elapsed = time.perf_counter() - t0
    err = max(
        abs(fit.alpha - TRUE_ALPHA),
        max(abs(b - t) for b, t in zip(fit.beta, TRUE_BETA)),
        abs(fit.gamma - TRUE_GAMMA),
    )
    criterion(
        4,
        "zero-noise generative recovery",
        fit.n >= 200 and err <= 1e-6 and 1 - fit.r_squared <= 1e-9 and elapsed < 2,
        f"n={fit.n}, max coef err {err:.1e} <= 1e-6, 1-R2={1 - fit.r_squared:.1e}, {elapsed:.2f}s < 2s",
    )


def noisy_design(alpha, beta, seed=42, n=3000):
    world = make_world(n, seed)
    panel = gravity_flows(world, GEN_CAL, origins=[world.seed_county])
    lag = LagSpec(1)
    cases = generate_loglinear(world, panel, GEN_PERIOD, lag, alpha, beta, TRUE_GAMMA, noise_sigma=0.1)
    return build_design(panel, cases, world.demographics(), GEN_PERIOD, lag)


def test_criterion_5_noisy_recovery(criterion):
    t0 = time.perf_counter()
    fit = fit_double_risk(noisy_design(TRUE_ALPHA, TRUE_BETA))
    elapsed = time.perf_counter() - t0
    criterion(
        5,
        "noisy generative recovery (sigma=0.1, 3000 counties, seed 42)",
        abs(fit.alpha - TRUE_ALPHA) <= 0.05 and abs(fit.alpha - GOLDEN_ALPHA_NOISY) <= 1e-12 and elapsed < 10,
        f"alpha-hat={fit.alpha!r} (golden {GOLDEN_ALPHA_NOISY!r}), n={fit.n}, {elapsed:.2f}s < 10s",
    )


def test_criterion_6_importance_structure(criterion):
    er_driven = er_importance(noisy_design(TRUE_ALPHA, (0.0, 0.0, 0.0, 0.0)))
    ir_only = er_importance(noisy_design(0.0, TRUE_BETA))
    deltas = [er_driven.delta, ir_only.delta]
    # nestedness over every fitted cell of several full grids
    world = make_world(120, 6)
    panel = gravity_flows(world, GEN_CAL)
    part = StagePartition(GEN_CAL.start_date, GEN_CAL.end_date, (D(2020, 3, 6), D(2020, 3, 11), D(2020, 3, 17)))
    for alpha, beta in ((TRUE_ALPHA, TRUE_BETA), (0.0, TRUE_BETA), (TRUE_ALPHA, (0, 0, 0, 0))):
        cases = generate_loglinear(world, panel, GEN_PERIOD, LagSpec(1), alpha, beta, TRUE_GAMMA, 0.1)
        deltas += [c.importance.delta for c in scenario_grid(panel, cases, world.demographics(), part) if c.ok]
    with open(os.path.join(GOLDEN, "importance.csv")) as fh:
        deltas += [float(r["delta"]) for r in csv.DictReader(fh) if r["status"] == "ok"]
    n_cells = len(deltas)
    criterion(
        6,
        "importance: ER-driven delta >= 0.4, IR-only delta <= 0.05, delta >= 0 everywhere",
        er_driven.delta >= 0.4 and ir_only.delta <= 0.05 and min(deltas) >= 0,
        f"ER-driven {er_driven.delta:.3f}, IR-only {ir_only.delta:.4f}, min delta over {n_cells} fits {min(deltas):.2e}",
    )


def test_criterion_7_epidemic_smoke(criterion):
    t0 = time.perf_counter()
    cal = default_calendar()
    part = default_partition(cal)
    gravity = GravityParams(k=1e-5, daily_multipliers=tuple(stage_multipliers(cal, part).items()))
    epi = EpiParams(beta_internal=0.15, import_coefficient=0.02)
    world = make_world(50, 1, gravity, epi, epicenter=True)
    panel = gravity_flows(world, cal)
    cases = simulate_epidemic(world, panel, cal)
    region = RegionSpec("EPICENTER", {world.seed_county})
    case_dates = [d for d in cal.days if d >= D(2020, 3, 13)]
    means = []
    for t in range(4):
        pts = lagged_correlation_series(panel, cases, world.demographics(), region, LagSpec(t), case_dates)
        means.append(summarize_correlations(pts)["pearson_mean"])
    ranks = {r["outflow"] for _, r in region_daily(panel, region)}
    elapsed = time.perf_counter() - t0
    criterion(
        7,
        "epidemic world: positive mean Pearson at every lag, epicenter outflow rank 1",
        all(m is not None and m > 0 for m in means) and ranks == {1} and elapsed < 30,
        f"mean Pearson by lag {[round(m, 4) for m in means]}, outflow ranks {sorted(ranks)}, {elapsed:.2f}s < 30s",
    )


def _digests(path):
    with open(os.path.join(path, "manifest.json")) as fh:
        m = json.load(fh)
    m.pop("timings_seconds")
    return m


def test_criterion_8_shape_and_determinism(criterion, tmp_path):
    cfg = os.path.join(MINI, "config.json")
    codes = [
        main(["fit", "--config", cfg, "--out", str(tmp_path / "fit")]),
        main(["report", "--config", cfg, "--out", str(tmp_path / "r1")]),
        main(["report", "--config", cfg, "--out", str(tmp_path / "r2"), "--jobs", "4"]),
    ]
    with open(tmp_path / "fit" / "fits.csv") as fh:
        n_fits = sum(1 for _ in fh) - 1
    with open(tmp_path / "fit" / "importance.csv") as fh:
        n_imp = sum(1 for _ in fh) - 1
    same = _digests(tmp_path / "r1") == _digests(tmp_path / "r2")
    criterion(
        8,
        "fit emits 20 scenario and 16 importance rows; report is deterministic",
        codes == [0, 0, 0] and n_fits == 20 and n_imp == 16 and same,
        f"{n_fits} fits, {n_imp} importance rows, manifests equal without timings: {same}",
    )


def test_criterion_9_mini_goldens(criterion, tmp_path):
    out = tmp_path / "run"
    code = main(["report", "--config", os.path.join(MINI, "config.json"), "--out", str(out)])
    names = sorted(os.listdir(GOLDEN))
    _, mismatch, errors = filecmp.cmpfiles(GOLDEN, out, names, shallow=False)
    with open(out / "pct_change_2020-03-23.csv") as fh:
        pct = dict(line.strip().split(",") for line in fh.readlines()[1:])
    hand_pct = pct["09001"] == "-35" and pct["06037"] == "0"
    p = default_partition()
    stages = [stage_of(D(2020, 3, 13), p), stage_of(D(2020, 4, 14), p), stage_of(D(2020, 4, 24), p)]
    hand_stage = stages == ["pre_pandemic", "quarantine_fatigue", "partial_reopening"]
    criterion(
        9,
        "mini dataset matches hand-audited goldens byte for byte",
        code == 0 and len(names) >= 20 and not mismatch and not errors and hand_pct and hand_stage,
        f"{len(names) - len(mismatch) - len(errors)}/{len(names)} golden files identical"
        + (f", differing: {mismatch + errors}" if mismatch or errors else "")
        + f"; week of Mar 23 pct {pct['09001']}%; stages {stages}",
    )


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
