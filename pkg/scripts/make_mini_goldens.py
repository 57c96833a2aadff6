"""Recompute the mini-dataset results from first principles into data/mini/golden/.

Deliberately independent of the countyflow package: plain loops over CSV
rows, naive rank and correlation formulas, and least squares solved from the
normal equations in exact rational arithmetic. The CLI output is compared to
these files byte for byte (tests/test_acceptance.py).
"""
import csv
import datetime as dt
import json
import math
import os
import statistics
import sys
from fractions import Fraction

HERE = os.path.dirname(os.path.abspath(__file__))
MINI = os.path.join(HERE, os.pardir, "data", "mini")


def fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            return ""
        if v == 0:
            v = 0.0
        return format(v, ".10g")
    if isinstance(v, dt.date):
        return v.isoformat()
    return str(v)


def write(out, name, header, rows):
    with open(os.path.join(out, name), "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(fmt(v) for v in r) + "\n")


def d(s):
    return dt.date.fromisoformat(s)


def day_range(a, b):
    x = a
    while x <= b:
        yield x
        x += dt.timedelta(days=1)


def main(mini=MINI):
    cfg = json.load(open(os.path.join(mini, "config.json")))
    out = os.path.join(mini, "golden")
    os.makedirs(out, exist_ok=True)
    start, end = d(cfg["start"]), d(cfg["end"])
    holidays = {d(h) for h in cfg.get("holidays", [])}
    days = [x for x in day_range(start, end) if x.weekday() < 5 and x not in holidays]
    dayset = set(days)
    cuts = [d(c) for c in cfg["stage_cuts"]]
    region = set(int(f) for f in list(cfg["regions"].values())[0])
    region_name = list(cfg["regions"])[0]

    trips = []  # (date, origin, dest, trips)
    with open(os.path.join(mini, cfg["trips"])) as fh:
        for row in csv.DictReader(fh):
            when = d(row["date"])
            if when in dayset:
                trips.append((when, int(row["origin_fips"]), int(row["destination_fips"]), float(row["trips"])))
    counties = sorted({t[1] for t in trips} | {t[2] for t in trips})

    def flow(day, o, j):
        return sum(t[3] for t in trips if t[0] == day and t[1] == o and t[2] == j)

    def inflow(day, j):
        return sum(t[3] for t in trips if t[0] == day and t[2] == j)

    # trend
    totals = [sum(t[3] for t in trips if t[0] == x) for x in days]
    ma = []
    for i in range(len(days)):
        win = totals[max(0, i - 1): i + 2]
        ma.append(sum(win) / len(win))
    write(out, "trend.csv", ["date", "total", "ma3"], zip(days, totals, ma))

    # baselines
    b0, b1 = d(cfg["baseline_window"][0]), d(cfg["baseline_window"][1])
    bdays = [x for x in days if b0 <= x <= b1]
    baseline = {c: sum(inflow(x, c) for x in bdays) / len(bdays) for c in counties}
    write(out, "baseline.csv", ["fips", "baseline"], ((f"{c:05d}", baseline[c]) for c in counties))

    # weekly percent change
    mondays = sorted({x - dt.timedelta(days=x.weekday()) for x in days})
    summary = []
    for m in mondays:
        wdays = [x for x in days if m <= x <= m + dt.timedelta(days=6)]
        rows = []
        for c in counties:
            mean = sum(inflow(x, c) for x in wdays) / len(wdays)
            rows.append((f"{c:05d}", None if baseline[c] == 0 else 100.0 * (mean - baseline[c]) / baseline[c]))
        write(out, f"pct_change_{m.isoformat()}.csv", ["fips", "pct"], rows)
        defined = [v for _, v in rows if v is not None]
        summary.append((m, len(defined), sum(1 for v in defined if v > 0) / len(defined) if defined else None))
    write(out, "weekly_summary.csv", ["week", "n_defined", "share_increase"], summary)

    # region daily metrics and ranks
    def unit_metrics(day, unit):
        inside = lambda c: c in unit  # noqa: E731
        recs = [t for t in trips if t[0] == day]
        inn = [t for t in recs if not inside(t[1]) and inside(t[2])]
        outg = [t for t in recs if inside(t[1]) and not inside(t[2])]
        return (
            sum(t[3] for t in inn),
            sum(t[3] for t in outg),
            len({t[1] for t in inn if t[3] > 0}),
            len({t[2] for t in outg if t[3] > 0}),
        )

    others = [c for c in counties if c not in region]
    rows = []
    for x in days:
        mine = unit_metrics(x, region)
        theirs = [unit_metrics(x, {c}) for c in others]
        ranks = [1 + sum(1 for t in theirs if t[k] > mine[k]) for k in range(4)]
        rows.append((x, mine[0], mine[1], mine[2], mine[3], *ranks))
    write(
        out,
        "region_daily.csv",
        ["date", "inflow", "outflow", "n_origins", "n_destinations",
         "rank_inflow", "rank_outflow", "rank_norigins", "rank_ndest"],
        rows,
    )

    # top destinations
    tw = cfg.get("top_window") or [cfg["start"], cfg["end"]]
    t0, t1 = d(tw[0]), d(tw[1])
    tot = {}
    for t in trips:
        if t0 <= t[0] <= t1 and t[1] in region and t[2] not in region:
            tot[t[2]] = tot.get(t[2], 0.0) + t[3]
    ranked = sorted(((c, v) for c, v in tot.items() if v > 0), key=lambda cv: (-cv[1], cv[0]))
    k = cfg.get("top_k", 12)
    write(out, "top_destinations.csv", ["rank", "fips", "trips"],
          ((i + 1, f"{c:05d}", v) for i, (c, v) in enumerate(ranked[:k])))

    sw = cfg.get("spread_window") or cfg["baseline_window"]
    s0, s1 = d(sw[0]), d(sw[1])
    sdays = [x for x in days if s0 <= x <= s1]
    counts = [len({t[2] for t in trips if t[0] == x and t[1] in region and t[2] not in region and t[3] > 0})
              for x in sdays]
    mean = sum(counts) / len(counts)
    total_counties = cfg.get("total_county_count", 3143)
    write(out, "destination_spread.csv",
          ["region", "window_start", "window_end", "mean_destinations", "fraction"],
          [(region_name, s0, s1, mean, mean / total_counties)])

    # cases and demographics
    demo = {}
    with open(os.path.join(mini, cfg["demographics"])) as fh:
        for row in csv.DictReader(fh):
            demo[int(row["fips"])] = {
                "pop": int(row["population"]),
                "age": float(row["pct_age65"]),
                "male": float(row["pct_male"]),
                "afri": float(row["pct_african_american"]),
                "inc": float(row["median_income"]),
            }
    raw = {}
    with open(os.path.join(mini, cfg["cases"])) as fh:
        for row in csv.DictReader(fh):
            raw.setdefault(int(row["fips"]), {})[d(row["date"])] = float(row["cumulative_cases"])
    case_end = max(max(v) for v in raw.values())
    case_end = max(case_end, end)

    def cum(c, when):
        series = raw.get(c, {})
        past = [x for x in series if x <= when]
        return series[max(past)] if past else 0.0

    def w(c, when):
        return 1000.0 * cum(c, when) / demo[c]["pop"]

    def er(j, w0, w1):
        total = 0.0
        origins = set()
        for x in days:
            if not w0 <= x <= w1:
                continue
            for t in trips:
                if t[0] == x and t[2] == j and t[1] in demo:
                    contrib = w(t[1], x) * t[3]
                    total += contrib
                    if contrib > 0:
                        origins.add(t[1])
        return total, len(origins)

    one = dt.timedelta(days=1)
    windows = {
        "after_pandemic": (cuts[0] + one, end),
        "behavior_change": (cuts[0] + one, cuts[1]),
        "quarantine_fatigue": (cuts[1] + one, cuts[2]),
        "partial_reopening": (cuts[2] + one, end),
        "pre_pandemic": (start, cuts[0]),
    }
    lags = [0, 1, 2, 3]
    er_rows = []
    er_cache = {}
    for p, (w0, w1) in windows.items():
        for c in sorted(demo):
            v, n = er(c, w0, w1)
            er_cache[(p, c)] = v
            er_rows.append((f"{c:05d}", w0, w1, v, n))
    write(out, "external_risk.csv", ["fips", "window_start", "window_end", "er", "n_origins"], er_rows)

    sev_rows = []
    for anchor in sorted({w1 for _, w1 in windows.values()}):
        for t in lags:
            target = anchor + dt.timedelta(days=7 * t)
            for c in sorted(demo):
                ok = target <= case_end
                sev_rows.append((f"{c:05d}", anchor, t, w(c, target) if ok else None, ok))
    write(out, "severity.csv", ["fips", "anchor", "lag_weeks", "severity", "available"], sev_rows)

    # double-risk fits with exact normal equations
    def lstsq(cols, y):
        n = len(y)
        X = [[Fraction(col[i]) for col in cols] + [Fraction(1)] for i in range(n)]
        Y = [Fraction(v) for v in y]
        p = len(X[0])
        A = [[sum(X[r][a] * X[r][b] for r in range(n)) for b in range(p)] for a in range(p)]
        rhs = [sum(X[r][a] * Y[r] for r in range(n)) for a in range(p)]
        for col in range(p):
            piv = next(r for r in range(col, p) if A[r][col] != 0)
            A[col], A[piv] = A[piv], A[col]
            rhs[col], rhs[piv] = rhs[piv], rhs[col]
            for r in range(p):
                if r != col and A[r][col] != 0:
                    f = A[r][col] / A[col][col]
                    A[r] = [a - f * b for a, b in zip(A[r], A[col])]
                    rhs[r] -= f * rhs[col]
        beta = [rhs[i] / A[i][i] for i in range(p)]
        ybar = sum(Y) / n
        sse = sum((Y[r] - sum(X[r][a] * beta[a] for a in range(p))) ** 2 for r in range(n))
        sst = sum((v - ybar) ** 2 for v in Y)
        return [float(b) for b in beta], float(1 - sse / sst)

    fit_rows, imp_rows = [], []
    for p, (w0, w1) in windows.items():
        for t in lags:
            target = w1 + dt.timedelta(days=7 * t)
            rows, excluded = [], 0
            for c in sorted(set(counties) | set(demo)):
                if c not in demo or target > case_end:
                    excluded += 1
                    continue
                e = er_cache[(p, c)]
                s = w(c, target)
                if e <= 0 or s <= 0:
                    excluded += 1
                    continue
                rows.append((c, e, s))
            if len(rows) < 10:
                fit_rows.append((p, t) + (None,) * 9 + ("insufficient_sample",))
                if p != "pre_pandemic":
                    imp_rows.append((p, t, None, None, None, "insufficient_sample"))
                continue
            inc = [demo[c]["inc"] for c, _, _ in rows]
            m = sum(inc) / len(inc)
            sd = math.sqrt(sum((v - m) ** 2 for v in inc) / len(inc))
            cols = [
                [math.log10(e) for _, e, _ in rows],
                [demo[c]["age"] for c, _, _ in rows],
                [demo[c]["male"] for c, _, _ in rows],
                [demo[c]["afri"] for c, _, _ in rows],
                [(v - m) / sd for v in inc],
            ]
            y = [math.log10(s) for _, _, s in rows]
            beta, r2 = lstsq(cols, y)
            _, r2_ir = lstsq(cols[1:], y)
            fit_rows.append((p, t, *beta[:5], beta[5], r2, len(rows), excluded, "ok"))
            if p != "pre_pandemic":
                imp_rows.append((p, t, r2, r2_ir, r2 - r2_ir, "ok"))
    write(out, "fits.csv",
          ["period", "lag_weeks", "alpha", "beta_age", "beta_male", "beta_afri", "beta_inc",
           "gamma", "r2", "n", "n_excluded", "status"], fit_rows)
    write(out, "importance.csv", ["period", "lag_weeks", "r2_full", "r2_ir_only", "delta", "status"], imp_rows)

    # lagged correlations, naive formulas
    def avg_ranks(v):
        return [sum(1 for u in v if u < x) + (sum(1 for u in v if u == x) + 1) / 2 for x in v]

    def corr(x, y):
        n = len(x)
        mx, my = sum(x) / n, sum(y) / n
        sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
        sxx = sum((a - mx) ** 2 for a in x)
        syy = sum((b - my) ** 2 for b in y)
        if sxx == 0 or syy == 0:
            return None
        return max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))

    dest = sorted({t[2] for t in trips if t[1] in region and t[2] not in region and t[3] > 0 and t[2] in demo})
    c0, c1 = d(cfg["correlation_window"][0]), d(cfg["correlation_window"][1])
    summary = []
    for t in lags:
        rows = []
        for x in [x for x in days if c0 <= x <= c1]:
            back = x - dt.timedelta(days=7 * t)
            prior = [y for y in days if y <= back]
            if not prior or x > case_end:
                rows.append((x, None, None, 0, False))
                continue
            td = max(prior)
            xs = [sum(flow(td, o, c) for o in region) for c in dest]
            ys = [w(c, x) for c in dest]
            if len(dest) < 3:
                rows.append((x, None, None, len(dest), False))
                continue
            pr = corr(xs, ys)
            sr = corr(avg_ranks(xs), avg_ranks(ys))
            rows.append((x, pr, sr, len(dest), pr is not None and sr is not None))
        write(out, f"correlations_lag{t}.csv", ["case_date", "pearson", "spearman", "n", "defined"], rows)
        ps = [r[1] for r in rows if r[1] is not None]
        ss = [r[2] for r in rows if r[2] is not None]

        def stats3(v):
            return (max(v), sum(v) / len(v), statistics.median(v)) if v else (None, None, None)

        summary.append((t, max(len(ps), len(ss)), *stats3(ps), *stats3(ss)))
    write(out, "correlations_summary.csv",
          ["lag_weeks", "n_defined", "pearson_max", "pearson_mean", "pearson_median",
           "spearman_max", "spearman_mean", "spearman_median"], summary)


if __name__ == "__main__":
    main(*sys.argv[1:])
