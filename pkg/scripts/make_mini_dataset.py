"""Write the bundled 10-county mini dataset to data/mini/.

Every trip count is a base flow (a multiple of 20) times a weekly percentage,
so all values are integers and easy to check by hand. The week of Mar 23
runs at 65% of the Mar 2-13 baseline for most destinations, which is the
-35% hand case.
"""
import datetime as dt
import json
import os

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, "data", "mini")

START = dt.date(2020, 3, 2)
END = dt.date(2020, 4, 10)

# weekly percentage of the base flow, Mondays Mar 2 .. Apr 6
DEFAULT_WEEKS = [100, 100, 80, 65, 70, 80]
DEST_WEEKS = {
    "06037": [100, 100, 100, 100, 100, 100],  # Los Angeles: flat, 0% change
    "36059": [100, 120, 80, 65, 70, 80],  # Nassau: +20% in the week of Mar 9
}

BASE_FLOWS = [
    ("36061", "36047", 400),
    ("36047", "36061", 360),
    ("36061", "36059", 200),
    ("36047", "36059", 100),
    ("36061", "36119", 160),
    ("36061", "36103", 80),
    ("36047", "36103", 60),
    ("36061", "34017", 140),
    ("36047", "34017", 40),
    ("36061", "34003", 100),
    ("36061", "09001", 60),
    ("36061", "42101", 40),
    ("36061", "06037", 20),
    ("36059", "36061", 180),
    ("36119", "36061", 120),
    ("36103", "36047", 60),
    ("34017", "36061", 100),
    ("34003", "36061", 80),
    ("34017", "34003", 240),
    ("34003", "34017", 220),
    ("09001", "36119", 60),
    ("42101", "34017", 40),
    ("06037", "42101", 20),
    ("36059", "36103", 120),
    ("36103", "36059", 100),
]

# fips, population, %65+, %male, %African-American, median income
DEMOGRAPHICS = [
    ("06037", 10039107, 13.5, 49.3, 9.0, 68044),
    ("09001", 943332, 16.3, 48.6, 11.8, 95645),
    ("34003", 932202, 17.2, 48.5, 6.3, 101144),
    ("34017", 672391, 11.6, 50.1, 11.7, 70897),
    ("36047", 2559903, 13.9, 47.2, 33.8, 60231),
    ("36059", 1356924, 17.9, 48.6, 12.3, 116304),
    ("36061", 1628706, 16.5, 47.1, 17.8, 86553),
    ("36103", 1476601, 17.2, 49.3, 8.7, 105362),
    ("36119", 967506, 17.5, 48.1, 15.7, 96610),
    ("42101", 1584064, 13.6, 47.3, 43.6, 45927),
]

# cumulative cases = scale * k**2 with k = days since onset (0 before onset)
CASE_CURVES = {
    "06037": (dt.date(2020, 3, 4), 2),
    "09001": (dt.date(2020, 3, 8), 3),
    "34003": (dt.date(2020, 3, 5), 5),
    "34017": (dt.date(2020, 3, 6), 4),
    "36047": (dt.date(2020, 3, 2), 20),
    "36059": (dt.date(2020, 3, 3), 9),
    "36061": (dt.date(2020, 3, 1), 15),
    "36103": (dt.date(2020, 3, 5), 7),
    "36119": (dt.date(2020, 3, 2), 11),
    "42101": (dt.date(2020, 3, 9), 3),
}
CASES_START = dt.date(2020, 3, 1)
CASES_END = dt.date(2020, 5, 1)
GAP = ("42101", dt.date(2020, 3, 20))  # omitted row, forward filled on load
REVISION = ("06037", dt.date(2020, 3, 25), -1)  # one below the previous day


def weekdays():
    d = START
    while d <= END:
        if d.weekday() < 5:
            yield d
        d += dt.timedelta(days=1)


def main():
    os.makedirs(ROOT, exist_ok=True)
    with open(os.path.join(ROOT, "trips.csv"), "w", newline="") as fh:
        fh.write("date,origin_fips,destination_fips,trips\n")
        for d in weekdays():
            week = (d - START).days // 7
            for o, j, base in BASE_FLOWS:
                pct = DEST_WEEKS.get(j, DEFAULT_WEEKS)[week]
                fh.write(f"{d.isoformat()},{o},{j},{base * pct // 100}\n")
        # weekend row, dropped by the calendar filter
        fh.write("2020-03-07,36061,36059,999\n")

    with open(os.path.join(ROOT, "cases.csv"), "w", newline="") as fh:
        fh.write("date,fips,cumulative_cases\n")
        for fips, (onset, scale) in sorted(CASE_CURVES.items()):
            d = CASES_START
            while d <= CASES_END:
                if (fips, d) != GAP:
                    k = max(0, (d - onset).days)
                    value = scale * k * k
                    if (fips, d) == REVISION[:2]:
                        value = scale * (k - 1) * (k - 1) + REVISION[2]
                    fh.write(f"{d.isoformat()},{fips},{value}\n")
                d += dt.timedelta(days=1)

    with open(os.path.join(ROOT, "demographics.csv"), "w", newline="") as fh:
        fh.write("fips,population,pct_age65,pct_male,pct_african_american,median_income\n")
        for row in DEMOGRAPHICS:
            fh.write(",".join(str(v) for v in row) + "\n")

    config = {
        "trips": "trips.csv",
        "cases": "cases.csv",
        "demographics": "demographics.csv",
        "output": "out",
        "start": START.isoformat(),
        "end": END.isoformat(),
        "holidays": [],
        "stage_cuts": ["2020-03-13", "2020-03-27", "2020-04-03"],
        "regions": {"NYC": [36061, 36047]},
        "baseline_window": ["2020-03-02", "2020-03-13"],
        "correlation_window": ["2020-03-09", "2020-04-10"],
        "top_k": 5,
        "spread_window": ["2020-03-02", "2020-03-06"],
    }
    with open(os.path.join(ROOT, "config.json"), "w") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")


if __name__ == "__main__":
    main()
