import csv
from datetime import date, timedelta

import numpy as np
import pytest

from nbl_forensics.nbl_core import Variable
from nbl_forensics.series_prep import EpidemicSeries

START = date(2020, 1, 22)


def make_series(confirmed, deaths=None, entity="X", start=START):
    dates = [start + timedelta(days=i) for i in range(len(confirmed))]
    cum = {Variable.CONFIRMED: list(confirmed)}
    if deaths is not None:
        cum[Variable.DEATHS] = list(deaths)
    return EpidemicSeries(entity, dates, cum)


def exponential_cumulative(days, rate, rng=None, start_value=1.0):
    """Integer cumulative counts of a noisy exponential, nondecreasing."""
    t = np.arange(days)
    base = start_value * np.exp(rate * t)
    if rng is not None:
        base = base * np.exp(rng.normal(0, 0.02, days))
    return np.maximum.accumulate(np.floor(base).astype(np.int64)).tolist()


def write_jhu(path, rows, ndays, start=START):
    """rows: list of (province, country, values)."""
    dates = [start + timedelta(days=i) for i in range(ndays)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Province/State", "Country/Region", "Lat", "Long"] + [f"{d.month}/{d.day}/{d:%y}" for d in dates])
        for prov, country, vals in rows:
            w.writerow([prov, country, "0", "0"] + [str(v) for v in vals])
    return path


def epidemic_curve(ndays, start, growth, peak, decay=0.04):
    cum, out = 0, []
    for i in range(ndays):
        t = i - start
        if t < 0:
            new = 0
        elif t <= peak:
            new = int(np.exp(growth * t))
        else:
            new = int(np.exp(growth * peak - decay * (t - peak)))
        cum += new
        out.append(cum)
    return out


@pytest.fixture
def jhu_dir(tmp_path):
    n = 120
    a = epidemic_curve(n, 5, 0.12, 55)
    b1 = epidemic_curve(n, 15, 0.10, 60)
    b2 = epidemic_curve(n, 20, 0.11, 50)
    k = epidemic_curve(n, 3, 0.09, 70)
    rows = [("", "Aland", a), ("North", "Borduria", b1), ("South", "Borduria", b2),
            ("", "Korea, South", k), ("", "Nullland", [0] * n)]
    write_jhu(tmp_path / "time_series_covid19_confirmed_global.csv", rows, n)
    deaths = [(p, c, [v // 40 for v in vals]) for p, c, vals in rows]
    write_jhu(tmp_path / "time_series_covid19_deaths_global.csv", deaths, n)
    (tmp_path / "indicators.csv").write_text(
        "country,eiu,gdp,he_gdp,uhc,population\n"
        "Aland,80,40000,9,80,30000\n"
        "Borduria,30,2000,4,40,5000000\n"
        "South Korea,70,30000,8,85,51000000\n"
        "Nowhere,50,1000,5,50,1000\n"
    )
    return tmp_path


# Acceptance verdict lines, printed once at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
