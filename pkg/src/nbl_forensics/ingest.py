"""Readers for case time series, indicator tables and the bundled fixtures."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import re
import unicodedata
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from datetime import date, datetime
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import IntegrityError, ParseError, ValidationError
from .nbl_core import GofResult, Variable
from .series_prep import EpidemicSeries

__all__ = [
    "IndicatorRecord",
    "JoinedEntity",
    "JoinReport",
    "AppendixRow",
    "fixtures_dir",
    "parse_jhu_wide",
    "write_jhu_wide",
    "load_jhu",
    "parse_tests_long",
    "attach_tests",
    "parse_indicators",
    "load_appendix_a1",
    "load_appendix_a1_2",
    "appendix_frame",
    "state_frame",
    "normalize_entity",
    "load_aliases",
    "join",
    "verify_fixtures",
    "file_sha256",
]

JHU_FIXED = ["Province/State", "Country/Region", "Lat", "Long"]
REGION_SEP = "|"

_FIXTURE_FILES = ("appendix_a1.csv", "appendix_a1_2.csv", "aliases.csv")


def fixtures_dir() -> Path:
    """Bundled fixture directory, overridable with ``BENFORD_FIXTURES``."""
    env = os.environ.get("BENFORD_FIXTURES")
    return Path(env) if env else Path(__file__).with_name("fixtures")


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@contextmanager
def _text(source):
    if hasattr(source, "read"):
        yield source, getattr(source, "name", None)
    else:
        with open(source, newline="", encoding="utf-8") as fh:
            yield fh, source


# -- JHU CSSE wide format -----------------------------------------------------


def _parse_header_date(text: str, path, col: int) -> date:
    try:
        return datetime.strptime(text.strip(), "%m/%d/%y").date()
    except ValueError:
        raise ParseError(f"unparseable date header {text!r}", path, row=1, column=col + 1) from None


def parse_jhu_wide(source, regional: bool = False) -> list[EpidemicSeries]:
    """Parse one JHU CSSE ``time_series_covid19_*_global.csv`` style file.

    The variable is not encoded in the file; series come back under
    ``confirmed`` and :func:`load_jhu` relabels them. Provinces are summed
    into country totals unless ``regional`` is set, in which case each
    province becomes its own entity ``"Country|Province"``.
    """
    with _text(source) as (fh, path):
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", path) from None
        if [h.strip() for h in header[:4]] != JHU_FIXED:
            raise ParseError(
                f"header must start with {', '.join(JHU_FIXED)}; got {header[:4]}", path, row=1
            )
        dates = [_parse_header_date(h, path, i) for i, h in enumerate(header[4:], start=4)]
        if not dates:
            raise ParseError("no date columns", path, row=1)
        for i, (a, b) in enumerate(zip(dates, dates[1:]), start=5):
            if (b - a).days != 1:
                raise ParseError(
                    f"date columns must be consecutive days, got {a} then {b}", path, row=1, column=i + 1
                )
        totals: OrderedDict[str, np.ndarray] = OrderedDict()
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} cells, found {len(row)}", path, row=rownum
                )
            province, country = row[0].strip(), row[1].strip()
            if not country:
                raise ParseError("missing Country/Region", path, row=rownum, column=2)
            values = np.empty(len(dates), dtype=np.int64)
            for j, cell in enumerate(row[4:]):
                text = cell.strip()
                try:
                    number = float(text) if text else 0.0
                except ValueError:
                    number = math.nan
                if not math.isfinite(number) or number != int(number):
                    raise ParseError(
                        f"cell {text!r} is not an integer count", path, row=rownum, column=header[4 + j]
                    )
                values[j] = int(number)
            key = f"{country}{REGION_SEP}{province}" if regional and province else country
            if key in totals:
                if regional:
                    raise ParseError(f"duplicate entity {key!r}", path, row=rownum)
                totals[key] = totals[key] + values
            else:
                totals[key] = values
    return [
        EpidemicSeries(key, list(dates), {Variable.CONFIRMED: vals.tolist()})
        for key, vals in totals.items()
    ]


def write_jhu_wide(series, target, variable: Variable | str = Variable.CONFIRMED) -> None:
    """Write ``series`` in the wide JHU layout (Lat/Long left blank)."""
    variable = Variable(variable)
    series = list(series)
    if not series:
        raise ValueError("nothing to write")
    dates = series[0].dates
    own = not hasattr(target, "write")
    fh = open(target, "w", newline="", encoding="utf-8") if own else target
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(JHU_FIXED + [f"{d.month}/{d.day}/{d:%y}" for d in dates])
        for s in series:
            if s.dates != dates:
                raise ValueError(f"{s.entity_id}: date range differs from the first series")
            country, _, province = s.entity_id.partition(REGION_SEP)
            w.writerow([province, country, "", ""] + [str(v) for v in s.get(variable)])
    finally:
        if own:
            fh.close()


def load_jhu(confirmed, deaths=None, recovered=None, regional: bool = False) -> list[EpidemicSeries]:
    """Combine the per-variable JHU files into one series per entity."""
    parts = {Variable.CONFIRMED: parse_jhu_wide(confirmed, regional)}
    if deaths is not None:
        parts[Variable.DEATHS] = parse_jhu_wide(deaths, regional)
    if recovered is not None:
        parts[Variable.CURED] = parse_jhu_wide(recovered, regional)
    by_var = {var: {s.entity_id: s for s in lst} for var, lst in parts.items()}
    out = []
    for entity, base in by_var[Variable.CONFIRMED].items():
        cum = {Variable.CONFIRMED: base.get(Variable.CONFIRMED)}
        for var in (Variable.DEATHS, Variable.CURED):
            other = by_var.get(var, {}).get(entity)
            if other is None:
                continue
            if other.dates != base.dates:
                raise ParseError(f"{entity}: {var.value} file covers different dates")
            cum[var] = other.get(Variable.CONFIRMED)
        out.append(EpidemicSeries(entity, list(base.dates), cum))
    return out


def parse_tests_long(source) -> dict[str, dict[date, int]]:
    """Read long-format cumulative tests: columns ``date, entity, cumulative_tests``."""
    out: dict[str, dict[date, int]] = {}
    with _text(source) as (fh, path):
        reader = csv.DictReader(fh)
        need = {"date", "entity", "cumulative_tests"}
        if reader.fieldnames is None or not need <= {f.strip() for f in reader.fieldnames}:
            raise ParseError(f"tests file needs columns {sorted(need)}", path, row=1)
        for rownum, row in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in row.items()}
            try:
                day = date.fromisoformat(row["date"])
            except ValueError:
                raise ParseError(f"bad date {row['date']!r}", path, row=rownum, column="date") from None
            if not row["cumulative_tests"]:
                continue
            try:
                value = int(float(row["cumulative_tests"]))
            except ValueError:
                raise ParseError(
                    f"bad count {row['cumulative_tests']!r}", path, row=rownum, column="cumulative_tests"
                ) from None
            out.setdefault(row["entity"], {})[day] = value
    return out


def attach_tests(series: list[EpidemicSeries], tests: dict[str, dict[date, int]], aliases=None) -> None:
    """Add a ``tests`` variable to each series with matching test data.

    Days without a report carry the last reported value forward (zero
    before the first report).
    """
    aliases = load_aliases() if aliases is None else aliases
    keyed = {normalize_entity(k, aliases): v for k, v in tests.items()}
    for s in series:
        obs = keyed.get(normalize_entity(s.entity_id, aliases))
        if not obs:
            continue
        last, vals = 0, []
        for d in s.dates:
            last = obs.get(d, last)
            vals.append(last)
        s.cumulative[Variable.TESTS] = vals


# -- indicators ---------------------------------------------------------------


@dataclass
class IndicatorRecord:
    entity_id: str
    eiu: float | None = None
    elect: float | None = None
    gvmt: float | None = None
    part: float | None = None
    cult: float | None = None
    libert: float | None = None
    fh_dem: float | None = None
    fh_av: float | None = None
    gdp_per_capita: float | None = None
    he_gdp: float | None = None
    uhc: float | None = None
    population: float | None = None
    won: float | None = None
    senate: float | None = None
    governor: float | None = None

    def validate(self) -> None:
        bad = []

        def check(name, ok):
            v = getattr(self, name)
            if v is not None and not ok(v):
                bad.append(f"{name}={v}")

        for name in ("eiu", "uhc"):
            check(name, lambda v: 0 <= v <= 100)
        for name in ("elect", "gvmt", "part", "cult", "libert"):
            check(name, lambda v: 0 <= v <= 100)
        check("he_gdp", lambda v: 0 < v < 100)
        check("population", lambda v: v > 0)
        check("gdp_per_capita", lambda v: v > 0)
        check("fh_av", lambda v: v >= 0)
        for name in ("fh_dem", "won", "senate", "governor"):
            check(name, lambda v: v in (0, 1))
        if bad:
            raise ValidationError(f"{self.entity_id}: out of range {', '.join(bad)}", [b.split("=")[0] for b in bad])

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_INDICATOR_FIELDS = [f.name for f in fields(IndicatorRecord) if f.name != "entity_id"]
_HEADER_ALIASES = {
    "entity": "entity_id",
    "entity_id": "entity_id",
    "country": "entity_id",
    "state": "entity_id",
    "country/region": "entity_id",
    "gdp": "gdp_per_capita",
    "gdp_per_capita": "gdp_per_capita",
    "pop": "population",
    "eiu_elect": "elect",
    "eiu_gvmt": "gvmt",
    "eiu_part": "part",
    "eiu_cult": "cult",
    "eiu_libert": "libert",
    "won_rep": "won",
    "senate_rep": "senate",
    "governor_rep": "governor",
}
_MISSING = {"", "-", "na", "n/a", "nan", "null"}


def _canonical_header(name: str) -> str:
    key = name.strip().lower().replace(" ", "_").replace(".", "")
    if key in _HEADER_ALIASES:
        return _HEADER_ALIASES[key]
    return key


def parse_indicators(source) -> list[IndicatorRecord]:
    """Read an indicator table; blank or ``-`` cells become ``None``.

    Unrecognised columns are ignored. Every record is range-checked.
    """
    records, seen = [], {}
    with _text(source) as (fh, path):
        reader = csv.reader(fh)
        try:
            header = [_canonical_header(h) for h in next(reader)]
        except StopIteration:
            raise ParseError("empty indicator file", path) from None
        if "entity_id" not in header:
            raise ParseError("indicator file needs an entity/country column", path, row=1)
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, found {len(row)}", path, row=rownum)
            values = {}
            for name, cell in zip(header, row):
                cell = cell.strip()
                if name == "entity_id":
                    values[name] = cell
                elif name in _INDICATOR_FIELDS:
                    if cell.lower() in _MISSING:
                        values[name] = None
                        continue
                    try:
                        values[name] = float(cell)
                    except ValueError:
                        raise ParseError(f"non-numeric value {cell!r}", path, row=rownum, column=name) from None
            entity = values.get("entity_id", "")
            if not entity:
                raise ParseError("missing entity name", path, row=rownum, column="entity_id")
            if entity in seen:
                raise ValidationError(
                    f"duplicate entity {entity!r} on rows {seen[entity]} and {rownum}", ["entity_id"]
                )
            seen[entity] = rownum
            rec = IndicatorRecord(**values)
            rec.validate()
            records.append(rec)
    return records


# -- bundled fixtures -----------------------------------------------------------


def verify_fixtures(directory=None) -> dict[str, str]:
    """Check every fixture file against ``checksums.json``; return the digests."""
    directory = Path(directory) if directory is not None else fixtures_dir()
    manifest = directory / "checksums.json"
    try:
        expected = json.loads(manifest.read_text())
    except FileNotFoundError:
        raise IntegrityError(f"missing checksum manifest {manifest}") from None
    actual = {}
    for name, digest in expected.items():
        p = directory / name
        if not p.exists():
            raise IntegrityError(f"fixture {name} missing from {directory}")
        actual[name] = file_sha256(p)
        if actual[name] != digest:
            raise IntegrityError(f"fixture {name} does not match its checksum")
    return actual


@dataclass
class AppendixRow:
    indicators: IndicatorRecord
    confirmed: GofResult
    deaths: GofResult | None
    days_confirmed: int
    days_deaths: int
    cutoff: date
    total_confirmed: int
    total_deaths: int
    regional_data: bool = False

    @property
    def entity_id(self) -> str:
        return self.indicators.entity_id


def _num(cell: str) -> float | None:
    cell = cell.strip()
    return None if cell.lower() in _MISSING else float(cell)


def _gof_from(row: dict, suffix: str, variable: Variable, n: int) -> GofResult | None:
    vals = [_num(row[f"{s}_{suffix}"]) for s in ("chi", "kuiper", "m", "d")]
    if any(v is None for v in vals):
        return None
    return GofResult(*vals, n=n, position=1, variable=variable)


def _read_fixture(name: str, directory=None) -> list[dict]:
    directory = Path(directory) if directory is not None else fixtures_dir()
    verify_fixtures(directory)
    with open(directory / name, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def load_appendix_a1(include_world: bool = True, directory=None) -> list[AppendixRow]:
    """The transcribed country-level table (185 countries plus ``World``).

    Statistics are rounded to two decimals as printed. Death statistics are
    ``None`` for countries with no death before the cutoff.
    """
    rows = []
    for r in _read_fixture("appendix_a1.csv", directory):
        if not include_world and r["entity"] == "World":
            continue
        pop = _num(r["population_mm"])
        rec = IndicatorRecord(
            entity_id=r["entity"],
            eiu=_num(r["eiu"]),
            gdp_per_capita=_num(r["gdp_per_capita"]),
            he_gdp=_num(r["he_gdp"]),
            uhc=_num(r["uhc"]),
            population=None if pop is None else pop * 1e6,
        )
        days_c, days_d = int(r["days_confirmed"]), int(r["days_deaths"])
        rows.append(
            AppendixRow(
                indicators=rec,
                confirmed=_gof_from(r, "confirmed", Variable.CONFIRMED, days_c),
                deaths=_gof_from(r, "deaths", Variable.DEATHS, days_d),
                days_confirmed=days_c,
                days_deaths=days_d,
                cutoff=date.fromisoformat(r["cutoff"]),
                total_confirmed=int(r["total_confirmed"]),
                total_deaths=int(r["total_deaths"]),
                regional_data=r["regional_data"] == "1",
            )
        )
    return rows


def load_appendix_a1_2(directory=None) -> list[AppendixRow]:
    """The transcribed US state table with party-control dummies."""
    rows = []
    for r in _read_fixture("appendix_a1_2.csv", directory):
        rec = IndicatorRecord(
            entity_id=r["entity"],
            gdp_per_capita=_num(r["gdp_per_capita"]),
            he_gdp=_num(r["he_gdp"]),
            population=_num(r["population_mm"]) * 1e6,
            won=_num(r["won"]),
            senate=_num(r["senate"]),
            governor=_num(r["governor"]),
        )
        days_c, days_d = int(r["days_confirmed"]), int(r["days_deaths"])
        rows.append(
            AppendixRow(
                indicators=rec,
                confirmed=_gof_from(r, "confirmed", Variable.CONFIRMED, days_c),
                deaths=_gof_from(r, "deaths", Variable.DEATHS, days_d),
                days_confirmed=days_c,
                days_deaths=days_d,
                cutoff=date.fromisoformat(r["cutoff"]),
                total_confirmed=int(r["total_confirmed"]),
                total_deaths=int(r["total_deaths"]),
            )
        )
    return rows


_STAT_PREFIX = {"chi_squared": "chi", "kuiper": "kuiper", "m_stat": "m", "d_stat": "d"}


def _rows_to_frame(rows) -> pd.DataFrame:
    records = []
    for row in rows:
        rec = row.indicators.as_dict()
        rec["entity"] = rec.pop("entity_id")
        rec["cutoff"] = row.cutoff
        rec["regional_data"] = row.regional_data
        rec["total_confirmed"] = row.total_confirmed
        rec["total_deaths"] = row.total_deaths
        rec["days_confirmed"] = row.days_confirmed
        rec["days_deaths"] = row.days_deaths
        for tag, gof in (("confirmed", row.confirmed), ("deaths", row.deaths)):
            for attr, prefix in _STAT_PREFIX.items():
                rec[f"{prefix}_{tag}"] = getattr(gof, attr) if gof is not None else np.nan
        records.append(rec)
    df = pd.DataFrame.from_records(records).set_index("entity")
    df = df.astype({c: float for c in _INDICATOR_FIELDS if c in df})
    df["ln_gdp"] = np.log(df["gdp_per_capita"])
    df["ln_pop"] = np.log(df["population"])
    return df.dropna(axis=1, how="all")


def appendix_frame(include_world: bool = False, directory=None) -> pd.DataFrame:
    """Appendix A1 as an analysis table indexed by entity.

    Adds ``ln_gdp`` and ``ln_pop``. The ``World`` row is dropped unless
    requested, since it is an aggregate rather than a cross-sectional unit.
    """
    return _rows_to_frame(load_appendix_a1(include_world=include_world, directory=directory))


def state_frame(directory=None) -> pd.DataFrame:
    return _rows_to_frame(load_appendix_a1_2(directory))


def gof_frame(entities) -> pd.DataFrame:
    """Analysis table built from recomputed joined entities (same columns as
    :func:`appendix_frame`)."""
    rows = []
    for ent in entities:
        gof = ent.gof or {}
        conf = gof.get((Variable.CONFIRMED, 1))
        death = gof.get((Variable.DEATHS, 1))
        rows.append(
            AppendixRow(
                indicators=ent.indicators,
                confirmed=conf,
                deaths=death,
                days_confirmed=ent.days.get(Variable.CONFIRMED, 0),
                days_deaths=ent.days.get(Variable.DEATHS, 0),
                cutoff=ent.cutoff,
                total_confirmed=ent.series.get(Variable.CONFIRMED)[-1] if len(ent.series) else 0,
                total_deaths=(ent.series.get(Variable.DEATHS) or [0])[-1],
            )
        )
    return _rows_to_frame(rows)


# -- joining ------------------------------------------------------------------


_PUNCT = re.compile(r"[^\w\s]")


def _fold(name: str) -> str:
    text = unicodedata.normalize("NFKD", name)
    text = "".join(c for c in text if not unicodedata.combining(c))
    text = text.casefold().replace("&", " and ")
    text = _PUNCT.sub(" ", text)
    return " ".join(text.split())


def load_aliases(path=None) -> dict[str, str]:
    """Folded alias -> folded canonical name."""
    path = Path(path) if path is not None else fixtures_dir() / "aliases.csv"
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    table = {}
    for row in csv.DictReader(io.StringIO("\n".join(lines))):
        table[_fold(row["alias"])] = _fold(row["canonical"])
    return table


def normalize_entity(name: str, aliases: dict[str, str] | None = None) -> str:
    """Case-folded, accent- and punctuation-stripped key, resolved via aliases."""
    key = _fold(name)
    if aliases:
        key = aliases.get(key, key)
    return key


@dataclass
class JoinedEntity:
    series: EpidemicSeries
    indicators: IndicatorRecord
    gof: dict | None = None
    cutoff: date | None = None
    days: dict = field(default_factory=dict)

    @property
    def entity_id(self) -> str:
        return self.series.entity_id


@dataclass
class JoinReport:
    joined: list[JoinedEntity]
    unmatched_series: list[str]
    unmatched_indicators: list[str]


def join(series, indicators, aliases=None) -> JoinReport:
    """Inner-join series and indicator records on normalised entity names."""
    aliases = load_aliases() if aliases is None else aliases
    by_key = {}
    for rec in indicators:
        by_key.setdefault(normalize_entity(rec.entity_id, aliases), rec)
    matched, joined, unmatched_series = set(), [], []
    for s in series:
        key = normalize_entity(s.entity_id, aliases)
        rec = by_key.get(key)
        if rec is None:
            unmatched_series.append(s.entity_id)
            continue
        matched.add(key)
        joined.append(JoinedEntity(series=s, indicators=rec))
    unmatched_ind = [
        rec.entity_id for k, rec in by_key.items() if k not in matched
    ]
    joined.sort(key=lambda j: j.entity_id)
    return JoinReport(joined, sorted(unmatched_series), sorted(unmatched_ind))
